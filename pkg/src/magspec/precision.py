"""Half-space construction showing that the exponent in f_n cannot be improved.

A magnetic operator lives on one side of the hyperplane {x1 + ... + xn = 0}
and an electric one on the other.  Axis-parallel cubes that poke into the
electric side by a corner tetrahedron of height ``delta`` see a field-free
pocket, which caps the local magnetic energy at C delta^-2, while the pocket
itself is small in capacity.  With a profile f that beats f_n by a factor
h(t) -> infinity, the pocket is negligible, so the Molchanov term vanishes
and the left side of the criterion stays bounded along cubes sliding off to
infinity, although the spectrum is discrete.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import capacity as _cap
from .criteria import AdmissiblePair, f_n, validate_pair
from .errors import DomainError
from .lattice import CompactSetMask, Cube, Grid, MagneticPotential, ScalarPotential, integrate
from .ledger import ConstantsLedger, run_id
from .molchanov import negligibility_test
from .spectral import dirichlet_bottom, local_energy

__all__ = [
    "HalfspaceOperator",
    "PrecisionProfile",
    "corner_cube",
    "tetrahedron_mask",
    "tetrahedron_capacity",
    "TetrahedronSweep",
    "tetrahedron_sweep",
    "fit_tetrahedron_constants",
    "Mu0Scan",
    "mu0_delta_scan",
    "SequencePoint",
    "PrecisionReport",
    "demonstrate_precision",
]


DEFAULT_BASE_FIELD = 100.0


def _side(x) -> np.ndarray:
    return sum(x)


def _bottle_field(n: int, base: float):
    """a = alpha(x) nu with nu the unit normal of the hyperplane.

    alpha = u (base + |x|^2) with u = (x1 - x2)/sqrt 2, so the field has
    strength at least base + |x|^2.  Having no tangential component on the
    hyperplane, the potential can be cut off there without creating a flux
    sheet.
    """
    inv = 1.0 / math.sqrt(n)

    def a(*x):
        u = (x[0] - x[1]) / math.sqrt(2.0)
        comp = inv * u * (base + sum(xi * xi for xi in x))
        return tuple(comp for _ in range(n))

    return a


def _oscillator(*x):
    return sum(xi * xi for xi in x)


@dataclass(frozen=True, eq=False)
class HalfspaceOperator:
    """Magnetic part ``a_tilde`` on {sum x < 0}, potential ``V_tilde`` on {sum x >= 0}.

    Points on the hyperplane carry the potential and no field.
    """

    dim: int
    a_tilde: Callable[..., tuple]
    V_tilde: Callable[..., np.ndarray]
    label: str = ""

    @classmethod
    def default(cls, dim: int, base: float = DEFAULT_BASE_FIELD) -> "HalfspaceOperator":
        return cls(dim, _bottle_field(dim, base), _oscillator, "bottle | oscillator")

    def a_field(self, *x) -> tuple:
        minus = _side(x) < 0
        return tuple(np.where(minus, c, 0.0) for c in self.a_tilde(*x))

    def V(self, *x) -> np.ndarray:
        return np.where(_side(x) >= 0, self.V_tilde(*x), 0.0)

    def magnetic(self, grid: Grid) -> MagneticPotential:
        if grid.dim != self.dim:
            raise DomainError("grid dimension differs from the operator's")
        return MagneticPotential.from_field(grid, self.a_field)

    def potential(self) -> ScalarPotential:
        return ScalarPotential(func=self.V, label=f"half-space {self.label}")


def build_halfspace(a_tilde, V_tilde, dim: int, label: str = "") -> HalfspaceOperator:
    return HalfspaceOperator(dim, a_tilde, V_tilde, label)


__all__.append("build_halfspace")


@dataclass(frozen=True, eq=False)
class PrecisionProfile:
    """f(t) = min(ceiling, f_n(t) h(t)) with h increasing and unbounded.

    The ceiling keeps f below 1 (and non-increasing) where f_n h would
    exceed it.
    """

    h: Callable[[float], float]
    n: int
    ceiling: float = 0.5
    label: str = ""

    @classmethod
    def logarithmic(cls, n: int) -> "PrecisionProfile":
        """h(t) = 1 + log(1 + t); in the plane f_2 h = 1, so f is the ceiling itself."""
        return cls(lambda t: 1.0 + math.log1p(t), n, label="1+log(1+t)")

    def f(self, t: float) -> float:
        return float(min(self.ceiling, float(f_n(t, self.n)) * self.h(t)))

    def h_is_growing(self, t: Sequence[float] | None = None) -> bool:
        t = np.logspace(-3, 8, 56) if t is None else np.asarray(t, float)
        v = np.array([self.h(x) for x in t])
        return bool(np.all(np.diff(v) >= 0) and v[-1] > 2 * v[0])

    def pair(self) -> AdmissiblePair:
        return AdmissiblePair(self.f, lambda d: d * d, self.n, f"profile {self.label}")


# ------------------------------------------------------------------ geometry


def corner_cube(d: float, delta: float, n: int, shift: float = 0.0) -> Cube:
    """Cube of edge d whose top corner has coordinate sum ``delta``.

    ``shift`` slides it along e1 - e2, parallel to the hyperplane.
    """
    if not 0 < delta <= d:
        raise DomainError(f"need 0 < delta <= d, got delta={delta}, d={d}")
    upper = np.full(n, delta / n)
    upper[0] += shift
    upper[1] -= shift
    return Cube.from_corner(tuple(upper - d), d)


def tetrahedron_mask(grid: Grid) -> CompactSetMask:
    """Cells meeting the closed half-space {sum x >= 0} (covers the potential's support)."""
    tol = 1e-12 * grid.cube.edge
    return CompactSetMask.from_predicate(grid, lambda *x: _side(x) >= -tol, rule="outer")


def _default_cap_m(n: int) -> int:
    return 65 if n == 2 else 41


def tetrahedron_capacity(d: float, delta: float, n: int, m: int | None = None) -> float:
    """Capacity of the corner tetrahedron of height delta inside Q_d.

    The tetrahedron is represented by the grid nodes lying in it; in the plane
    capacity is taken relative to the doubled concentric cube.
    """
    m = m or _default_cap_m(n)
    grid = Grid(corner_cube(d, delta, n), m)
    pins = _side(grid.coords()) >= -1e-12 * d
    if not pins.any():
        return 0.0
    return _cap.nodal_capacity(grid, pins).value


@dataclass
class TetrahedronSweep:
    n: int
    d: float
    deltas: np.ndarray
    caps: np.ndarray
    slope: float
    intercept: float
    max_rel_residual: float

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "cap", "log_delta", "log_cap", "inv_cap", "log_2d_over_delta"])
        for x, c in zip(self.deltas, self.caps):
            w.writerow([repr(float(x)), repr(float(c)), repr(math.log(x)), repr(math.log(c)),
                        repr(1.0 / c), repr(math.log(2 * self.d / x))])
        return buf.getvalue()


def tetrahedron_sweep(d: float, n: int, deltas: Sequence[float] | None = None, m: int | None = None) -> TetrahedronSweep:
    """Capacities over a decade of delta and the scaling fit.

    For n >= 3 the fit is log cap against log delta (slope n - 2 expected);
    in the plane it is 1/cap against log(2d/delta).  Default deltas are
    whole multiples of the grid step so the tetrahedron is node-aligned.
    """
    m = m or _default_cap_m(n)
    h = d / (m - 1)
    if deltas is None:
        k_max = m - 1
        ks = np.unique(np.round(np.geomspace(k_max / 10, k_max, 6)).astype(int))
        deltas = ks * h
    deltas = np.asarray(deltas, float)
    caps = np.array([tetrahedron_capacity(d, x, n, m) for x in deltas])
    if n >= 3:
        X, Y = np.log(deltas), np.log(caps)
    else:
        X, Y = np.log(2 * d / deltas), 1.0 / caps
    slope, intercept = np.polyfit(X, Y, 1)
    fit = slope * X + intercept
    resid = float(np.max(np.abs(fit - Y) / np.abs(Y)))
    return TetrahedronSweep(n, d, deltas, caps, float(slope), float(intercept), resid)


def fit_tetrahedron_constants(ledger: ConstantsLedger, n: int, d: float = 1.0, m: int | None = None,
                              margin: float = 1.25) -> TetrahedronSweep:
    """Record two-sided constants for the tetrahedron capacity scaling.

    The scale is delta^(n-2) for n >= 3 and 1/log(2d/delta) in the plane;
    the lower constant is the smallest ratio cap/scale divided by ``margin``
    and the upper one the largest ratio times ``margin``.
    """
    sweep = tetrahedron_sweep(d, n, m=m)
    if n >= 3:
        scale = sweep.deltas ** (n - 2)
    else:
        scale = 1.0 / np.log(2 * d / sweep.deltas)
    ratio = sweep.caps / scale
    rid = run_id("tetrahedron", 0, n=n, d=d, m=m or _default_cap_m(n))
    ledger.set(f"tetra_c1_n{n}", float(ratio.min()) / margin, rid, f"lower capacity constant, min ratio / {margin}")
    ledger.set(f"tetra_C2_n{n}", float(ratio.max()) * margin, rid, f"upper capacity constant, max ratio * {margin}")
    ledger.set(f"tetra_slope_n{n}", sweep.slope, rid, "scaling-fit slope over a decade of delta")
    return sweep


# ------------------------------------------------------------ local energy


@dataclass
class Mu0Scan:
    d: float
    deltas: np.ndarray
    mu0: np.ndarray
    C_fit: float
    exponent: float
    fit_residual: float

    @property
    def products(self) -> np.ndarray:
        return self.mu0 * self.deltas**2

    @property
    def bounded(self) -> bool:
        """mu0 delta^2 does not blow up as delta shrinks (fitted exponent >= -0.25)."""
        return bool(np.all(np.isfinite(self.mu0)) and self.exponent >= -0.25)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delta", "mu0", "mu0_delta2"])
        for x, v, p in zip(self.deltas, self.mu0, self.products):
            w.writerow([repr(float(x)), repr(float(v)), repr(float(p))])
        return buf.getvalue()


def _default_eig_m(n: int) -> int:
    return 33 if n == 2 else 17


def mu0_delta_scan(
    op: HalfspaceOperator,
    d: float,
    deltas: Sequence[float],
    m: int | None = None,
    shift: float = 0.0,
) -> Mu0Scan:
    """mu0 of corner cubes over delta; fits mu0 delta^2 ~ C delta^exponent.

    C_fit is the largest observed product, the bound constant on this sweep.
    """
    m = m or _default_eig_m(op.dim)
    deltas = np.asarray(deltas, float)
    mu = []
    for x in deltas:
        grid = Grid(corner_cube(d, x, op.dim, shift), m)
        mu.append(local_energy(grid, op.magnetic(grid)).mu0)
    mu = np.array(mu)
    prod = mu * deltas**2
    if np.all(prod > 0) and deltas.size > 1:
        X, Y = np.log(deltas), np.log(prod)
        k, b = np.polyfit(X, Y, 1)
        res = float(np.max(np.abs(k * X + b - Y)))
    else:
        k, res = 0.0, 0.0
    return Mu0Scan(d, deltas, mu, float(np.max(prod)), float(k), res)


# ------------------------------------------------------------ demonstration


@dataclass
class SequencePoint:
    shift: float
    cube: Cube
    mu0: float
    gamma: float
    cap_witness: float
    cap_cube: float
    negligible: bool
    molchanov: float
    lam: float

    @property
    def criterion_lhs(self) -> float:
        return self.mu0 + self.molchanov / self.cube.edge**self.cube.dim

    def to_record(self) -> dict:
        return {
            "shift": self.shift,
            "center": list(self.cube.center),
            "mu0": self.mu0,
            "gamma": self.gamma,
            "cap_witness": self.cap_witness,
            "cap_cube": self.cap_cube,
            "negligible": self.negligible,
            "molchanov": self.molchanov,
            "criterion_lhs": self.criterion_lhs,
            "lambda": self.lam,
        }


@dataclass
class PrecisionReport:
    n: int
    d: float
    c_n: float
    profile: str
    delta: float | None
    tried: list[float]
    points: list[SequencePoint] = field(default_factory=list)

    @property
    def found(self) -> bool:
        return self.delta is not None

    @property
    def lhs_bounded(self) -> bool:
        """The criterion's left side shows no growth trend along the sequence."""
        y = np.array([p.criterion_lhs for p in self.points])
        if y.size < 2:
            return False
        slope = np.polyfit(np.arange(y.size), y, 1)[0]
        return not (slope > 0 and y[-1] > 2 * y[0])

    @property
    def lambda_increasing(self) -> bool:
        lam = np.array([p.lam for p in self.points])
        return bool(lam.size > 1 and np.all(np.diff(lam) > 0))

    @property
    def condition_fails(self) -> bool:
        """Negligible pockets and a bounded criterion while the spectrum stays discrete."""
        return self.found and all(p.negligible for p in self.points) and self.lhs_bounded and self.lambda_increasing

    @property
    def mu0_spread(self) -> float:
        mu = np.array([p.mu0 for p in self.points])
        return float((mu.max() - mu.min()) / mu.max()) if mu.size else 0.0

    def to_record(self) -> dict:
        return {
            "n": self.n,
            "d": self.d,
            "c_n": self.c_n,
            "profile": self.profile,
            "delta": self.delta,
            "tried": self.tried,
            "found": self.found,
            "lhs_bounded": self.lhs_bounded if self.points else None,
            "lambda_increasing": self.lambda_increasing,
            "condition_fails": self.condition_fails,
            "mu0_spread": self.mu0_spread,
            "points": [p.to_record() for p in self.points],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["shift", "mu0", "gamma", "cap_witness", "cap_cube", "negligible", "molchanov", "criterion_lhs", "lambda"]
        w.writerow(cols)
        for p in self.points:
            r = p.to_record()
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        return buf.getvalue()


def _sequence_point(op, profile, d, delta, shift, c_n, m_eig, m_cap) -> SequencePoint:
    n = op.dim
    cube = corner_cube(d, delta, n, shift)
    eg = Grid(cube, m_eig)
    a = op.magnetic(eg)
    mu0 = local_energy(eg, a).mu0
    gamma = min(c_n * profile.f(mu0 * d * d), 1.0 - 1e-12)
    F = tetrahedron_mask(Grid(cube, m_cap))
    # capacity is translation invariant: measure on an origin-centred copy so the memo is shared
    ref = CompactSetMask(Grid(Cube.unit(n, d), m_cap), F.cells)
    neg = negligibility_test(ref, gamma)
    cap_f = _cap.wiener_capacity(ref).value
    cap_q = _cap.cube_capacity(ref.grid)
    # F covers every cell where the potential lives, so nothing is left once it is removed
    M = integrate(op.potential(), F.complement_in_cube()) if neg else math.nan
    lam = dirichlet_bottom(eg, a, op.potential()).value
    return SequencePoint(shift, cube, mu0, gamma, cap_f, cap_q, neg, M, lam)


def demonstrate_precision(
    profile: PrecisionProfile,
    d: float = 1.0,
    c_n: float = 1.0,
    op: HalfspaceOperator | None = None,
    deltas: Sequence[float] | None = None,
    shells: int = 5,
    spacing: float | None = None,
    start: float | None = None,
    m_eig: int | None = None,
    m_cap: int | None = None,
) -> PrecisionReport:
    """Search delta (largest first) for which every cube of a sliding sequence has a negligible pocket.

    The sequence has ``shells`` cubes at shifts start + k * spacing along
    e1 - e2.  Raises DomainError when the profile is admissible (then there
    is nothing to demonstrate); an unsuccessful search returns a report with
    ``found`` False.
    """
    n = profile.n
    rep = validate_pair(profile.pair())
    if not rep.precision_profile or not profile.h_is_growing():
        raise DomainError("profile does not beat f_n by an unbounded factor; demonstration refused")
    op = op or HalfspaceOperator.default(n)
    if op.dim != n:
        raise DomainError("operator and profile dimensions differ")
    m_eig = m_eig or _default_eig_m(n)
    m_cap = m_cap or (33 if n == 2 else 17)
    h = d / (m_eig - 1)
    spacing = spacing if spacing is not None else d
    start = start if start is not None else 2 * d
    if deltas is None:
        deltas = [d * f for f in (1.0, 0.5, 0.25, 0.125)]
    tried: list[float] = []
    for delta in sorted(deltas, reverse=True):
        tried.append(float(delta))
        pts = []
        for k in range(shells):
            shift = round((start + k * spacing) / h) * h
            p = _sequence_point(op, profile, d, float(delta), shift, c_n, m_eig, m_cap)
            pts.append(p)
            if not p.negligible:
                break
        if len(pts) == shells and all(p.negligible for p in pts):
            return PrecisionReport(n, d, c_n, profile.label, float(delta), tried, pts)
    return PrecisionReport(n, d, c_n, profile.label, None, tried)
