"""Cube-tiling scans for discreteness and strict positivity.

The limits "as the cube goes to infinity" are replaced by shell-wise minima
over a finite tiling: shell s holds the cubes [k d, (k+1) d]^n whose index
satisfies max_j max(k_j, -k_j - 1) = s.  A verdict is a trend statistic over
those minima, not a proof.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError
from .formats import dumps
from .lattice import CompactSetMask, Cube, DomainMask, Grid, MagneticPotential, ScalarPotential
from .ledger import ConstantsLedger, default_ledger
from .molchanov import MolchanovQuery, default_refine, molchanov_greedy
from .spectral import dirichlet_bottom, local_energy, neumann_bottom
from . import capacity as _cap

__all__ = [
    "FieldRule",
    "f_n",
    "AdmissiblePair",
    "PairReport",
    "validate_pair",
    "CubeRecord",
    "ShellSummary",
    "CriterionReport",
    "tiling",
    "scan_discreteness",
    "check_necessary",
    "check_sufficient",
    "PositivityReport",
    "positivity_check",
    "DomainReport",
    "domain_geometry_check",
    "default_gamma_constant",
    "default_workers",
]

FieldRule = Callable[..., Sequence[np.ndarray]]

GAMMA_CONSTANT_FALLBACK = 0.5


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("MAGSPEC_WORKERS", "1")))
    except ValueError:
        return 1


def default_gamma_constant(ledger: ConstantsLedger | None = None, n: int = 2) -> float:
    """Constant in front of gamma: the calibrated cutoff threshold if recorded."""
    ledger = ledger if ledger is not None else default_ledger()
    return ledger.get(f"cutoff_threshold_n{n}", GAMMA_CONSTANT_FALLBACK)


# ------------------------------------------------------------ admissible pairs


def f_n(t, n: int):
    """Largest admissible f: (1+t)^{(2-n)/2} for n >= 3, 1/(1+log(1+t)) for n = 2."""
    t = np.asarray(t, dtype=float)
    if n == 2:
        return 1.0 / (1.0 + np.log1p(t))
    return (1.0 + t) ** ((2 - n) / 2)


@dataclass(frozen=True, eq=False)
class AdmissiblePair:
    f: Callable[[float], float]
    g: Callable[[float], float]
    n: int
    label: str = ""

    @classmethod
    def standard(cls, n: int) -> "AdmissiblePair":
        """f = f_n and g(d) = d^2."""
        return cls(lambda t: f_n(t, n), lambda d: d * d, n, "f_n, d^2")

    def gamma(self, c_n: float, mu0_tilde: float, d: float) -> float:
        return float(c_n * self.f(mu0_tilde) * d * d / self.g(d))


@dataclass(frozen=True)
class PairReport:
    valid: bool
    violations: tuple[str, ...]
    first_failure: str | None
    precision_profile: bool


def validate_pair(
    pair: AdmissiblePair,
    t_samples: np.ndarray | None = None,
    d_samples: np.ndarray | None = None,
    rtol: float = 1e-12,
) -> PairReport:
    """Check positivity, monotonicity and f <= f_n of f, and the g constraints.

    A profile whose ratio f/f_n keeps growing along the lattice is flagged
    as a precision profile (it beats f_n by an unbounded factor).
    """
    t = np.concatenate([[0.0], np.logspace(-3, 8, 56)]) if t_samples is None else np.asarray(t_samples, float)
    d = np.logspace(-6, 0, 31) if d_samples is None else np.asarray(d_samples, float)
    problems: list[str] = []
    ft = np.array([float(pair.f(x)) for x in t])
    fn = f_n(t, pair.n)
    for i, (x, v) in enumerate(zip(t, ft)):
        if not v > 0:
            problems.append(f"f({x:g}) = {v:g} is not positive")
        if v > fn[i] * (1 + rtol):
            problems.append(f"f({x:g}) = {v:g} exceeds f_n = {fn[i]:g}")
        if i and v > ft[i - 1] * (1 + rtol):
            problems.append(f"f increases between t = {t[i-1]:g} and {x:g}")
    gd = np.array([float(pair.g(x)) for x in d])
    for x, v in zip(d, gd):
        if not v > 0:
            problems.append(f"g({x:g}) = {v:g} is not positive")
        elif x * x / v > 1 + rtol:
            problems.append(f"g({x:g})^-1 d^2 = {x * x / v:g} exceeds 1")
    if gd.size > 1 and not gd[0] < 1e-3 * gd[-1]:
        problems.append(f"g({d[0]:g}) = {gd[0]:g} does not tend to 0")
    ratio = ft / fn
    tail = ratio[len(ratio) // 2 :]
    precision = bool(np.all(np.diff(tail) >= 0) and tail[-1] > 2 * tail[0])
    if precision:
        problems.append("precision profile: f / f_n grows without bound")
    return PairReport(not problems, tuple(problems), problems[0] if problems else None, precision)


# ------------------------------------------------------------------- tiling


def tiling(d: float, shells: int, n: int) -> list[tuple[Cube, int]]:
    """Cubes [k d, (k+1) d]^n with shell index below ``shells``, shell by shell."""
    out = []
    rng = range(-shells, shells)
    for k in itertools.product(rng, repeat=n):
        s = max(max(kj, -kj - 1) for kj in k)
        out.append((Cube.from_corner(np.asarray(k, float) * d, d), s))
    out.sort(key=lambda cs: (cs[1], cs[0].center))
    return out


@dataclass(frozen=True)
class CubeRecord:
    center: tuple[float, ...]
    d: float
    shell: int
    mu0: float
    mu0_tilde: float
    gamma: float
    M: float
    E: float
    value: float
    infeasible: bool = False
    lam: float | None = None
    mu: float | None = None


@dataclass(frozen=True)
class ShellSummary:
    d: float
    minima: tuple[float, ...]
    slope: float
    threshold: float
    verdict_b: bool
    verdict_c: bool


@dataclass
class CriterionReport:
    kind: str
    records: list[CubeRecord]
    summaries: list[ShellSummary]
    params: dict = field(default_factory=dict)

    @property
    def verdict_b(self) -> bool:
        return all(s.verdict_b for s in self.summaries)

    @property
    def verdict_c(self) -> bool:
        return all(s.verdict_c for s in self.summaries)

    def to_json(self) -> str:
        body = {
            "kind": self.kind,
            "params": self.params,
            "verdict_b": self.verdict_b,
            "verdict_c": self.verdict_c,
            "note": "finite-radius trend proxy for a limit as the cube goes to infinity",
            "summaries": [asdict(s) for s in self.summaries],
            "records": [asdict(r) for r in self.records],
        }
        return dumps(body)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["d", "shell", "center", "mu0", "mu0_tilde", "gamma", "M", "E", "value", "infeasible", "shell_min"])
        mins = {(s.d, i): v for s in self.summaries for i, v in enumerate(s.minima)}
        for r in self.records:
            w.writerow([
                repr(r.d), r.shell, " ".join(repr(c) for c in r.center), repr(r.mu0), repr(r.mu0_tilde),
                repr(r.gamma), repr(r.M), repr(r.E), repr(r.value), int(r.infeasible), repr(mins[(r.d, r.shell)]),
            ])
        return buf.getvalue()


def _slope(y: Sequence[float]) -> float:
    y = np.asarray(y, float)
    if y.size < 2 or not np.all(np.isfinite(y)):
        return math.inf if np.any(np.isinf(y)) else 0.0
    x = np.arange(y.size, dtype=float)
    return float(np.polyfit(x, y, 1)[0])


def _summarise(d: float, recs: list[CubeRecord], shells: int, threshold: float, growth: float) -> ShellSummary:
    minima = tuple(min(r.value for r in recs if r.shell == s) for s in range(shells))
    slope = _slope(minima)
    verdict_b = slope > 0 and minima[-1] > growth * minima[0]
    verdict_c = minima[-1] >= threshold
    return ShellSummary(d, minima, slope, threshold, verdict_b, verdict_c)


def _cube_work(
    cube: Cube,
    shell: int,
    a: FieldRule | None,
    V: ScalarPotential,
    gamma_of: Callable[[float, float], float],
    m: int,
    cells: int,
    omega: DomainMask | None,
    spectra: bool,
) -> CubeRecord:
    n, d = cube.dim, cube.edge
    grid = Grid(cube, m)
    A = MagneticPotential.from_field(grid, a) if a is not None else None
    le = local_energy(grid, A, omega)
    gamma = gamma_of(le.mu0_tilde, d)
    refine = default_refine(cells)
    mandatory = omega.complement(Grid(cube, cells * refine + 1)) if omega is not None else None
    if mandatory is not None and mandatory.is_empty:
        mandatory = None
    res = molchanov_greedy(MolchanovQuery(cube, V, gamma, cells, refine, mandatory=mandatory))
    value = le.mu0 + res.value / d**n
    lam = mu = None
    if spectra:
        lam = dirichlet_bottom(grid, A, V, omega).value
        mu = neumann_bottom(grid, A, V, omega).value
    return CubeRecord(
        cube.center, d, shell, le.mu0, le.mu0_tilde, gamma, res.value, le.mu0 + d**-2,
        value, res.infeasible, lam, mu,
    )


def _scan(
    kind: str,
    a: FieldRule | None,
    V: ScalarPotential,
    gamma_of: Callable[[float, float], float],
    d_list: Sequence[float],
    shells: int,
    n: int,
    threshold_of: Callable[[float], float],
    m: int,
    cells: int,
    omega: DomainMask | None,
    spectra: bool,
    workers: int | None,
    growth: float,
    params: dict,
) -> CriterionReport:
    if shells < 2:
        raise DomainError("need at least two shells for a trend")
    workers = workers or default_workers()
    jobs = [(cube, s) for d in d_list for cube, s in tiling(d, shells, n)]

    def run(job):
        return _cube_work(job[0], job[1], a, V, gamma_of, m, cells, omega, spectra)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(j) for j in jobs]
    summaries = [
        _summarise(d, [r for r in records if r.d == d], shells, threshold_of(d), growth) for d in d_list
    ]
    return CriterionReport(kind, records, summaries, params)


def scan_discreteness(
    a: FieldRule | None,
    V: ScalarPotential,
    pair: AdmissiblePair,
    c_n: float | None = None,
    d_list: Sequence[float] = (1.0,),
    shells: int = 5,
    mask: DomainMask | None = None,
    m: int = 9,
    cells: int = 2,
    spectra: bool = False,
    workers: int | None = None,
    growth: float = 2.0,
    ledger: ConstantsLedger | None = None,
) -> CriterionReport:
    """Shell minima of mu0 + d^{-n} M_gamma with gamma = c_n f(mu0 d^2) d^2 / g(d).

    Verdict (b): positive least-squares slope and last shell above
    ``growth`` times the first.  Verdict (c): last shell at least 1/g(d).
    """
    rep = validate_pair(pair)
    if not rep.valid:
        raise DomainError("pair is not admissible: " + "; ".join(rep.violations))
    if c_n is None:
        c_n = default_gamma_constant(ledger, pair.n)
    params = {"pair": pair.label, "c_n": c_n, "d_list": list(d_list), "shells": shells, "m": m, "cells": cells}
    return _scan(
        "discreteness", a, V, lambda t, d: pair.gamma(c_n, t, d), d_list, shells, pair.n,
        lambda d: 1.0 / pair.g(d), m, cells, mask, spectra, workers, growth, params,
    )


def check_necessary(
    a: FieldRule | None,
    V: ScalarPotential,
    d: float,
    shells: int,
    n: int,
    claimed: CriterionReport | None = None,
    m: int = 9,
    workers: int | None = None,
    growth: float = 2.0,
) -> CriterionReport:
    """The gamma = 0 scan: mu0 + d^{-n} times the plain integral of V.

    With ``claimed``, ``params["inconsistent"]`` records whether a positive
    discreteness verdict coexists with a failing necessary condition.
    """
    rep = _scan(
        "necessary", a, V, lambda t, dd: 0.0, [d], shells, n, lambda dd: math.inf, m, 2, None,
        False, workers, growth, {"d": d, "shells": shells, "m": m},
    )
    if claimed is not None:
        rep.params["inconsistent"] = bool(claimed.verdict_b and not rep.verdict_b)
    return rep


def check_sufficient(
    a: FieldRule | None,
    V: ScalarPotential,
    c: float,
    d_list: Sequence[float],
    shells: int,
    n: int,
    m: int = 9,
    cells: int = 2,
    workers: int | None = None,
    growth: float = 2.0,
) -> CriterionReport:
    """Scan with the fixed capacity fraction ``c``; verdict is the growth trend."""
    if not 0 <= c < 1:
        raise DomainError("c must lie in [0, 1)")
    return _scan(
        "sufficient", a, V, lambda t, d: c, d_list, shells, n, lambda d: math.inf, m, cells, None,
        False, workers, growth, {"c": c, "d_list": list(d_list), "shells": shells, "m": m},
    )


# --------------------------------------------------------------- positivity


@dataclass(frozen=True)
class PositivityReport:
    variant: str
    passed: bool
    localization_passed: bool
    worst_margin: float
    records: tuple[dict, ...]

    @property
    def agree(self) -> bool:
        return self.passed == self.localization_passed


def positivity_check(
    a: FieldRule | None,
    V: ScalarPotential,
    variant: str,
    params: dict,
    n: int = 2,
    samples: int = 8,
    extent: float = 10.0,
    seed: int = 0,
    m: int = 9,
    cells: int = 4,
    rtol: float = 1e-12,
) -> PositivityReport:
    """Evaluate one of the positivity conditions over randomly placed cubes.

    Variants "b"/"c" use cubes of the fixed edge ``params["d"]`` and the bound
    1/d1^2; "d"/"e" draw edges from (d2, 2 d2] and use c_tilde/d^2.  "c" and
    "e" take the capacity fraction from ``params["c_n"]``.  Each cube is also
    checked against the localization bound mu(Q_d) >= 1/d1^2.
    """
    if variant not in ("b", "c", "d", "e"):
        raise DomainError(f"unknown positivity variant {variant!r}")
    rng = np.random.default_rng(seed)
    c = params["c_n"] if variant in ("c", "e") else params["c"]
    d1 = params.get("d1")
    recs = []
    ok = loc_ok = True
    worst = math.inf
    for _ in range(samples):
        if variant in ("b", "c"):
            d = float(params["d"])
            bound = 1.0 / d1**2
        else:
            d = float(params["d2"]) * (1 + rng.random())
            bound = float(params["c_tilde"]) / d**2
        center = tuple(rng.uniform(-extent, extent, n))
        cube = Cube(center, d)
        grid = Grid(cube, m)
        A = MagneticPotential.from_field(grid, a) if a is not None else None
        mu0 = local_energy(grid, A).mu0
        M = molchanov_greedy(MolchanovQuery(cube, V, c, cells)).value
        value = mu0 + M / d**n
        mu = neumann_bottom(grid, A, V).value
        passed = value >= bound * (1 - rtol)
        loc = d1 is None or mu >= (1 / d1**2) * (1 - 1e-8)
        ok &= passed
        loc_ok &= loc
        worst = min(worst, value - bound)
        recs.append({"center": center, "d": d, "mu0": mu0, "M": M, "value": value, "bound": bound, "mu": mu})
    return PositivityReport(variant, bool(ok), bool(loc_ok), worst, tuple(recs))


# ---------------------------------------------------------- domain geometry


@dataclass(frozen=True)
class DomainReport:
    d: float
    shell_fraction: tuple[float, ...]
    holds: bool
    records: tuple[dict, ...]


def domain_geometry_check(
    omega: DomainMask,
    g: Callable[[float], float],
    c_n: float,
    d_list: Sequence[float],
    shells: int,
    n: int,
    m: int = 9,
) -> list[DomainReport]:
    """Whether every cube of the outer shell has a non-negligible complement.

    For each tiling cube the capacity of Q_d minus Omega is compared with
    gamma cap(Q_d), gamma = c_n d^2 / g(d).  ``shell_fraction`` lists the
    fraction of cubes per shell meeting the test.
    """
    out = []
    for d in d_list:
        gamma = c_n * d * d / g(d)
        recs = []
        for cube, s in tiling(d, shells, n):
            grid = Grid(cube, m)
            comp = omega.complement(grid)
            ref = Grid(Cube.unit(n, d), m)
            cap_c = _cap.wiener_capacity(CompactSetMask(ref, comp.cells)).value if not comp.is_empty else 0.0
            cap_q = _cap.cube_capacity(ref)
            recs.append({"center": cube.center, "shell": s, "cap": cap_c, "threshold": gamma * cap_q,
                         "ok": cap_c > gamma * cap_q})
        frac = tuple(float(np.mean([r["ok"] for r in recs if r["shell"] == s])) for s in range(shells))
        out.append(DomainReport(d, frac, frac[-1] == 1.0, tuple(recs)))
    return out
