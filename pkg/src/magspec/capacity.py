"""Wiener capacity of cell-union sets by a pinned discrete Laplace solve.

Two conventions are supported.  In the plane the capacity of F inside Q_d is
taken relative to the open concentric square of edge 2d (Dirichlet data on its
boundary).  In space it is taken relative to the whole of R^3, truncated to a
box of side ``box_factor * d`` on a geometrically graded mesh and closed with
the far-field condition du/dn + (x.n) u / |x|^2 = 0, which is exact for the
monopole and removes most of the truncation bias of a Dirichlet box.
An explicitly given ambient cube always uses Dirichlet data on its boundary.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _mesh
from .errors import ConvergenceError, DomainError, GridMismatchError, SolverError
from .lattice import CompactSetMask, Cube, Grid, GridFunction

__all__ = [
    "CompactSetMask",
    "CapacityResult",
    "CapacitySolver",
    "CapMeasureReport",
    "SubadditivityReport",
    "wiener_capacity",
    "nodal_capacity",
    "cube_capacity",
    "check_cap_measure",
    "subadditivity_check",
    "cap_measure_constant",
    "sharp_isocapacitary_constant",
    "clear_cache",
    "cache_info",
]

SOLVE_TOL = 1e-10
DEFAULT_BOX_FACTOR = 8.0
DEFAULT_GRADING = 1.2
_DIRECT_LIMIT = 120_000


@dataclass(frozen=True)
class CapacityResult:
    value: float
    minimizer: GridFunction
    relative_to: str
    residual: float = 0.0

    def to_record(self) -> dict:
        return {"value": self.value, "relative_to": self.relative_to, "residual": self.residual}


def _extend_axis(core: np.ndarray, lo: float, hi: float, q: float) -> np.ndarray:
    """Append nodes outward from ``core`` to reach ``lo`` and ``hi``.

    Steps start at the core spacing and grow by the factor ``q``; the last
    step on each side is stretched so the end point is hit exactly.
    """
    h = core[1] - core[0]

    def steps(gap: float) -> list[float]:
        out, s, total = [], h, 0.0
        if gap <= 1e-12 * h:
            return out
        while total + s < gap - 1e-9 * h:
            out.append(s)
            total += s
            s *= q
        if out and gap - total < 0.5 * out[-1]:
            out[-1] += gap - total
        else:
            out.append(gap - total)
        return out

    left = core[0] - np.cumsum(steps(core[0] - lo))
    right = core[-1] + np.cumsum(steps(hi - core[-1]))
    if left.size:
        left[-1] = lo
    if right.size:
        right[-1] = hi
    return np.concatenate([left[::-1], core, right])


def _key(grid: Grid, ambient: Cube | None, far_field: bool, box_factor: float, grading: float) -> tuple:
    amb = None if ambient is None else (ambient.center, ambient.edge)
    return (grid.key, amb, far_field, box_factor, grading)


class CapacitySolver:
    """Prepared ambient mesh for repeated capacity solves on one grid.

    ``solve`` accepts any set of pinned nodes of the inner grid; cell masks are
    converted to their corner nodes.
    """

    def __init__(
        self,
        grid: Grid,
        ambient: Cube | None = None,
        far_field: bool | None = None,
        box_factor: float = DEFAULT_BOX_FACTOR,
        grading: float = DEFAULT_GRADING,
    ):
        self.grid = grid
        n = grid.dim
        cube = grid.cube
        if ambient is None:
            if n == 2:
                ambient = cube.concentric(2.0)
                far_field = False if far_field is None else far_field
                q = 1.0
            else:
                if box_factor < 8.0:
                    raise DomainError("truncation box must have side >= 8d")
                ambient = cube.concentric(box_factor)
                far_field = True if far_field is None else far_field
                q = grading
        else:
            if ambient.dim != n:
                raise GridMismatchError("ambient dimension differs from grid")
            if np.any(ambient.lower > cube.lower + 1e-12) or np.any(ambient.upper < cube.upper - 1e-12):
                raise DomainError("ambient cube must contain the grid cube")
            far_field = bool(far_field)
            q = 1.0 if n == 2 else grading
        self.ambient = ambient
        self.far_field = far_field
        self.axes = tuple(
            _extend_axis(ax, ambient.lower[k], ambient.upper[k], q) for k, ax in enumerate(grid.axes)
        )
        self.shape = tuple(len(a) for a in self.axes)
        offsets = [int(np.argmin(np.abs(a - ax[0]))) for a, ax in zip(self.axes, grid.axes)]
        idx = np.arange(int(np.prod(self.shape))).reshape(self.shape)
        self.core = idx[tuple(slice(o, o + grid.m) for o in offsets)]
        K = _mesh.stiffness(self.axes)
        boundary = np.zeros(self.shape, dtype=bool)
        if far_field:
            K = K + sp.diags(_mesh.robin_far_field(self.axes, np.asarray(ambient.center)).ravel())
        else:
            for k in range(n):
                sl = [slice(None)] * n
                sl[k] = 0
                boundary[tuple(sl)] = True
                sl[k] = -1
                boundary[tuple(sl)] = True
        self.K = K.tocsr()
        self.boundary = boundary.ravel()
        if far_field:
            self.relative_to = f"R^{n} (box side {ambient.edge:g}, far-field closure)"
        else:
            self.relative_to = f"open cube centre {ambient.center} edge {ambient.edge:g}"
        self._green: np.ndarray | None = None
        self._lock = threading.Lock()

    @property
    def n_ambient(self) -> int:
        return self.K.shape[0]

    def solve(self, pins: np.ndarray) -> tuple[float, np.ndarray, float]:
        """Capacity, inner-grid minimizer and relative residual for pinned nodes."""
        pins = np.asarray(pins, dtype=bool).reshape(self.grid.shape)
        if not pins.any():
            return 0.0, np.zeros(self.grid.shape), 0.0
        P = np.zeros(self.n_ambient, dtype=bool)
        P[self.core[pins]] = True
        U = ~P & ~self.boundary
        iu, ip = np.flatnonzero(U), np.flatnonzero(P)
        A_uu = self.K[iu][:, iu].tocsr()
        b = -np.asarray(self.K[iu][:, ip].sum(axis=1)).ravel()
        if iu.size == 0:
            x = np.zeros(0)
        elif iu.size <= _DIRECT_LIMIT and self.grid.dim == 2:
            try:
                x = spla.spsolve(A_uu.tocsc(), b)
            except RuntimeError as exc:
                raise SolverError(str(exc)) from exc
        else:
            x = _amg_solve(A_uu, b)
        if not np.all(np.isfinite(x)):
            raise SolverError("capacity system is singular")
        bn = np.linalg.norm(b)
        res = float(np.linalg.norm(A_uu @ x - b) / bn) if bn > 0 else 0.0
        if res > SOLVE_TOL:
            raise ConvergenceError("capacity solve", res)
        u = np.zeros(self.n_ambient)
        u[P] = 1.0
        u[iu] = x
        value = float(u @ (self.K @ u))
        inner = np.clip(u[self.core], 0.0, 1.0)
        return value, inner, res

    def green(self) -> np.ndarray:
        """Inverse of the ambient matrix restricted to the inner-grid nodes.

        Capacity of any pin set P then equals 1^T (G_PP)^{-1} 1, which makes
        exhaustive enumeration cheap on small grids.
        """
        with self._lock:
            if self._green is None:
                free = np.flatnonzero(~self.boundary)
                pos = -np.ones(self.n_ambient, dtype=int)
                pos[free] = np.arange(free.size)
                cols = pos[self.core.ravel()]
                if np.any(cols < 0):
                    raise DomainError("grid touches the ambient boundary")
                lu = spla.splu(self.K[free][:, free].tocsc())
                rhs = np.zeros((free.size, cols.size))
                rhs[cols, np.arange(cols.size)] = 1.0
                G = lu.solve(rhs)[cols]
                self._green = (G + G.T) / 2
            return self._green

    def capacity_from_green(self, pins: np.ndarray) -> float:
        p = np.flatnonzero(np.asarray(pins, dtype=bool).ravel())
        if p.size == 0:
            return 0.0
        G = self.green()[np.ix_(p, p)]
        return float(np.sum(np.linalg.solve(G, np.ones(p.size))))


def _amg_solve(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    import pyamg

    # the stiffness matrix is an M-matrix, where classical AMG beats aggregation
    ml = pyamg.ruge_stuben_solver(A, max_coarse=500)
    residuals: list[float] = []
    x = ml.solve(b, tol=SOLVE_TOL * 0.1, accel="cg", maxiter=500, residuals=residuals)
    return x


# ------------------------------------------------------------------- memo

_SOLVERS: dict[tuple, CapacitySolver] = {}
_VALUES: dict[tuple, CapacityResult] = {}
_LOCK = threading.Lock()
_MAX_SOLVERS = 8


def _solver(grid, ambient, far_field, box_factor, grading) -> CapacitySolver:
    key = _key(grid, ambient, far_field, box_factor, grading)
    with _LOCK:
        s = _SOLVERS.get(key)
    if s is None:
        s = CapacitySolver(grid, ambient, far_field, box_factor, grading)
        with _LOCK:
            if len(_SOLVERS) >= _MAX_SOLVERS:
                _SOLVERS.pop(next(iter(_SOLVERS)))
            s = _SOLVERS.setdefault(key, s)
    return s


def clear_cache() -> None:
    with _LOCK:
        _SOLVERS.clear()
        _VALUES.clear()


def cache_info() -> dict:
    with _LOCK:
        return {"solvers": len(_SOLVERS), "values": len(_VALUES)}


def nodal_capacity(
    grid: Grid,
    pins: np.ndarray,
    ambient: Cube | None = None,
    far_field: bool | None = None,
    box_factor: float = DEFAULT_BOX_FACTOR,
) -> CapacityResult:
    """Capacity of an arbitrary node set of ``grid`` (memoised)."""
    pins = np.asarray(pins, dtype=bool).reshape(grid.shape)
    s = _solver(grid, ambient, far_field, box_factor, DEFAULT_GRADING)
    key = (_key(grid, ambient, far_field, box_factor, DEFAULT_GRADING), np.packbits(pins.ravel()).tobytes())
    with _LOCK:
        hit = _VALUES.get(key)
    if hit is not None:
        return hit
    value, u, res = s.solve(pins)
    out = CapacityResult(value, GridFunction(grid, u), s.relative_to, res)
    with _LOCK:
        _VALUES[key] = out
    return out


def wiener_capacity(
    F: CompactSetMask,
    ambient: Cube | None = None,
    far_field: bool | None = None,
    box_factor: float = DEFAULT_BOX_FACTOR,
) -> CapacityResult:
    """Capacity of the closed cell union ``F``.

    ``ambient=None`` selects the dimension's convention (see module docs).
    The minimizer is returned on the grid of ``F`` and satisfies 0 <= u <= 1
    with u = 1 on F.
    """
    return nodal_capacity(F.grid, F.node_mask(), ambient, far_field, box_factor)


def cube_capacity(grid: Grid, **kw) -> float:
    """Capacity of the full cube of ``grid`` under the default convention."""
    return wiener_capacity(CompactSetMask.full(grid), **kw).value


# ---------------------------------------------------- cap-measure inequalities


def _sphere_area(n: int) -> float:
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def cap_measure_constant(n: int) -> float:
    """Constant of the lower bound cap(F) >= c_n * bound(mes F).

    For n >= 3 this is omega^{-2/n} n^{(2-n)/n} / (n-2) with omega the area of
    the unit sphere; for n = 2 it is 1/(4 pi).
    """
    if n == 2:
        return 1.0 / (4 * math.pi)
    w = _sphere_area(n)
    return w ** (-2 / n) * n ** ((2 - n) / n) / (n - 2)


def sharp_isocapacitary_constant(n: int) -> float:
    """Best constant K in cap(F) >= K (mes F)^{(n-2)/n}, attained by balls."""
    if n < 3:
        raise DomainError("defined for n >= 3")
    w = _sphere_area(n)
    return (n - 2) * w ** (2 / n) * n ** ((n - 2) / n)


@dataclass(frozen=True)
class CapMeasureReport:
    capacity: float
    measure: float
    bound: float
    constant: float
    passed: bool
    sharp_bound: float | None = None

    @property
    def ratio(self) -> float:
        return self.capacity / self.bound if self.bound > 0 else math.inf


def check_cap_measure(F: CompactSetMask, ambient: Cube | None = None, slack: float = 0.0) -> CapMeasureReport:
    """Compare cap(F) with the measure lower bound of the dimension.

    In the plane the bound reads c_2 / log(d0^2 / mes F) with d0 = 2d.
    """
    if F.is_empty:
        raise DomainError("F must be nonempty")
    n = F.grid.dim
    cap = wiener_capacity(F, ambient).value
    mes = F.measure
    c = cap_measure_constant(n)
    sharp = None
    if n == 2:
        d0 = 2 * F.grid.cube.edge
        bound = c / math.log(d0 * d0 / mes)
    else:
        bound = c * mes ** ((n - 2) / n)
        sharp = sharp_isocapacitary_constant(n) * mes ** ((n - 2) / n)
    return CapMeasureReport(cap, mes, bound, c, cap >= bound - slack, sharp)


@dataclass(frozen=True)
class SubadditivityReport:
    union: float
    parts: tuple[float, float]
    passed: bool

    @property
    def slack(self) -> float:
        return sum(self.parts) - self.union


def subadditivity_check(
    F1: CompactSetMask, F2: CompactSetMask, ambient: Cube | None = None, rel_tol: float = 1e-8
) -> SubadditivityReport:
    c1 = wiener_capacity(F1, ambient).value
    c2 = wiener_capacity(F2, ambient).value
    cu = wiener_capacity(F1.union(F2), ambient).value
    return SubadditivityReport(cu, (c1, c2), cu <= (c1 + c2) * (1 + rel_tol) + 1e-300)
