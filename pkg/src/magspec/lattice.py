"""Cubes, node grids and the discrete magnetic quadratic form.

Magnetic potentials are stored as link phases (line integrals of ``a`` along
grid edges), so gauge invariance and the diamagnetic inequality hold exactly
on the grid, not only in the limit h -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import _mesh
from .errors import DomainError, GridMismatchError, InvalidResolutionError

__all__ = [
    "Cube",
    "Grid",
    "GridFunction",
    "MagneticPotential",
    "ScalarPotential",
    "DomainMask",
    "CompactSetMask",
    "rasterize",
    "magnetic_gradient",
    "quadratic_form",
    "l2_norm_sq",
    "integrate",
    "integrate_sq",
    "assemble",
]


@dataclass(frozen=True)
class Cube:
    """Closed axis-parallel cube with the given center and edge length."""

    center: tuple[float, ...]
    edge: float

    def __post_init__(self):
        center = tuple(float(c) for c in np.atleast_1d(self.center))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "edge", float(self.edge))
        if len(center) not in (2, 3):
            raise DomainError(f"dimension must be 2 or 3, got {len(center)}")
        if not self.edge > 0:
            raise DomainError(f"edge must be positive, got {self.edge}")

    @classmethod
    def unit(cls, dim: int, edge: float = 1.0) -> "Cube":
        """Cube centred at the origin."""
        return cls((0.0,) * dim, edge)

    @classmethod
    def from_corner(cls, lower: Sequence[float], edge: float) -> "Cube":
        lower = np.asarray(lower, dtype=float)
        return cls(tuple(lower + edge / 2), edge)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - self.edge / 2

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + self.edge / 2

    @property
    def volume(self) -> float:
        return self.edge**self.dim

    def concentric(self, factor: float) -> "Cube":
        return Cube(self.center, self.edge * factor)

    def scaled(self, s: float) -> "Cube":
        """Image under x -> s x (centre scales too)."""
        return Cube(tuple(s * c for c in self.center), s * self.edge)


@dataclass(frozen=True)
class Grid:
    """Uniform node lattice on a closed cube, ``m`` nodes per edge."""

    cube: Cube
    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 3:
            raise InvalidResolutionError(f"need at least 3 nodes per edge, got {self.m}")

    @property
    def dim(self) -> int:
        return self.cube.dim

    @property
    def h(self) -> float:
        return self.cube.edge / (self.m - 1)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.m,) * self.dim

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return (self.m - 1,) * self.dim

    @property
    def n_nodes(self) -> int:
        return self.m**self.dim

    @property
    def n_cells(self) -> int:
        return (self.m - 1) ** self.dim

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        lo, hi = self.cube.lower, self.cube.upper
        return tuple(np.linspace(lo[k], hi[k], self.m) for k in range(self.dim))

    def coords(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def cell_centers(self) -> tuple[np.ndarray, ...]:
        mids = [(a[:-1] + a[1:]) / 2 for a in self.axes]
        return tuple(np.meshgrid(*mids, indexing="ij"))

    def refine(self, factor: int) -> "Grid":
        return Grid(self.cube, (self.m - 1) * factor + 1)

    @property
    def key(self) -> tuple:
        return (self.cube.center, self.cube.edge, self.m)

    def boundary_nodes(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[k] = 0
            mask[tuple(sl)] = True
            sl[k] = -1
            mask[tuple(sl)] = True
        return mask

    def node_volumes(self) -> np.ndarray:
        return _mesh.node_volumes(self.axes)


def rasterize(cube: Cube, m: int) -> Grid:
    """Uniform grid with ``m`` nodes per edge covering the closed cube."""
    return Grid(cube, m)


def _check_same(grid_a: Grid, grid_b: Grid):
    if grid_a.key != grid_b.key:
        raise GridMismatchError(f"grid mismatch: {grid_a.key} vs {grid_b.key}")


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex (or real) samples at the nodes of a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.grid.shape:
            if v.size != self.grid.n_nodes:
                raise GridMismatchError(f"expected {self.grid.n_nodes} values, got {v.size}")
            v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise DomainError("grid function has non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_callable(cls, grid: Grid, f: Callable[..., np.ndarray]) -> "GridFunction":
        vals = np.broadcast_to(f(*grid.coords()), grid.shape)
        return cls(grid, np.array(vals))

    @classmethod
    def constant(cls, grid: Grid, c: complex = 1.0) -> "GridFunction":
        return cls(grid, np.full(grid.shape, c))

    def modulus(self) -> "GridFunction":
        return GridFunction(self.grid, np.abs(self.values))

    def mean(self) -> complex:
        return complex(np.sum(self.grid.node_volumes() * self.values) / self.grid.cube.volume)

    def __mul__(self, other) -> "GridFunction":
        if isinstance(other, GridFunction):
            _check_same(self.grid, other.grid)
            other = other.values
        return GridFunction(self.grid, self.values * other)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class MagneticPotential:
    """Vector potential as link phases; ``phases[k]`` covers links along axis k.

    The phase of link i -> i + e_k is the line integral of ``a_k`` along it;
    traversing the link backwards negates the phase.
    """

    grid: Grid
    phases: tuple[np.ndarray, ...]

    def __post_init__(self):
        phases = tuple(np.asarray(p, dtype=float) for p in self.phases)
        if len(phases) != self.grid.dim:
            raise GridMismatchError("one phase array per axis required")
        for k, p in enumerate(phases):
            expected = list(self.grid.shape)
            expected[k] -= 1
            if p.shape != tuple(expected):
                raise GridMismatchError(f"axis {k}: phase shape {p.shape} != {tuple(expected)}")
            if not np.all(np.isfinite(p)):
                raise DomainError("non-finite link phase")
        object.__setattr__(self, "phases", phases)

    @classmethod
    def zero(cls, grid: Grid) -> "MagneticPotential":
        return cls(grid, tuple(np.zeros(_link_shape(grid, k)) for k in range(grid.dim)))

    @classmethod
    def from_field(cls, grid: Grid, field: Callable[..., Sequence[np.ndarray]]) -> "MagneticPotential":
        """Midpoint-rule line integrals of a closed-form vector field."""
        phases = []
        axes = grid.axes
        for k in range(grid.dim):
            pts = [a if j != k else (a[:-1] + a[1:]) / 2 for j, a in enumerate(axes)]
            mesh = np.meshgrid(*pts, indexing="ij")
            comp = np.broadcast_to(field(*mesh)[k], mesh[0].shape)
            phases.append(grid.h * np.asarray(comp, dtype=float))
        return cls(grid, tuple(phases))

    @classmethod
    def pure_gauge(cls, grid: Grid, phi: np.ndarray) -> "MagneticPotential":
        return cls.zero(grid).gauge_transform(phi)

    @property
    def is_zero(self) -> bool:
        return all(not np.any(p) for p in self.phases)

    def gauge_transform(self, phi: np.ndarray) -> "MagneticPotential":
        """Phases theta_ij + phi_j - phi_i for node-sampled ``phi``."""
        phi = np.asarray(phi, dtype=float).reshape(self.grid.shape)
        out = []
        for k, p in enumerate(self.phases):
            lo, hi = _mesh.link_slices(self.grid.dim, k)
            out.append(p + phi[hi] - phi[lo])
        return MagneticPotential(self.grid, tuple(out))

    def link_phase(self, i: Sequence[int], j: Sequence[int]) -> float:
        """Phase of the directed link i -> j between neighbouring nodes."""
        diff = np.subtract(j, i)
        if np.count_nonzero(diff) != 1 or np.abs(diff).sum() != 1:
            raise DomainError("nodes are not neighbours")
        (axis,) = np.flatnonzero(diff)
        tail = tuple(np.minimum(i, j))
        theta = float(self.phases[axis][tail])
        return theta if diff[axis] > 0 else -theta

    def flux_density(self) -> np.ndarray:
        """Per-plaquette flux divided by h^2 (2D only); the discrete field B."""
        if self.grid.dim != 2:
            raise DomainError("flux_density is defined for 2D grids")
        px, py = self.phases
        circ = px[:, :-1] + py[1:, :] - px[:, 1:] - py[:-1, :]
        return circ / self.grid.h**2


def _link_shape(grid: Grid, axis: int) -> tuple[int, ...]:
    shape = list(grid.shape)
    shape[axis] -= 1
    return tuple(shape)


@dataclass(frozen=True, eq=False)
class ScalarPotential:
    """Non-negative potential, closed form ``func(*coords)`` or per-cell table."""

    func: Callable[..., np.ndarray] | None = None
    table: np.ndarray | None = None
    label: str = ""

    def __post_init__(self):
        if (self.func is None) == (self.table is None):
            raise DomainError("give exactly one of func or table")
        if self.table is not None:
            t = np.asarray(self.table, dtype=float)
            _check_nonneg(t)
            object.__setattr__(self, "table", t)

    @classmethod
    def constant(cls, value: float) -> "ScalarPotential":
        value = float(value)
        if value < 0:
            raise DomainError("potential must be non-negative")
        return cls(func=lambda *x: np.full(np.shape(x[0]), value), label=f"{value:g}")

    @classmethod
    def zero(cls) -> "ScalarPotential":
        return cls.constant(0.0)

    def shifted(self, c: float) -> "ScalarPotential":
        if self.table is not None:
            return ScalarPotential(table=self.table + c, label=f"{self.label}+{c:g}")
        f = self.func
        return ScalarPotential(func=lambda *x: f(*x) + c, label=f"{self.label}+{c:g}")

    def sample(self, *coords: np.ndarray) -> np.ndarray:
        if self.func is None:
            raise DomainError("tabulated potential cannot be sampled at arbitrary points")
        vals = np.asarray(np.broadcast_to(self.func(*coords), np.shape(coords[0])), dtype=float)
        _check_nonneg(vals)
        return vals

    def cell_values(self, grid: Grid) -> np.ndarray:
        """Midpoint sample of V in every cell."""
        if self.table is not None:
            if self.table.shape != grid.cell_shape:
                raise GridMismatchError(f"table shape {self.table.shape} != cells {grid.cell_shape}")
            return self.table
        return self.sample(*grid.cell_centers())

    def cell_integrals(self, grid: Grid, refine: int = 1) -> np.ndarray:
        """Integral of V over every cell by the composite midpoint rule."""
        if self.table is not None or refine == 1:
            return self.cell_values(grid) * grid.h**grid.dim
        fine = grid.refine(refine)
        vals = self.cell_values(fine) * fine.h**grid.dim
        shape = []
        for c in grid.cell_shape:
            shape += [c, refine]
        return vals.reshape(shape).sum(axis=tuple(range(1, 2 * grid.dim, 2)))


def _check_nonneg(vals: np.ndarray):
    if not np.all(np.isfinite(vals)):
        raise DomainError("potential has non-finite samples")
    if np.any(vals < 0):
        raise DomainError(f"potential must be non-negative (min sample {vals.min():.3g})")


@dataclass(frozen=True, eq=False)
class DomainMask:
    """Open set Omega given by a vectorised membership rule."""

    inside: Callable[..., np.ndarray]
    label: str = ""

    @classmethod
    def everywhere(cls) -> "DomainMask":
        return cls(lambda *x: np.ones(np.shape(x[0]), dtype=bool), label="R^n")

    def node_inside(self, grid: Grid) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.inside(*grid.coords()), dtype=bool), grid.shape)

    def complement(self, grid: Grid) -> "CompactSetMask":
        """Cells of the grid touching R^n minus Omega (outer rasterisation)."""
        outside = ~self.node_inside(grid)
        cells = np.zeros(grid.cell_shape, dtype=bool)
        for corner in np.ndindex(*(2,) * grid.dim):
            sl = tuple(slice(c, c + grid.m - 1) for c in corner)
            cells |= outside[sl]
        return CompactSetMask(grid, cells)


@dataclass(frozen=True, eq=False)
class CompactSetMask:
    """Compact set as a union of closed grid cells."""

    grid: Grid
    cells: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=bool)
        if c.shape != self.grid.cell_shape:
            raise GridMismatchError(f"cell mask shape {c.shape} != {self.grid.cell_shape}")
        object.__setattr__(self, "cells", c)

    @classmethod
    def empty(cls, grid: Grid) -> "CompactSetMask":
        return cls(grid, np.zeros(grid.cell_shape, dtype=bool))

    @classmethod
    def full(cls, grid: Grid) -> "CompactSetMask":
        return cls(grid, np.ones(grid.cell_shape, dtype=bool))

    @classmethod
    def from_predicate(cls, grid: Grid, pred: Callable[..., np.ndarray], rule: str = "center") -> "CompactSetMask":
        """Rasterise a set given by a pointwise predicate.

        ``rule="center"`` keeps cells whose midpoint satisfies ``pred``;
        ``rule="outer"`` keeps cells with the midpoint or any corner inside
        (conservative cover for convex sets).
        """
        cells = np.asarray(pred(*grid.cell_centers()), dtype=bool)
        if rule == "outer":
            nodes = np.asarray(pred(*grid.coords()), dtype=bool)
            for corner in np.ndindex(*(2,) * grid.dim):
                sl = tuple(slice(c, c + grid.m - 1) for c in corner)
                cells = cells | nodes[sl]
        elif rule != "center":
            raise DomainError(f"unknown rasterisation rule {rule!r}")
        return cls(grid, cells)

    @property
    def count(self) -> int:
        return int(self.cells.sum())

    @property
    def is_empty(self) -> bool:
        return not self.cells.any()

    @property
    def measure(self) -> float:
        return self.count * self.grid.h**self.grid.dim

    def node_mask(self) -> np.ndarray:
        """Nodes belonging to the closed set (corners of its cells)."""
        nodes = np.zeros(self.grid.shape, dtype=bool)
        m = self.grid.m
        for corner in np.ndindex(*(2,) * self.grid.dim):
            sl = tuple(slice(c, c + m - 1) for c in corner)
            nodes[sl] |= self.cells
        return nodes

    def union(self, other: "CompactSetMask") -> "CompactSetMask":
        _check_same(self.grid, other.grid)
        return CompactSetMask(self.grid, self.cells | other.cells)

    def complement_in_cube(self) -> "CompactSetMask":
        return CompactSetMask(self.grid, ~self.cells)

    def issubset(self, other: "CompactSetMask") -> bool:
        _check_same(self.grid, other.grid)
        return bool(np.all(other.cells[self.cells]))

    def upsample(self, factor: int) -> "CompactSetMask":
        """Same set on the grid refined ``factor`` times."""
        cells = self.cells
        for ax in range(self.grid.dim):
            cells = np.repeat(cells, factor, axis=ax)
        return CompactSetMask(self.grid.refine(factor), cells)

    def digest(self) -> bytes:
        return np.packbits(self.cells.ravel()).tobytes()


# ---------------------------------------------------------------- operators


def magnetic_gradient(u: GridFunction, a: MagneticPotential) -> tuple[np.ndarray, ...]:
    """Per-link values (u_j exp(i theta_ij) - u_i) / h, one array per axis."""
    _check_same(u.grid, a.grid)
    h = u.grid.h
    out = []
    for k, theta in enumerate(a.phases):
        lo, hi = _mesh.link_slices(u.grid.dim, k)
        if np.any(theta):
            out.append((u.values[hi] * np.exp(1j * theta) - u.values[lo]) / h)
        else:
            out.append((u.values[hi] - u.values[lo]) / h)
    return tuple(out)


def _link_weights(grid: Grid, axis: int) -> np.ndarray:
    # cell-volume share of each link: h^n * (adjacent cells) / 2^(n-1)
    return _mesh.link_conductance(grid.axes, axis) * grid.h**2


def _potential_node_weights(grid: Grid, V: ScalarPotential) -> np.ndarray:
    """Nodal weights sum_{cells at i} V_cell h^n / 2^n."""
    vc = V.cell_values(grid) * grid.h**grid.dim / 2**grid.dim
    w = np.zeros(grid.shape)
    m = grid.m
    for corner in np.ndindex(*(2,) * grid.dim):
        sl = tuple(slice(c, c + m - 1) for c in corner)
        w[sl] += vc
    return w


def gradient_energy(u: GridFunction, a: MagneticPotential | None = None) -> float:
    """Integral of |grad_a u|^2."""
    if a is None:
        a = MagneticPotential.zero(u.grid)
    grads = magnetic_gradient(u, a)
    return float(sum(np.sum(_link_weights(u.grid, k) * np.abs(g) ** 2) for k, g in enumerate(grads)))


def quadratic_form(u: GridFunction, a: MagneticPotential | None = None, V: ScalarPotential | None = None) -> float:
    """Discrete integral of |grad_a u|^2 + V |u|^2 over the cube."""
    val = gradient_energy(u, a)
    if V is not None:
        val += float(np.sum(_potential_node_weights(u.grid, V) * np.abs(u.values) ** 2))
    return val


def l2_norm_sq(u: GridFunction) -> float:
    return float(np.sum(u.grid.node_volumes() * np.abs(u.values) ** 2))


def integrate(V: ScalarPotential, region: CompactSetMask, refine: int = 1) -> float:
    """Integral of V over the cells of ``region``."""
    vals = V.cell_integrals(region.grid, refine)
    # zero-fill keeps the summation order fixed, so the result is monotone in the region
    return float(np.sum(np.where(region.cells, vals, 0.0)))


def integrate_sq(u: GridFunction, region: CompactSetMask) -> float:
    """Integral of |u|^2 over the cells of ``region`` (corner-averaged)."""
    _check_same(u.grid, region.grid)
    g = u.grid
    sq = np.abs(u.values) ** 2
    acc = np.zeros(g.cell_shape)
    for corner in np.ndindex(*(2,) * g.dim):
        sl = tuple(slice(c, c + g.m - 1) for c in corner)
        acc += sq[sl]
    cell = acc / 2**g.dim * g.h**g.dim
    return float(cell[region.cells].sum())


def assemble(
    grid: Grid,
    a: MagneticPotential | None = None,
    V: ScalarPotential | None = None,
) -> tuple[sp.csr_matrix, np.ndarray]:
    """Matrix A of the form and the diagonal mass (trapezoid weights).

    u^* A u == quadratic_form(u, a, V) and sum(mass |u|^2) == l2_norm_sq(u).
    """
    if a is not None:
        _check_same(grid, a.grid)
    phases = None if a is None or a.is_zero else a.phases
    A = _mesh.stiffness(grid.axes, phases)
    if V is not None:
        A = A + sp.diags(_potential_node_weights(grid, V).ravel())
    return A.tocsr(), grid.node_volumes().ravel()
