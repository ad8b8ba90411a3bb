"""The Molchanov functional: integral of V left after removing a negligible set.

Candidate sets are unions of *design cells* (a coarse k^n partition of the
cube).  Capacities are measured on the capacity grid, which refines every
design cell ``refine`` times; potential integrals use a further midpoint
sub-sampling.  The optional mandatory set is given on the capacity grid and
is part of every candidate.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from . import capacity as _cap
from .errors import DomainError, SizeError
from .lattice import CompactSetMask, Cube, DomainMask, Grid, ScalarPotential

__all__ = [
    "MolchanovQuery",
    "MolchanovResult",
    "molchanov_greedy",
    "molchanov_brute",
    "negligibility_test",
    "mandatory_from_domain",
    "default_refine",
]

_GREEN_NODE_LIMIT = 400
ALPHAS = (0.5, 1.0, 2.0, 4.0)


def default_refine(cells: int) -> int:
    """Capacity-grid refinement giving roughly 12 intervals per edge."""
    return max(2, math.ceil(12 / cells))


@dataclass(frozen=True, eq=False)
class MolchanovQuery:
    cube: Cube
    V: ScalarPotential
    gamma: float
    cells: int = 4
    refine: int | None = None
    quad: int = 2
    mandatory: CompactSetMask | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError(f"gamma must lie in [0, 1), got {self.gamma}")
        if self.cells < 1:
            raise DomainError("need at least one design cell per edge")
        if self.refine is None:
            object.__setattr__(self, "refine", default_refine(self.cells))
        if self.mandatory is not None and self.mandatory.grid.key != self.cap_grid.key:
            raise DomainError("mandatory mask must live on the capacity grid")

    @property
    def cap_grid(self) -> Grid:
        return Grid(self.cube, self.cells * self.refine + 1)

    @property
    def n_cells(self) -> int:
        return self.cells**self.cube.dim

    def with_gamma(self, gamma: float) -> "MolchanovQuery":
        return MolchanovQuery(self.cube, self.V, gamma, self.cells, self.refine, self.quad, self.mandatory)


@dataclass(frozen=True)
class MolchanovResult:
    value: float
    witness: CompactSetMask
    cap_used: float
    cap_cube: float
    method: str
    infeasible: bool = False

    @property
    def budget_fraction(self) -> float:
        return self.cap_used / self.cap_cube if self.cap_cube > 0 else 0.0

    def to_record(self) -> dict:
        return {
            "value": None if math.isinf(self.value) else self.value,
            "infeasible": self.infeasible,
            "cap_used": self.cap_used,
            "cap_cube": self.cap_cube,
            "method": self.method,
            "witness_cells": int(self.witness.count),
        }


class _Problem:
    """Shared per-query data: design-cell integrals and mask capacities."""

    def __init__(self, q: MolchanovQuery):
        self.q = q
        self.grid = q.cap_grid
        k, r, n = q.cells, q.refine, q.cube.dim
        self.k, self.r, self.n = k, r, n
        self.fine_int = q.V.cell_integrals(self.grid, q.quad)
        self.mand = q.mandatory.cells if q.mandatory is not None else np.zeros(self.grid.cell_shape, bool)
        free_int = np.where(self.mand, 0.0, self.fine_int)
        shape = []
        for _ in range(n):
            shape += [k, r]
        self.cell_int = free_int.reshape(shape).sum(axis=tuple(range(1, 2 * n, 2))).ravel()
        # capacity is translation invariant and scales as edge^(n-2): solve on
        # an origin-centred unit copy so all cubes share one solver and memo
        self.ref = Grid(Cube.unit(n, 1.0), self.grid.m)
        self.scale = q.cube.edge ** (n - 2)
        self.solver = _cap._solver(self.ref, None, None, _cap.DEFAULT_BOX_FACTOR, _cap.DEFAULT_GRADING)
        self.use_green = n == 2 and self.grid.n_nodes <= _GREEN_NODE_LIMIT
        self._caps: dict[bytes, float] = {}
        self.cap_cube = self.capacity_nodes(np.ones(self.grid.shape, bool))

    def fine_cells(self, design: np.ndarray) -> np.ndarray:
        cells = np.asarray(design, bool).reshape((self.k,) * self.n)
        for ax in range(self.n):
            cells = np.repeat(cells, self.r, axis=ax)
        return cells | self.mand

    def capacity_nodes(self, pins: np.ndarray) -> float:
        if self.use_green:
            return self.scale * self.solver.capacity_from_green(pins)
        return self.scale * _cap.nodal_capacity(self.ref, pins).value

    def capacity(self, design: np.ndarray) -> float:
        key = np.packbits(design).tobytes()
        hit = self._caps.get(key)
        if hit is None:
            fine = self.fine_cells(design)
            hit = self.capacity_nodes(CompactSetMask(self.grid, fine).node_mask()) if fine.any() else 0.0
            self._caps[key] = hit
        return hit

    def witness(self, design: np.ndarray) -> CompactSetMask:
        return CompactSetMask(self.grid, self.fine_cells(design))

    def value(self, design: np.ndarray) -> float:
        """Integral over the complement; same arithmetic as ``integrate``."""
        return float(np.sum(np.where(self.fine_cells(design), 0.0, self.fine_int)))

    def best_of(self, designs: list[np.ndarray], method: str) -> MolchanovResult:
        """Candidate with the smallest value (first one wins ties)."""
        values = [self.value(d) for d in designs]
        i = int(np.argmin(values))
        w = self.witness(designs[i])
        return MolchanovResult(values[i], w, self.capacity(designs[i]), self.cap_cube, method)

    def infeasible(self, method: str) -> MolchanovResult | None:
        if not self.mand.any():
            return None
        c = self.capacity(np.zeros(self.k**self.n, bool))
        if c > self.q.gamma * self.cap_cube:
            w = CompactSetMask(self.grid, self.mand)
            return MolchanovResult(math.inf, w, c, self.cap_cube, method, infeasible=True)
        return None


def _feasible_chain(prob: _Problem, order: list[int], budget: float, batch: int) -> list[np.ndarray]:
    """Batch-aligned prefixes of ``order`` that fit the capacity budget.

    Capacity grows along the chain, so the scan stops at the first prefix
    over budget (dropping that last batch).
    """
    design = np.zeros(prob.k**prob.n, bool)
    out = [design.copy()]
    for start in range(0, len(order), batch):
        design[order[start : start + batch]] = True
        if prob.capacity(design) > budget:
            break
        out.append(design.copy())
    return out


def _marginal_order(prob: _Problem, candidates: list[int], alpha: float = 1.0, seed: int | None = None) -> list[int]:
    """Cells ranked by potential gain per (added capacity)**alpha.

    With ``seed`` the ordering is forced to start from that cell.
    """
    design = np.zeros(prob.k**prob.n, bool)
    left = list(candidates)
    order = []
    if seed is not None:
        design[seed] = True
        left.remove(seed)
        order.append(seed)
    current = prob.capacity(design)
    while left:
        best, best_score, best_cap = None, -1.0, None
        for c in left:
            design[c] = True
            cap = prob.capacity(design)
            design[c] = False
            gain = max(cap - current, 1e-300)
            score = prob.cell_int[c] / gain**alpha
            if score > best_score:
                best, best_score, best_cap = c, score, cap
        order.append(best)
        left.remove(best)
        design[best] = True
        current = best_cap
    return order


def molchanov_greedy(q: MolchanovQuery, batch: int | None = None, adaptive: bool | None = None) -> MolchanovResult:
    """Upper bound for the functional with a concrete witness set.

    Cells are absorbed in decreasing order of their integral (index order
    breaks ties) in batches of ``max(1, N // 64)``, re-checking the budget
    after every batch; the last batch is dropped if it overshoots.  On small
    problems (``adaptive``) several capacity-aware orderings are added and
    every feasible prefix is also extended by one more cell where the budget
    allows.  All orderings ignore gamma, so the candidate family only grows
    with gamma and the returned value is monotone in it.
    """
    prob = _Problem(q)
    bad = prob.infeasible("greedy")
    if bad is not None:
        return bad
    budget = q.gamma * prob.cap_cube
    N = prob.k**prob.n
    batch = batch or max(1, N // 64)
    candidates = [int(i) for i in np.lexsort((np.arange(N), -prob.cell_int)) if prob.cell_int[i] > 0]
    orders = [candidates]
    if adaptive is None:
        adaptive = prob.use_green
    if adaptive and len(candidates) > 1:
        orders += [_marginal_order(prob, candidates, alpha) for alpha in ALPHAS]
        orders += [_marginal_order(prob, candidates, 1.0, seed=c) for c in candidates]
    family: dict[bytes, np.ndarray] = {}
    for order in orders:
        for design in _feasible_chain(prob, order, budget, batch):
            family.setdefault(design.tobytes(), design)
            if adaptive:
                for c in candidates:
                    if not design[c]:
                        ext = design.copy()
                        ext[c] = True
                        if ext.tobytes() not in family and prob.capacity(ext) <= budget:
                            family[ext.tobytes()] = ext
    return prob.best_of(list(family.values()), "greedy")


_BRUTE_CACHE: dict[tuple, np.ndarray] = {}
_BRUTE_LOCK = threading.Lock()


def _all_capacities(prob: _Problem) -> np.ndarray:
    """Capacity of every design-cell subset, indexed by its bit pattern."""
    key = (prob.ref.key, prob.k, prob.mand.tobytes(), prob.scale)
    with _BRUTE_LOCK:
        hit = _BRUTE_CACHE.get(key)
    if hit is not None:
        return hit
    N = prob.k**prob.n
    caps = np.empty(2**N)
    bits = (np.arange(2**N)[:, None] >> np.arange(N)[None, :]) & 1
    for i in range(2**N):
        caps[i] = prob.capacity(bits[i].astype(bool))
    with _BRUTE_LOCK:
        _BRUTE_CACHE[key] = caps
    return caps


def molchanov_brute(q: MolchanovQuery, max_cells: int = 16) -> MolchanovResult:
    """Exact minimum over all unions of design cells (exhaustive enumeration)."""
    N = q.n_cells
    if N > max_cells:
        raise SizeError(f"{N} design cells exceed the enumeration limit {max_cells}")
    prob = _Problem(q)
    bad = prob.infeasible("brute")
    if bad is not None:
        return bad
    caps = _all_capacities(prob)
    budget = q.gamma * prob.cap_cube
    bits = ((np.arange(2**N)[:, None] >> np.arange(N)[None, :]) & 1).astype(bool)
    removed = bits.astype(float) @ prob.cell_int
    score = np.where(caps <= budget, removed, -np.inf)
    # the matrix product and the reported sum round differently, so settle
    # near-ties with the exact reported value
    top = score.max()
    near = np.flatnonzero(score >= top - 1e-12 * max(abs(top), prob.cell_int.sum(), 1e-300))
    return prob.best_of([bits[i] for i in near], "brute")


def negligibility_test(F: CompactSetMask, gamma: float, cube: Cube | None = None) -> bool:
    """Whether cap(F) <= gamma * cap(Q_d), both on the grid of ``F``."""
    if cube is not None and (cube.center, cube.edge) != (F.grid.cube.center, F.grid.cube.edge):
        raise DomainError("F does not live on the given cube")
    if F.is_empty:
        return gamma >= 0
    cap_f = _cap.wiener_capacity(F).value
    cap_q = _cap.cube_capacity(F.grid)
    return cap_f <= gamma * cap_q


def mandatory_from_domain(q_cube: Cube, omega: DomainMask, cells: int, refine: int | None = None) -> CompactSetMask:
    """Cells of the capacity grid meeting the complement of ``omega``."""
    refine = refine or default_refine(cells)
    grid = Grid(q_cube, cells * refine + 1)
    return omega.complement(grid)
