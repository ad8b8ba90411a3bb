"""Bottoms of the Dirichlet and Neumann spectra on a cube."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, lobpcg

from .errors import ConvergenceError
from .lattice import DomainMask, Grid, GridFunction, MagneticPotential, ScalarPotential, assemble

__all__ = [
    "SpectralBottom",
    "LocalEnergy",
    "dirichlet_bottom",
    "neumann_bottom",
    "local_energy",
    "constrained_bottom",
    "richardson",
    "DENSE_LIMIT",
]

DENSE_LIMIT = 1500
CLAMP = 1e-12


@dataclass(frozen=True)
class SpectralBottom:
    value: float
    residual: float
    iterations: int
    kind: Literal["dirichlet", "neumann"]
    vector: np.ndarray | None = None

    def eigenfunction(self, grid: Grid) -> GridFunction:
        return GridFunction(grid, self.vector)


@dataclass(frozen=True)
class LocalEnergy:
    mu0: float
    mu0_tilde: float
    residual: float = 0.0


def _free_nodes(grid: Grid, kind: str, mask: DomainMask | None) -> np.ndarray:
    free = np.ones(grid.shape, dtype=bool)
    if kind == "dirichlet":
        free &= ~grid.boundary_nodes()
    if mask is not None:
        free &= mask.node_inside(grid)
    return free.ravel()


def _backward_error(A, M, x, lam) -> float:
    r = A @ x - lam * (M * x)
    normA = abs(A).sum(axis=1).max()
    scale = (normA + abs(lam) * M.max()) * np.linalg.norm(x)
    return float(np.linalg.norm(r) / scale) if scale > 0 else 0.0


def _smallest(A: sp.csr_matrix, M: np.ndarray, tol: float, seed: int, max_iter: int):
    """Smallest eigenpair of A x = lam diag(M) x (A Hermitian PSD)."""
    n = A.shape[0]
    s = 1.0 / np.sqrt(M)
    B = sp.diags(s) @ A @ sp.diags(s)
    B = ((B + B.conj().T) * 0.5).tocsr()
    if n <= DENSE_LIMIT:
        w, v = la.eigh(B.toarray(), subset_by_index=[0, 0])
        y, lam, its = v[:, 0], float(w[0]), 1
    else:
        y, lam, its = _lobpcg(B, tol, seed, max_iter)
    x = s * y
    x = x / np.sqrt(np.sum(M * np.abs(x) ** 2))
    return lam, x, its


def _lobpcg(B: sp.csr_matrix, tol: float, seed: int, max_iter: int):
    import pyamg

    n = B.shape[0]
    rng = np.random.default_rng(seed)
    k = 3
    X = rng.standard_normal((n, k))
    if np.iscomplexobj(B.data):
        X = X + 1j * rng.standard_normal((n, k))
    # shift keeps the preconditioner definite when B is singular (Neumann, V = 0)
    shift = float(B.diagonal().real.mean()) * 1e-3
    ml = pyamg.smoothed_aggregation_solver(B + shift * sp.identity(n, format="csr"), max_coarse=200)
    P = ml.aspreconditioner(cycle="V")
    Pop = LinearOperator((n, n), matvec=P.matvec, dtype=B.dtype)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        w, v, hist = lobpcg(
            B, X, M=Pop, tol=tol * float(B.diagonal().real.max()), maxiter=max_iter,
            largest=False, retResidualNormsHistory=True,
        )
    i = int(np.argmin(w))
    return v[:, i], float(w[i]), len(hist)


def _bottom(kind, grid, a, V, mask, tol, seed, keep_vector, pinned=None) -> SpectralBottom:
    if not tol > 0:
        raise ValueError("tol must be positive")
    A, M = assemble(grid, a, V)
    free = _free_nodes(grid, kind, mask)
    if pinned is not None:
        free &= ~np.asarray(pinned, dtype=bool).ravel()
    idx = np.flatnonzero(free)
    if idx.size == 0:
        return SpectralBottom(float("inf"), 0.0, 0, kind)
    Af = A[idx][:, idx].tocsr()
    Mf = M[idx]
    max_iter = 10 * grid.n_nodes
    lam, x, its = _smallest(Af, Mf, tol, seed, max_iter)
    res = _backward_error(Af, Mf, x, lam)
    if res > tol:
        raise ConvergenceError(f"{kind} bottom did not converge", res, its)
    if -CLAMP * max(1.0, float((Af.diagonal().real / Mf).max())) <= lam < 0:
        lam = 0.0
    vec = None
    if keep_vector:
        vec = np.zeros(grid.n_nodes, dtype=x.dtype)
        vec[idx] = x
        vec = vec.reshape(grid.shape)
    return SpectralBottom(lam, res, its, kind, vec)


def dirichlet_bottom(
    grid: Grid,
    a: MagneticPotential | None = None,
    V: ScalarPotential | None = None,
    mask: DomainMask | None = None,
    tol: float = 1e-8,
    seed: int = 0,
    keep_vector: bool = False,
) -> SpectralBottom:
    """Smallest Rayleigh quotient over functions vanishing on the cube boundary.

    With ``mask``, nodes outside the open set are eliminated as well; an empty
    test space yields ``inf``.
    """
    return _bottom("dirichlet", grid, a, V, mask, tol, seed, keep_vector)


def neumann_bottom(
    grid: Grid,
    a: MagneticPotential | None = None,
    V: ScalarPotential | None = None,
    mask: DomainMask | None = None,
    tol: float = 1e-8,
    seed: int = 0,
    keep_vector: bool = False,
) -> SpectralBottom:
    """Smallest Rayleigh quotient with free boundary (only ``mask`` pins nodes)."""
    return _bottom("neumann", grid, a, V, mask, tol, seed, keep_vector)


def constrained_bottom(
    grid: Grid,
    pinned: np.ndarray,
    a: MagneticPotential | None = None,
    V: ScalarPotential | None = None,
    kind: Literal["dirichlet", "neumann"] = "neumann",
    tol: float = 1e-8,
    seed: int = 0,
    keep_vector: bool = False,
) -> SpectralBottom:
    """Bottom over functions that also vanish on the ``pinned`` nodes."""
    return _bottom(kind, grid, a, V, None, tol, seed, keep_vector, pinned)


def local_energy(
    grid: Grid,
    a: MagneticPotential | None = None,
    mask: DomainMask | None = None,
    tol: float = 1e-8,
    seed: int = 0,
) -> LocalEnergy:
    """Neumann bottom of the purely magnetic form and its scale-free version."""
    b = neumann_bottom(grid, a, None, mask, tol, seed)
    d = grid.cube.edge
    return LocalEnergy(b.value, b.value * d * d, b.residual)


def richardson(coarse: float, fine: float, ratio: float = 2.0, order: int = 2) -> float:
    """One Richardson step for an error expansion c h^order."""
    r = ratio**order
    return (r * fine - coarse) / (r - 1)
