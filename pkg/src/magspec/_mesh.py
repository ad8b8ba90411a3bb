"""Sparse assembly on tensor-product node meshes.

All discrete energies in the package are link sums of the form

    sum_links c_l * |u_j * exp(i theta_l) - u_i|**2

where ``c_l`` is the link conductance (dual cross-section over link length).
On a uniform mesh this is the lumped bilinear (Q1) energy: exact for affine
functions and symmetric positive semi-definite.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp


def dual_lengths(coords: np.ndarray) -> np.ndarray:
    """Length of the dual interval around each node (halved at the ends)."""
    h = np.diff(coords)
    dual = np.zeros(len(coords))
    dual[:-1] += h / 2
    dual[1:] += h / 2
    return dual


def node_volumes(axes: Sequence[np.ndarray]) -> np.ndarray:
    """Trapezoid weights: product of dual lengths, shaped like the node array."""
    vol = np.ones(())
    for coords in axes:
        vol = np.multiply.outer(vol, dual_lengths(coords))
    return vol


def link_slices(ndim: int, axis: int) -> tuple[tuple[slice, ...], tuple[slice, ...]]:
    lo = [slice(None)] * ndim
    hi = [slice(None)] * ndim
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return tuple(lo), tuple(hi)


def link_conductance(axes: Sequence[np.ndarray], axis: int) -> np.ndarray:
    """Conductance of every link along ``axis``; shape of the link array."""
    c = np.ones(())
    for j, coords in enumerate(axes):
        factor = 1.0 / np.diff(coords) if j == axis else dual_lengths(coords)
        c = np.multiply.outer(c, factor)
    return c


def link_nodes(shape: Sequence[int], axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Flat indices (tail, head) of every link along ``axis``."""
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    lo, hi = link_slices(len(shape), axis)
    return idx[lo].ravel(), idx[hi].ravel()


def stiffness(
    axes: Sequence[np.ndarray],
    phases: Sequence[np.ndarray] | None = None,
) -> sp.csr_matrix:
    """Hermitian matrix K with u^* K u equal to the link energy.

    ``phases[k]`` holds the link phase of every link along axis k (tail to
    head).  Without phases the matrix is real symmetric.
    """
    shape = tuple(len(a) for a in axes)
    n_nodes = int(np.prod(shape))
    complex_ = phases is not None and any(np.any(p != 0) for p in phases)
    dtype = complex if complex_ else float
    diag = np.zeros(n_nodes)
    rows, cols, vals = [], [], []
    for k in range(len(axes)):
        i, j = link_nodes(shape, k)
        c = link_conductance(axes, k).ravel()
        np.add.at(diag, i, c)
        np.add.at(diag, j, c)
        if complex_:
            w = np.exp(1j * np.asarray(phases[k]).ravel())
            off_ij, off_ji = -c * w, -c * np.conj(w)
        else:
            off_ij = off_ji = -c
        rows += [i, j]
        cols += [j, i]
        vals += [off_ij, off_ji]
    rows.append(np.arange(n_nodes))
    cols.append(np.arange(n_nodes))
    vals.append(diag)
    K = sp.coo_matrix(
        (np.concatenate(vals).astype(dtype), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_nodes, n_nodes),
    )
    return K.tocsr()


def robin_far_field(axes: Sequence[np.ndarray], origin: np.ndarray) -> np.ndarray:
    """Diagonal boundary term for the condition du/dn + (x.n)/|x|^2 u = 0.

    Exact for the monopole 1/|x| (n = 3) measured from ``origin``; adds
    int (x.n)/|x|^2 |u|^2 dS over the box faces with trapezoid face weights.
    """
    ndim = len(axes)
    shape = tuple(len(a) for a in axes)
    rel = [a - o for a, o in zip(axes, origin)]
    grids = np.meshgrid(*rel, indexing="ij")
    r2 = sum(g * g for g in grids)
    duals = [dual_lengths(a) for a in axes]
    out = np.zeros(shape)
    for k in range(ndim):
        area = np.ones(())
        for j in range(ndim):
            if j != k:
                area = np.multiply.outer(area, duals[j])
        for pos in (0, -1):
            sl = [slice(None)] * ndim
            sl[k] = pos
            sl = tuple(sl)
            out[sl] += area * np.abs(grids[k][sl]) / r2[sl]
    return out
