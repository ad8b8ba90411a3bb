from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magspec.lattice import Cube, DomainMask, Grid, MagneticPotential, ScalarPotential
from magspec.spectral import (
    DENSE_LIMIT,
    constrained_bottom,
    dirichlet_bottom,
    local_energy,
    neumann_bottom,
    richardson,
)

seeds = st.integers(0, 2**32 - 1)


def discrete_dirichlet(n: int, m: int, d: float = 1.0) -> float:
    """Exact bottom of the lumped lattice Laplacian on a uniform grid."""
    h = d / (m - 1)
    return n * 4 / h**2 * math.sin(math.pi * h / (2 * d)) ** 2


@pytest.mark.parametrize("n,m", [(2, 9), (2, 33), (3, 9), (2, 65)])
def test_dirichlet_matches_closed_form(n, m):
    lam = dirichlet_bottom(Grid(Cube.unit(n), m)).value
    assert lam == pytest.approx(discrete_dirichlet(n, m), rel=1e-9)


def test_iterative_path_matches_closed_form():
    m = 65
    assert (m - 2) ** 2 > DENSE_LIMIT
    b = dirichlet_bottom(Grid(Cube.unit(2, 2.0), m))
    assert b.value == pytest.approx(discrete_dirichlet(2, m, 2.0), rel=1e-8)
    assert b.residual <= 1e-8


def test_neumann_free_is_zero_with_constant_mode():
    b = neumann_bottom(Grid(Cube.unit(2), 17), keep_vector=True)
    assert b.value <= 1e-10
    v = np.abs(b.vector)
    assert np.ptp(v) < 1e-8 * v.max()


def test_constant_potential_shifts_spectrum():
    g = Grid(Cube.unit(2), 11)
    assert neumann_bottom(g, V=ScalarPotential.constant(3.0)).value == pytest.approx(3.0)
    base = dirichlet_bottom(g).value
    assert dirichlet_bottom(g, V=ScalarPotential.constant(3.0)).value == pytest.approx(base + 3.0)


def test_scaling_with_edge():
    lam1 = dirichlet_bottom(Grid(Cube.unit(2, 1.0), 17)).value
    lam3 = dirichlet_bottom(Grid(Cube((5.0, -1.0), 3.0), 17)).value
    assert lam3 == pytest.approx(lam1 / 9, rel=1e-10)


def test_uniform_field_lifts_neumann_bottom():
    g = Grid(Cube.unit(2, 2.0), 21)
    a = MagneticPotential.from_field(g, lambda x, y: (-y, 0 * x))
    mu0 = local_energy(g, a)
    assert 0.1 < mu0.mu0 < 1.0 + 1e-6
    assert mu0.mu0_tilde == pytest.approx(mu0.mu0 * 4)


@given(seeds)
def test_mu_le_lambda(seed):
    rng = np.random.default_rng(seed)
    g = Grid(Cube(tuple(rng.uniform(-3, 3, 2)), float(rng.uniform(0.3, 3))), 9)
    k = rng.uniform(0, 5, 2)
    a = MagneticPotential.from_field(g, lambda x, y: (k[0] * np.sin(y), k[1] * x))
    c = rng.uniform(0, 4)
    V = ScalarPotential(lambda x, y: c * (x * x + np.cos(y) ** 2))
    assert neumann_bottom(g, a, V).value <= dirichlet_bottom(g, a, V).value * (1 + 1e-10)


@given(seeds)
def test_gauge_invariance_of_bottoms(seed):
    rng = np.random.default_rng(seed)
    g = Grid(Cube.unit(2, 1.5), 9)
    a = MagneticPotential.from_field(g, lambda x, y: (-2 * y, x))
    phi = rng.uniform(-5, 5, g.shape)
    b = a.gauge_transform(phi)
    for f in (dirichlet_bottom, neumann_bottom):
        assert f(g, b).value == pytest.approx(f(g, a).value, rel=1e-9, abs=1e-12)


@given(seeds)
def test_potential_monotonicity(seed):
    rng = np.random.default_rng(seed)
    g = Grid(Cube.unit(2), 8)
    c = rng.uniform(0, 3)
    V1 = ScalarPotential(lambda x, y: c * x * x)
    V2 = ScalarPotential(lambda x, y: c * x * x + rng.uniform(0, 1))
    assert neumann_bottom(g, V=V1).value <= neumann_bottom(g, V=V2).value + 1e-12


def test_constrained_bottom_sits_between():
    g = Grid(Cube.unit(2), 11)
    pinned = np.zeros(g.shape, bool)
    pinned[5, 5] = True
    c = constrained_bottom(g, pinned).value
    assert neumann_bottom(g).value < c < dirichlet_bottom(g).value


def test_mask_eliminates_nodes():
    g = Grid(Cube.unit(2, 2.0), 17)
    half = DomainMask(lambda x, y: x < 0.0)
    assert dirichlet_bottom(g, mask=half).value > dirichlet_bottom(g).value
    nowhere = DomainMask(lambda x, y: x > 5)
    assert dirichlet_bottom(g, mask=nowhere).value == math.inf


def test_bad_tolerance():
    with pytest.raises(ValueError):
        dirichlet_bottom(Grid(Cube.unit(2), 5), tol=0.0)


def test_richardson_removes_quadratic_error():
    exact, c = 2.0, 0.7
    assert richardson(exact + c * 0.1**2, exact + c * 0.05**2) == pytest.approx(exact)
