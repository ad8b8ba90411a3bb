from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magspec.errors import DomainError, GridMismatchError, InvalidResolutionError
from magspec.lattice import (
    CompactSetMask,
    Cube,
    DomainMask,
    Grid,
    GridFunction,
    MagneticPotential,
    ScalarPotential,
    assemble,
    gradient_energy,
    integrate,
    l2_norm_sq,
    quadratic_form,
)

seeds = st.integers(0, 2**32 - 1)


def _random_u(grid, rng, complex_=True):
    v = rng.standard_normal(grid.shape)
    if complex_:
        v = v + 1j * rng.standard_normal(grid.shape)
    return GridFunction(grid, v)


def _random_a(grid, rng, scale=5.0):
    return MagneticPotential(grid, tuple(scale * rng.standard_normal(p.shape) for p in MagneticPotential.zero(grid).phases))


def test_cube_rejects_bad_input():
    with pytest.raises(DomainError):
        Cube((0.0,), 1.0)
    with pytest.raises(DomainError):
        Cube((0.0, 0.0), -1.0)
    with pytest.raises(InvalidResolutionError):
        Grid(Cube.unit(2), 2)


def test_grid_geometry():
    g = Grid(Cube.from_corner((0.0, 0.0), 2.0), 5)
    assert g.h == pytest.approx(0.5)
    assert g.shape == (5, 5) and g.cell_shape == (4, 4)
    assert g.node_volumes().sum() == pytest.approx(4.0)
    assert g.boundary_nodes().sum() == 16


def test_mass_integrates_constants_exactly():
    g = Grid(Cube((1.0, -2.0, 0.5), 1.5), 7)
    assert l2_norm_sq(GridFunction.constant(g, 2.0)) == pytest.approx(4 * 1.5**3)


def test_constant_has_zero_energy_and_linear_has_exact_energy():
    g = Grid(Cube.unit(2, 2.0), 9)
    assert gradient_energy(GridFunction.constant(g, 1.0)) == 0.0
    u = GridFunction.from_callable(g, lambda x, y: 3 * x - y)
    assert gradient_energy(u) == pytest.approx(10.0 * 4.0)


def test_assemble_is_hermitian_and_psd():
    rng = np.random.default_rng(0)
    g = Grid(Cube.unit(2), 6)
    A, M = assemble(g, _random_a(g, rng), ScalarPotential(lambda x, y: 1 + x * x))
    D = A.toarray()
    assert np.allclose(D, D.conj().T)
    assert np.linalg.eigvalsh(D).min() > -1e-12
    assert np.all(M > 0)


def test_quadratic_form_matches_matrix():
    rng = np.random.default_rng(1)
    g = Grid(Cube.unit(2), 7)
    a = _random_a(g, rng)
    V = ScalarPotential(lambda x, y: np.exp(x))
    u = _random_u(g, rng)
    A, _ = assemble(g, a, V)
    x = u.values.ravel()
    assert quadratic_form(u, a, V) == pytest.approx(float(np.real(np.vdot(x, A @ x))), rel=1e-12)


@given(seeds, st.sampled_from([2, 3]))
def test_diamagnetic_inequality(seed, n):
    rng = np.random.default_rng(seed)
    g = Grid(Cube.unit(n, float(rng.uniform(0.2, 3))), 5 if n == 3 else 8)
    u = _random_u(g, rng)
    a = _random_a(g, rng, float(rng.uniform(0, 20)))
    assert gradient_energy(u.modulus()) <= gradient_energy(u, a) * (1 + 1e-12) + 1e-12


@given(seeds)
def test_gauge_covariance_of_energy(seed):
    rng = np.random.default_rng(seed)
    g = Grid(Cube.unit(2, 1.3), 8)
    u = _random_u(g, rng)
    a = _random_a(g, rng)
    phi = rng.uniform(-10, 10, g.shape)
    v = GridFunction(g, u.values * np.exp(-1j * phi))
    e1 = gradient_energy(u, a)
    e2 = gradient_energy(v, a.gauge_transform(phi))
    assert e2 == pytest.approx(e1, rel=1e-10)


def test_pure_gauge_is_flux_free():
    g = Grid(Cube.unit(2), 9)
    phi = np.random.default_rng(2).standard_normal(g.shape)
    assert np.allclose(MagneticPotential.pure_gauge(g, phi).flux_density(), 0.0, atol=1e-12)


def test_constant_field_flux():
    g = Grid(Cube.unit(2, 2.0), 11)
    a = MagneticPotential.from_field(g, lambda x, y: (-0.5 * 3 * y, 0.5 * 3 * x))
    assert np.allclose(a.flux_density(), 3.0)


def test_link_phase_orientation():
    g = Grid(Cube.unit(2), 4)
    a = MagneticPotential.from_field(g, lambda x, y: (np.ones_like(x), 0 * x))
    assert a.link_phase((0, 0), (1, 0)) == pytest.approx(g.h)
    assert a.link_phase((1, 0), (0, 0)) == pytest.approx(-g.h)
    with pytest.raises(DomainError):
        a.link_phase((0, 0), (1, 1))


def test_mismatch_errors():
    g = Grid(Cube.unit(2), 5)
    with pytest.raises(GridMismatchError):
        GridFunction(g, np.zeros(7))
    with pytest.raises(GridMismatchError):
        CompactSetMask(g, np.zeros((5, 5), bool))
    with pytest.raises(GridMismatchError):
        GridFunction.constant(g) * GridFunction.constant(Grid(Cube.unit(2), 6))


def test_potential_rejects_negative_values():
    with pytest.raises(DomainError):
        ScalarPotential(table=np.array([[-1.0]]))
    with pytest.raises(DomainError):
        ScalarPotential()


def test_integrate_constant_and_polynomial():
    g = Grid(Cube.from_corner((0.0, 0.0), 1.0), 5)
    full = CompactSetMask.full(g)
    assert integrate(ScalarPotential.constant(2.0), full) == pytest.approx(2.0)
    assert integrate(ScalarPotential(lambda x, y: x * x), full, refine=8) == pytest.approx(1 / 3, rel=1e-3)


def test_mask_operations():
    g = Grid(Cube.unit(2, 2.0), 5)
    A = CompactSetMask.from_predicate(g, lambda x, y: x < 0)
    B = CompactSetMask.from_predicate(g, lambda x, y: y < 0)
    assert A.count == 8 and A.measure == pytest.approx(2.0)
    assert A.issubset(A.union(B))
    assert A.complement_in_cube().count == 8
    assert A.upsample(2).measure == pytest.approx(A.measure)
    assert A.node_mask().sum() == 15
    assert CompactSetMask.empty(g).is_empty


def test_outer_rule_covers_center_rule():
    g = Grid(Cube.unit(2, 2.0), 17)
    pred = lambda x, y: x * x + y * y <= 0.5  # noqa: E731
    c = CompactSetMask.from_predicate(g, pred)
    o = CompactSetMask.from_predicate(g, pred, rule="outer")
    assert c.issubset(o) and o.count > c.count
    with pytest.raises(DomainError):
        CompactSetMask.from_predicate(g, pred, rule="nearest")


def test_domain_mask_complement():
    g = Grid(Cube.unit(2, 2.0), 9)
    omega = DomainMask(lambda x, y: x * x + y * y > 0.25)
    comp = omega.complement(g)
    assert not comp.is_empty and comp.count < g.n_cells
    assert DomainMask.everywhere().complement(g).is_empty
