from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magspec import testbench as tb
from magspec.errors import ConfigError, DomainError
from magspec.lattice import CompactSetMask, Cube, Grid, GridFunction, MagneticPotential, gradient_energy, l2_norm_sq
from magspec.ledger import ConstantsLedger, default_ledger
from magspec.molchanov import molchanov_brute

seeds = st.integers(0, 2**32 - 1)


def test_inequality_case_tolerance():
    assert tb.InequalityCase("x", 1.0, 0.99, 0.02).passed
    assert not tb.InequalityCase("x", 1.0, 0.99, 0.0).passed
    rec = tb.InequalityCase("x", 1.0, 2.0, 0.0, {"k": 1}).to_record()
    assert rec["slack"] == 1.0 and rec["k"] == 1


def test_poincare_extremal_ratio():
    d = 1.7
    g = Grid(Cube.from_corner((0.0, 0.0), d), 65)
    u = GridFunction.from_callable(g, lambda x, y: np.cos(math.pi * x / d))
    case = tb.check_poincare(u)
    assert case.meta["ratio"] == pytest.approx(d * d / math.pi**2, rel=0.01)
    assert case.passed


@given(seeds, st.sampled_from([2, 3]))
def test_poincare_random(seed, n):
    rng = np.random.default_rng(seed)
    g = Grid(Cube.unit(n, float(rng.uniform(0.3, 3))), 9 if n == 2 else 5)
    assert tb.check_poincare(tb.random_function(g, rng, complex_=True)).passed


@given(seeds)
def test_reflect_extend_multiplies_norms(seed):
    rng = np.random.default_rng(seed)
    g = Grid(Cube((0.3, -0.2), 1.2), 7)
    u = tb.random_function(g, rng)
    v = tb.reflect_extend(u)
    assert v.grid.cube.edge == pytest.approx(3.6)
    assert l2_norm_sq(v) == pytest.approx(9 * l2_norm_sq(u), rel=1e-12)
    assert gradient_energy(v) == pytest.approx(9 * gradient_energy(u), rel=1e-12)


def test_cap_upper_requires_vanishing():
    g = Grid(Cube.unit(2), 9)
    F = CompactSetMask.from_predicate(g, lambda x, y: (np.abs(x) < 0.2) & (np.abs(y) < 0.2))
    with pytest.raises(DomainError):
        tb.check_cap_upper(GridFunction.constant(g, 1.0), F, 10.0)
    with pytest.raises(DomainError):
        tb.check_cap_upper(GridFunction.constant(g, 0.0), F, 10.0)


def test_worst_cap_upper_is_attained():
    g = Grid(Cube.unit(2), 9)
    F = CompactSetMask.from_predicate(g, lambda x, y: (np.abs(x) < 0.2) & (np.abs(y) < 0.2))
    r, u = tb.worst_cap_upper_ratio(F)
    u = tb._zero_on(u, F)
    assert tb.check_cap_upper(u, F, r * (1 + 1e-6)).passed
    assert tb.check_cap_upper(u, F, r * 0.99).slack < 0


@given(seeds)
def test_magnetic_cap_upper_reduces_to_modulus(seed):
    rng = np.random.default_rng(seed)
    g = Grid(Cube.unit(2), 9)
    F = tb.random_cell_set(g, rng)
    u = tb._zero_on(tb.random_function(g, rng, complex_=True), F)
    a = MagneticPotential.from_field(g, lambda x, y: (np.sin(3 * y), np.cos(2 * x)))
    assert tb.check_cap_upper(u, F, 1e3, a).meta["diamagnetic_ok"]


def test_cutoff_refusal_and_mass():
    g = Grid(Cube.unit(2), 13)
    small = CompactSetMask.from_predicate(g, lambda x, y: (np.abs(x) < 0.05) & (np.abs(y) < 0.05))
    w = tb.build_cutoff(small, threshold=0.9, E=4.0, C_tilde=1.0)
    energy, mass = tb.check_cutoff(w)
    assert energy.passed and mass.passed and w.k is not None
    big = CompactSetMask.full(g)
    with pytest.raises(tb.CutoffRefused) as err:
        tb.build_cutoff(big, threshold=0.5)
    assert err.value.ratio == pytest.approx(1.0)
    empty = tb.build_cutoff(CompactSetMask.empty(g))
    assert empty.mass_ratio == 1.0


def test_restriction_extremal():
    g = Grid(Cube.unit(2), 9)
    R = CompactSetMask.from_predicate(g, lambda x, y: x < 0)
    r, u = tb.worst_restriction_ratio(R)
    assert tb.check_restriction(u, R, r * (1 + 1e-8)).passed
    assert tb.check_restriction(u, R, r * 0.99).slack < 0


def test_cap_dirichlet_input_checks():
    g = Grid(Cube.unit(2), 7)
    R = CompactSetMask.full(g)
    with pytest.raises(DomainError):
        tb.check_cap_dirichlet(GridFunction.constant(g, 1.0), R)
    u = tb.ambient_random_function(g, np.random.default_rng(0))
    assert tb.check_cap_dirichlet(u, R).passed
    with pytest.raises(DomainError):
        tb.check_cap_dirichlet(u, CompactSetMask.full(Grid(Cube.unit(3), 5)))


def test_two_term_required_constant_is_tight():
    V, gamma, q = next(iter(tb.structured_two_term(2)))
    M = molchanov_brute(q).value
    C, u = tb.two_term_required_constant(q.cap_grid, V, gamma, M)
    assert tb.check_two_term(u, V, gamma, C * (1 + 1e-6), M=M).passed
    assert tb.check_two_term(u, V, gamma, C * 0.98, M=M).slack < 0


def test_bridge_free_instance_forces_intercept():
    g = Grid(Cube.unit(2), 13)
    A, B, cases = tb.check_bridge([(g, None, None)] + tb.bridge_instances(np.random.default_rng(0), 2, 9, 4)[1:])
    from magspec.spectral import dirichlet_bottom

    assert B >= dirichlet_bottom(g).value * (1 - 1e-12)
    assert all(c.passed for c in cases)


def test_calibrate_then_validate_same_seed():
    ledger, fit = tb.calibrate(seed=11, count=6)
    assert ledger.revision == 1
    for key in ("cap_upper_C_n2", "two_term_C_n2", "cutoff_threshold_n2", "bridge_A_n2", "bridge_B_n2"):
        assert ledger.get(key) > 0
    res = tb.validate(ledger, seed=11, count=6)
    assert res.passed, [c.to_record() for c in res.failures]
    drift = [c for c in res.cases if c.name.startswith("drift")]
    assert drift and all(c.passed for c in drift)


def test_validate_needs_constants():
    with pytest.raises(ConfigError):
        tb.validate(ConstantsLedger(), seed=2, count=2)


def test_shipped_ledger_has_all_constants():
    led = default_ledger()
    for key in (
        "cap_Q1_n2", "cap_Q1_n3", "cap_upper_C_n2", "two_term_C_n2", "levelset_C_n2", "restriction_C_n2",
        "cutoff_Ctilde_n2", "cutoff_threshold_n2", "bridge_A_n2", "bridge_B_n2",
        "tetra_c1_n2", "tetra_C2_n2", "tetra_c1_n3", "tetra_C2_n3",
    ):
        assert led.get(key) > 0, key
    assert led.entries["cap_upper_C_n2"].run_id
