from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magspec.capacity import wiener_capacity
from magspec.errors import DomainError, SizeError
from magspec.lattice import CompactSetMask, Cube, DomainMask, ScalarPotential, integrate
from magspec.molchanov import (
    MolchanovQuery,
    mandatory_from_domain,
    molchanov_brute,
    molchanov_greedy,
    negligibility_test,
)

seeds = st.integers(0, 2**32 - 1)


def _random_V(rng):
    c = rng.uniform(0.2, 3.0, 4)
    return ScalarPotential(lambda x, y: c[0] * (1 + np.sin(c[1] * 3 * x + c[3]) * np.cos(c[2] * 3 * y)) ** 2)


def _query(rng, cells=3):
    cube = Cube(tuple(rng.uniform(-2, 2, 2)), float(rng.choice([0.5, 1.0, 2.0])))
    return MolchanovQuery(cube, _random_V(rng), float(rng.uniform(0.02, 0.95)), cells)


def test_gamma_zero_keeps_full_integral():
    V = ScalarPotential(lambda x, y: 1 + x * x)
    q = MolchanovQuery(Cube.unit(2), V, 0.0, 3)
    full = integrate(V, CompactSetMask.full(q.cap_grid), q.quad)
    for f in (molchanov_brute, molchanov_greedy):
        r = f(q)
        assert r.value == pytest.approx(full, rel=1e-12)
        assert r.witness.is_empty


def test_zero_potential_gives_zero():
    q = MolchanovQuery(Cube.unit(2), ScalarPotential.zero(), 0.5, 3)
    assert molchanov_greedy(q).value == 0.0
    assert molchanov_brute(q).value == 0.0


def test_frozen_instance():
    V = ScalarPotential(lambda x, y: np.exp(2 * x) * (1 + y * y))
    q = MolchanovQuery(Cube.unit(2), V, 0.4, 3)
    b = molchanov_brute(q)
    assert b.value == pytest.approx(molchanov_greedy(q).value, rel=1e-12)
    assert b.cap_used <= 0.4 * b.cap_cube
    assert b.value < integrate(V, CompactSetMask.full(q.cap_grid), q.quad)


@given(seeds)
def test_greedy_upper_bounds_brute(seed):
    rng = np.random.default_rng(seed)
    q = _query(rng)
    b = molchanov_brute(q)
    g = molchanov_greedy(q)
    assert b.value <= g.value * (1 + 1e-12) + 1e-15
    assert g.value <= 1.5 * b.value + 1e-12


@given(seeds)
def test_witness_respects_budget_and_value(seed):
    rng = np.random.default_rng(seed)
    q = _query(rng)
    r = molchanov_greedy(q)
    assert r.cap_used <= q.gamma * r.cap_cube * (1 + 1e-12)
    rest = CompactSetMask(r.witness.grid, ~r.witness.cells)
    assert r.value == pytest.approx(integrate(q.V, rest, q.quad), rel=1e-10, abs=1e-14)
    ref = CompactSetMask(q.cap_grid, r.witness.cells)
    if not ref.is_empty:
        assert wiener_capacity(ref).value == pytest.approx(r.cap_used, rel=1e-8)


@given(seeds)
def test_gamma_monotonicity(seed):
    rng = np.random.default_rng(seed)
    q = _query(rng)
    gammas = np.linspace(0.0, 0.95, 8)
    for f in (molchanov_brute, molchanov_greedy):
        vals = [f(q.with_gamma(float(gm))).value for gm in gammas]
        assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_domain_errors():
    V = ScalarPotential.constant(1.0)
    with pytest.raises(DomainError):
        MolchanovQuery(Cube.unit(2), V, 1.0)
    with pytest.raises(DomainError):
        MolchanovQuery(Cube.unit(2), V, 0.5, cells=0)
    with pytest.raises(SizeError):
        molchanov_brute(MolchanovQuery(Cube.unit(2), V, 0.5, cells=5))


def test_mandatory_set_and_infeasibility():
    cube = Cube.unit(2, 2.0)
    omega = DomainMask(lambda x, y: x < 0.5)
    mand = mandatory_from_domain(cube, omega, 3)
    V = ScalarPotential.constant(1.0)
    tight = MolchanovQuery(cube, V, 0.01, 3, mandatory=mand)
    r = molchanov_greedy(tight)
    assert r.infeasible and math.isinf(r.value)
    loose = MolchanovQuery(cube, V, 0.95, 3, mandatory=mand)
    r = molchanov_brute(loose)
    assert not r.infeasible and mand.issubset(r.witness)


def test_negligibility():
    q = MolchanovQuery(Cube.unit(2), ScalarPotential.constant(1.0), 0.5, 3)
    F = CompactSetMask.from_predicate(q.cap_grid, lambda x, y: (np.abs(x) < 0.1) & (np.abs(y) < 0.1))
    assert negligibility_test(F, 0.9)
    assert not negligibility_test(F, 0.01)
    assert negligibility_test(CompactSetMask.empty(q.cap_grid), 0.0)
    with pytest.raises(DomainError):
        negligibility_test(F, 0.5, Cube.unit(2, 3.0))
