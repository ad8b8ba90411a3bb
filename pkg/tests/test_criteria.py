from __future__ import annotations

import json
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from magspec.criteria import (
    AdmissiblePair,
    check_necessary,
    check_sufficient,
    default_gamma_constant,
    domain_geometry_check,
    f_n,
    positivity_check,
    scan_discreteness,
    tiling,
    validate_pair,
)
from magspec.errors import DomainError
from magspec.lattice import DomainMask, ScalarPotential
from magspec.ledger import ConstantsLedger

OSC = ScalarPotential(lambda x, y: x * x + y * y)


def test_f_n_values():
    assert f_n(0.0, 2) == 1.0 and f_n(0.0, 3) == 1.0
    assert f_n(math.e - 1, 2) == pytest.approx(0.5)
    assert f_n(3.0, 3) == pytest.approx(0.5)
    assert f_n(8.0, 4) == pytest.approx(1 / 9)


@given(st.floats(0, 1e6), st.sampled_from([2, 3, 4]))
def test_f_n_in_unit_interval_and_decreasing(t, n):
    assert 0 < f_n(t, n) <= 1
    assert f_n(t + 1, n) <= f_n(t, n)


def test_standard_pair_is_admissible():
    for n in (2, 3):
        rep = validate_pair(AdmissiblePair.standard(n))
        assert rep.valid and not rep.precision_profile


@pytest.mark.parametrize(
    "f,g,needle",
    [
        (lambda t: 1.0, lambda d: d * d, "exceeds f_n"),
        (lambda t: 0.5 * f_n(t, 2) * (1 + (t > 1)), lambda d: d * d, "increases"),
        (lambda t: 0.0, lambda d: d * d, "not positive"),
        (lambda t: 0.5 * f_n(t, 2), lambda d: d * d / 2, "exceeds 1"),
        (lambda t: 0.5 * f_n(t, 2), lambda d: 1.0 + d * d, "does not tend to 0"),
    ],
)
def test_inadmissible_pairs(f, g, needle):
    rep = validate_pair(AdmissiblePair(f, g, 2))
    assert not rep.valid
    assert any(needle in v for v in rep.violations)


def test_precision_profile_is_flagged():
    h = lambda t: 1 + math.log1p(t)  # noqa: E731
    rep = validate_pair(AdmissiblePair(lambda t: min(0.5, f_n(t, 3) * h(t)), lambda d: d * d, 3))
    assert rep.precision_profile and not rep.valid


def test_tiling_covers_shells():
    cubes = tiling(1.0, 3, 2)
    assert len(cubes) == 36
    shells = [s for _, s in cubes]
    assert shells == sorted(shells)
    assert shells.count(0) == 4 and shells.count(2) == 20
    assert all(c.edge == 1.0 for c, _ in cubes)


def test_default_gamma_constant_reads_ledger():
    led = ConstantsLedger()
    led.set("cutoff_threshold_n2", 0.123, "run")
    assert default_gamma_constant(led, 2) == 0.123
    assert default_gamma_constant(ConstantsLedger(), 2) > 0


def test_oscillator_scan_grows_and_free_scan_vanishes():
    P = AdmissiblePair.standard(2)
    osc = scan_discreteness(None, OSC, P, c_n=0.5, shells=5)
    minima = osc.summaries[0].minima
    assert len(minima) == 5 and all(b > a for a, b in zip(minima, minima[1:]))
    assert osc.verdict_b and osc.verdict_c
    free = scan_discreteness(None, ScalarPotential.zero(), P, c_n=0.5, shells=5)
    assert free.summaries[0].minima == (0.0,) * 5
    assert not free.verdict_b


def test_report_serialisation_is_deterministic():
    rep = scan_discreteness(None, OSC, AdmissiblePair.standard(2), c_n=0.5, shells=2)
    text = rep.to_json()
    assert text == scan_discreteness(None, OSC, AdmissiblePair.standard(2), c_n=0.5, shells=2, workers=2).to_json()
    body = json.loads(text)
    assert body["kind"] == "discreteness"
    assert rep.to_csv().splitlines()[0].startswith("d,shell,center")


def test_inadmissible_pair_refused():
    with pytest.raises(DomainError):
        scan_discreteness(None, OSC, AdmissiblePair(lambda t: 1.0, lambda d: d * d, 2))


def test_necessary_and_sufficient():
    claimed = scan_discreteness(None, OSC, AdmissiblePair.standard(2), c_n=0.5, shells=3)
    nec = check_necessary(None, OSC, 1.0, 3, 2, claimed=claimed)
    assert nec.verdict_b and nec.params["inconsistent"] is False
    suf = check_sufficient(None, OSC, 0.3, [1.0], 3, 2)
    assert suf.verdict_b
    with pytest.raises(DomainError):
        check_sufficient(None, OSC, 1.0, [1.0], 3, 2)


def test_magnetic_field_alone_can_grow():
    field = lambda x, y: (-0.5 * (x * x + y * y) * y, 0.5 * (x * x + y * y) * x)  # noqa: E731
    rep = check_necessary(field, ScalarPotential.zero(), 1.0, 4, 2)
    minima = rep.summaries[0].minima
    assert minima[-1] > 2 * minima[0] > 0


def test_positivity_variants():
    one, zero = ScalarPotential.constant(1.0), ScalarPotential.zero()
    ok = positivity_check(None, one, "b", {"c": 0.3, "d": 1.0, "d1": 1.0}, samples=3)
    assert ok.passed and ok.localization_passed and ok.agree
    bad = positivity_check(None, zero, "b", {"c": 0.3, "d": 1.0, "d1": 1.0}, samples=3)
    assert not bad.passed and bad.agree
    e = positivity_check(None, one, "e", {"c_n": 0.3, "d2": 1.0, "c_tilde": 0.5}, samples=3)
    assert e.passed
    with pytest.raises(DomainError):
        positivity_check(None, one, "z", {})


def test_domain_geometry():
    disc = DomainMask(lambda x, y: x * x + y * y < 1.5**2)
    rep = domain_geometry_check(disc, lambda d: d * d, 0.3, [1.0], 3, 2)[0]
    assert rep.shell_fraction[0] == 0.0 and rep.shell_fraction[-1] == 1.0
    assert rep.holds
    whole = domain_geometry_check(DomainMask.everywhere(), lambda d: d * d, 0.3, [1.0], 2, 2)[0]
    assert not whole.holds
