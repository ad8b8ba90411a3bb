from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magspec import formats
from magspec.errors import ConfigError
from magspec.lattice import CompactSetMask, Cube, Grid, GridFunction
from magspec.ledger import ConstantsLedger


def test_dumps_is_strict_and_sorted():
    text = formats.dumps({"b": np.float64(math.inf), "a": [np.int64(2), float("nan"), 1 + 2j], "c": np.array([True])})
    body = json.loads(text)
    assert list(body) == ["a", "b", "c"]
    assert body["b"] == "inf" and body["a"] == [2, "nan", [1.0, 2.0]] and body["c"] == [True]


@given(st.integers(0, 2**32 - 1), st.booleans(), st.sampled_from([2, 3]))
def test_field_round_trip(tmp_path_factory, seed, complex_, n):
    rng = np.random.default_rng(seed)
    g = Grid(Cube(tuple(rng.uniform(-5, 5, n)), float(rng.uniform(0.1, 4))), int(rng.integers(3, 8)))
    v = rng.standard_normal(g.shape) + (1j * rng.standard_normal(g.shape) if complex_ else 0)
    path = tmp_path_factory.mktemp("f") / "u.magf"
    formats.save_field(path, GridFunction(g, v))
    back = formats.load_field(path)
    assert back.grid.key == g.key
    assert np.array_equal(back.values, v)


def test_field_errors(tmp_path):
    p = tmp_path / "bad.magf"
    p.write_bytes(b"nope")
    with pytest.raises(ConfigError):
        formats.load_field(p)


@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3]))
def test_mask_round_trip(seed, n):
    rng = np.random.default_rng(seed)
    g = Grid(Cube(tuple(rng.uniform(-5, 5, n)), float(rng.uniform(0.1, 4))), int(rng.integers(3, 9)))
    F = CompactSetMask(g, rng.random(g.cell_shape) < 0.4)
    back = formats.mask_from_text(formats.mask_to_text(F))
    assert back.grid.key == g.key
    assert np.array_equal(back.cells, F.cells)


def test_mask_errors_carry_line():
    g = Grid(Cube.unit(2), 4)
    text = formats.mask_to_text(CompactSetMask.full(g)).replace("runs 0:9", "runs 0:99")
    with pytest.raises(ConfigError) as err:
        formats.mask_from_text(text)
    assert err.value.line == 6 and err.value.field == "runs"
    with pytest.raises(ConfigError):
        formats.mask_from_text("dim 2\n")


def test_csv_export():
    g = Grid(Cube.unit(2), 3)
    rows = formats.export_csv(GridFunction.constant(g, 1 + 1j)).splitlines()
    assert rows[0] == "x1,x2,re,im" and len(rows) == 10
    assert rows[1].endswith("1.0,1.0")


def test_ledger_round_trip(tmp_path):
    led = ConstantsLedger()
    led.set("k", 1.5, "run-1", "note")
    led.revision = 3
    led.save(tmp_path / "l.json")
    back = ConstantsLedger.load(tmp_path / "l.json")
    assert back.get("k") == 1.5 and back.revision == 3 and back.entries["k"].run_id == "run-1"
    with pytest.raises(ConfigError):
        led.set("x", 1.0, "")
    with pytest.raises(ConfigError):
        ConstantsLedger.from_json("{")
    with pytest.raises(ConfigError):
        ConstantsLedger.load(tmp_path / "missing.json")
