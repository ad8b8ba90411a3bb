from __future__ import annotations

import json
from pathlib import Path

import pytest

from magspec.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from magspec.ledger import ConstantsLedger, default_ledger

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


EIGEN = """\
eigen:
  dim: 2
  cube: {center: [0.0, 0.0], edge: 1.0}
  m: 17
  save_vector: true
"""


def _bodies(root: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.name != "run.json"}


def test_eigen_run_writes_manifest_and_is_idempotent(tmp_path):
    cfg = _write(tmp_path, "e.yaml", EIGEN)
    assert main(["eigen", cfg, "-o", str(tmp_path / "a")]) == EXIT_OK
    assert main(["eigen", cfg, "-o", str(tmp_path / "b"), "-j", "2"]) == EXIT_OK
    assert _bodies(tmp_path / "a") == _bodies(tmp_path / "b")
    rec = json.loads((tmp_path / "a" / "run.json").read_text())
    assert rec["command"] == "eigen" and rec["exit_code"] == 0
    assert {o["path"] for o in rec["outputs"]} == {"eigen.json", "eigenfunction.magf", "eigenfunction.csv"}
    assert all(len(o["sha256"]) == 64 for o in rec["outputs"])
    body = json.loads((tmp_path / "a" / "eigen.json").read_text())
    assert body["value"] == pytest.approx(body["reference"], rel=0.01)


@pytest.mark.parametrize("name", ["capacity_unit_cube", "molchanov_gamma0", "scan_free", "positivity_b"])
def test_shipped_configs_run(tmp_path, name):
    assert main([name.split("_")[0] if name != "positivity_b" else "scan", str(CONFIGS / f"{name}.yaml"),
                 "-o", str(tmp_path)]) == EXIT_OK


def test_config_errors_exit_2(tmp_path, capsys):
    bad = _write(tmp_path, "bad.yaml", EIGEN.replace("m: 17", "m: 1"))
    assert main(["eigen", bad, "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "eigen.m" in err and "line 4" in err
    assert main(["eigen", str(tmp_path / "none.yaml")]) == EXIT_CONFIG
    expr = _write(tmp_path, "x.yaml", EIGEN + "  potential: 'y**2'\n")
    assert main(["eigen", expr, "-o", str(tmp_path / "o")]) == EXIT_CONFIG


def test_solver_failure_exit_3(tmp_path):
    cfg = _write(tmp_path, "e.yaml", EIGEN + "  tol: 1.0e-30\n")
    assert main(["eigen", cfg, "-o", str(tmp_path / "o")]) == EXIT_SOLVER


def test_verify_validate_missing_ledger_exit_2(tmp_path):
    cfg = _write(tmp_path, "v.yaml", f"verify: {{mode: validate, ledger: {tmp_path / 'absent.json'}}}\n")
    assert main(["verify", cfg, "-o", str(tmp_path / "o")]) == EXIT_CONFIG


def test_verify_check_failures_exit_1(tmp_path):
    led = default_ledger()
    tight = ConstantsLedger(revision=led.revision)
    for k, e in led.entries.items():
        scale = 1.0 if k.startswith(("fit_", "cap_Q1", "tetra", "cutoff_threshold")) else 0.01
        tight.set(k, e.value * scale, e.run_id, e.note)
    tight.save(tmp_path / "tight.json")
    cfg = _write(tmp_path, "v.yaml", f"seed: 5\nverify: {{mode: validate, ledger: {tmp_path / 'tight.json'}, count: 2}}\n")
    assert main(["verify", cfg, "-o", str(tmp_path / "o")]) == EXIT_CHECK
    body = json.loads((tmp_path / "o" / "validation.json").read_text())
    assert not body["passed"] and body["failures"]


def test_verify_calibrate_then_validate(tmp_path):
    ledger = tmp_path / "led.json"
    cal = _write(tmp_path, "c.yaml", f"seed: 4\nverify: {{mode: calibrate, ledger: {ledger}, count: 4}}\n")
    assert main(["verify", cal, "-o", str(tmp_path / "c")]) == EXIT_OK
    assert ConstantsLedger.load(ledger).get("bridge_A_n2") > 0
    val = _write(tmp_path, "v.yaml", f"seed: 4\nverify: {{mode: validate, ledger: {ledger}, count: 4}}\n")
    assert main(["verify", val, "-o", str(tmp_path / "v")]) == EXIT_OK


def test_scan_with_two_pairs(tmp_path):
    assert main(["scan", str(CONFIGS / "scan_oscillator.yaml"), "-o", str(tmp_path)]) == EXIT_OK
    body = json.loads((tmp_path / "scan.json").read_text())
    assert body["verdicts_b"] == [True, True] and body["pairs_agree"]


def test_demo_precision_planar(tmp_path):
    cfg = _write(tmp_path, "d.yaml", "demo: {dim: 2, m_eig: 17, m_cap: 17, tetrahedron: false}\n")
    assert main(["demo-precision", cfg, "-o", str(tmp_path / "o")]) == EXIT_OK
    body = json.loads((tmp_path / "o" / "precision.json").read_text())
    assert body["found"] and body["condition_fails"] and body["mu0_scan"]["bounded"]


def test_version(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert "magspec" in capsys.readouterr().out
