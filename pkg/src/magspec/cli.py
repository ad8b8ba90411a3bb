"""Command-line entry point: ``magspec <command> CONFIG``.

Every run writes deterministic JSON/CSV bodies into the output directory and
a ``run.json`` record holding the config hash, versions, wall time and the
manifest of emitted files.  Exit codes: 0 all checks pass, 1 check failures,
2 configuration or domain errors, 3 solver non-convergence.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from . import capacity as _cap
from . import criteria, formats, molchanov, precision, spectral, testbench
from .config import COMMANDS, CubeSpec, RunConfig, config_hash, load_config
from .errors import (
    ConfigError,
    ConvergenceError,
    DomainError,
    GridMismatchError,
    InvalidResolutionError,
    SizeError,
    SolverError,
)
from .expressions import compile_predicate, compile_scalar, compile_univariate, compile_vector
from .lattice import CompactSetMask, Cube, DomainMask, Grid, MagneticPotential, ScalarPotential
from .ledger import ConstantsLedger, default_ledger

__all__ = ["main", "run", "RunRecord", "EXIT_OK", "EXIT_CHECK", "EXIT_CONFIG", "EXIT_SOLVER"]

log = logging.getLogger("magspec")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
_CONFIG_ERRORS = (ConfigError, DomainError, InvalidResolutionError, GridMismatchError, SizeError)
_SOLVER_ERRORS = (ConvergenceError, SolverError)


@dataclass
class RunRecord:
    command: str
    config_hash: str
    code_version: str
    ledger_revision: int
    started: str
    wall_time: float = 0.0
    exit_code: int = 0
    outputs: list[dict] = field(default_factory=list)


class _Outputs:
    """Writes artifacts and keeps the manifest."""

    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.entries: list[dict] = []

    def _record(self, path: Path, data: bytes, kind: str) -> None:
        rel = str(path.relative_to(self.root)) if path.is_relative_to(self.root) else str(path)
        self.entries = [e for e in self.entries if e["path"] != rel]
        self.entries.append({"path": rel, "kind": kind, "bytes": len(data), "sha256": hashlib.sha256(data).hexdigest()})

    def text(self, name: str, body: str, kind: str) -> Path:
        p = self.root / name
        p.write_text(body)
        self._record(p, body.encode(), kind)
        return p

    def json(self, name: str, obj) -> Path:
        return self.text(name, formats.dumps(obj), "json")

    def external(self, path: Path, kind: str) -> None:
        self._record(path, path.read_bytes(), kind)


def _cube(spec: CubeSpec) -> Cube:
    return Cube(tuple(spec.center), spec.edge)


def _potential(expr, dim: int, name: str = "potential") -> ScalarPotential | None:
    if expr is None:
        return None
    return ScalarPotential(func=compile_scalar(expr, dim, name), label=str(expr))


def _field(exprs, dim: int):
    return compile_vector(exprs, dim, "field") if exprs is not None else None


def _mask(spec, grid: Grid) -> CompactSetMask:
    if spec.full:
        return CompactSetMask.full(grid)
    if spec.predicate is not None:
        return CompactSetMask.from_predicate(grid, compile_predicate(spec.predicate, grid.dim, "mask.predicate"), spec.rule)
    F = formats.load_mask(spec.file)
    if F.grid.key != grid.key:
        raise ConfigError("mask file grid differs from the configured cube and m", field="mask.file")
    return F


# ------------------------------------------------------------------ commands


def cmd_capacity(cfg: RunConfig, out: _Outputs) -> int:
    b = cfg.capacity
    grid = Grid(_cube(b.cube), b.m)
    F = _mask(b.mask, grid)
    if F.is_empty:
        raise DomainError("mask is empty")
    ambient = _cube(b.ambient) if b.ambient is not None else None
    res = _cap.wiener_capacity(F, ambient)
    body = {
        "value": res.value,
        "relative_to": res.relative_to,
        "residual": res.residual,
        "convention": "discrete Dirichlet energy of the minimizer; u = 1 on F, 0 on the ambient boundary"
        + ("" if ambient is not None or grid.dim == 2 else " (far-field closure on the box)"),
        "cells": F.count,
        "measure": F.measure,
        "dim": grid.dim,
        "m": grid.m,
    }
    if ambient is None:
        rep = _cap.check_cap_measure(F)
        body["cap_measure"] = asdict(rep)
    out.json("capacity.json", body)
    out.text("mask.txt", formats.mask_to_text(F), "mask")
    if b.save_minimizer:
        formats.save_field(out.root / "minimizer.magf", res.minimizer)
        out.external(out.root / "minimizer.magf", "field")
    return EXIT_OK


def cmd_eigen(cfg: RunConfig, out: _Outputs) -> int:
    b = cfg.eigen
    grid = Grid(_cube(b.cube), b.m)
    rule = _field(b.field, b.dim)
    a = MagneticPotential.from_field(grid, rule) if rule is not None else None
    V = _potential(b.potential, b.dim)
    body: dict = {"kind": b.kind, "dim": b.dim, "m": b.m, "edge": b.cube.edge}
    vec = None
    if b.kind == "local":
        le = spectral.local_energy(grid, a, tol=b.tol, seed=cfg.seed)
        body.update({"mu0": le.mu0, "mu0_tilde": le.mu0_tilde, "residual": le.residual})
    else:
        fn = spectral.dirichlet_bottom if b.kind == "dirichlet" else spectral.neumann_bottom
        res = fn(grid, a, V, tol=b.tol, seed=cfg.seed, keep_vector=b.save_vector)
        body.update({"value": res.value, "residual": res.residual, "iterations": res.iterations})
        if b.kind == "dirichlet" and rule is None and V is None:
            body["reference"] = b.dim * math.pi**2 / b.cube.edge**2
        if b.save_vector:
            vec = res.eigenfunction(grid)
    out.json("eigen.json", body)
    if vec is not None:
        formats.save_field(out.root / "eigenfunction.magf", vec)
        out.external(out.root / "eigenfunction.magf", "field")
        out.text("eigenfunction.csv", formats.export_csv(vec), "csv")
    return EXIT_OK


def cmd_molchanov(cfg: RunConfig, out: _Outputs) -> int:
    b = cfg.molchanov
    q = molchanov.MolchanovQuery(_cube(b.cube), _potential(b.potential, b.dim), b.gamma, b.cells, quad=b.quad)
    res = (molchanov.molchanov_brute if b.method == "brute" else molchanov.molchanov_greedy)(q)
    body = {**res.to_record(), "gamma": b.gamma, "cells": b.cells, "capacity_grid_m": q.cap_grid.m}
    out.json("molchanov.json", body)
    if b.save_witness:
        out.text("witness.txt", formats.mask_to_text(res.witness), "mask")
    return EXIT_OK


def _pair(spec, n: int) -> criteria.AdmissiblePair:
    if spec.f == "standard":
        f = lambda t: float(criteria.f_n(t, n))  # noqa: E731
    else:
        f = compile_univariate(spec.f, "t", "pairs.f")
    g = compile_univariate(spec.g, "d", "pairs.g")
    return criteria.AdmissiblePair(f, g, n, f"f={spec.f}, g={spec.g}")


def cmd_scan(cfg: RunConfig, out: _Outputs, workers: int | None) -> int:
    b = cfg.scan
    n = b.dim
    rule = _field(b.field, n)
    V = _potential(b.potential, n)
    if b.kind == "positivity":
        p = b.positivity
        params = {k: v for k, v in p.model_dump().items() if k not in ("variant", "samples", "extent") and v is not None}
        rep = criteria.positivity_check(rule, V, p.variant, params, n=n, samples=p.samples, extent=p.extent,
                                        seed=cfg.seed, m=b.m, cells=b.cells)
        out.json("positivity.json", {**asdict(rep), "agree": rep.agree})
        return EXIT_OK if rep.agree else EXIT_CHECK
    if b.kind == "domain":
        dm = b.domain
        omega = DomainMask(compile_predicate(dm.omega, n, "domain.omega"), dm.omega)
        g = compile_univariate(dm.g, "d", "domain.g")
        reps = criteria.domain_geometry_check(omega, g, dm.c_n, b.d_list, b.shells, n, m=b.m)
        out.json("domain.json", {"reports": [asdict(r) for r in reps], "holds": all(r.holds for r in reps)})
        return EXIT_OK
    if b.kind == "necessary":
        reps = [criteria.check_necessary(rule, V, d, b.shells, n, m=b.m, workers=workers) for d in b.d_list]
    elif b.kind == "sufficient":
        reps = [criteria.check_sufficient(rule, V, b.c, b.d_list, b.shells, n, m=b.m, cells=b.cells, workers=workers)]
    else:
        reps = [
            criteria.scan_discreteness(rule, V, _pair(ps, n), b.c_n, b.d_list, b.shells, m=b.m, cells=b.cells,
                                       spectra=b.spectra, workers=workers)
            for ps in b.pairs
        ]
    summary = {"kind": b.kind, "verdicts_b": [r.verdict_b for r in reps], "verdicts_c": [r.verdict_c for r in reps]}
    summary["pairs_agree"] = len(set(summary["verdicts_b"])) <= 1 and len(set(summary["verdicts_c"])) <= 1
    out.json("scan.json", summary)
    for i, r in enumerate(reps):
        out.text(f"report_{i}.json", r.to_json(), "json")
        out.text(f"cubes_{i}.csv", r.to_csv(), "csv")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, out: _Outputs) -> int:
    b = cfg.verify
    path = Path(b.ledger)
    if b.mode == "calibrate":
        ledger, suite = testbench.calibrate(cfg.seed, b.dim, b.m, b.count)
        ledger.save(path)
        out.external(path, "ledger")
        out.json("calibration.json", {"seed": cfg.seed, "run": suite.run, "fits": suite.constants,
                                      "ledger": str(path), "revision": ledger.revision})
        return EXIT_OK
    ledger = ConstantsLedger.load(path)
    res = testbench.validate(ledger, cfg.seed, b.dim, b.m, b.count)
    out.json("validation.json", {
        "seed": cfg.seed, "run": res.run, "passed": res.passed,
        "counts": {k: {"passed": v[0], "total": v[1]} for k, v in res.counts().items()},
        "failures": [c.to_record() for c in res.failures],
    })
    rows = ["name,lhs,rhs,slack,tolerance,passed"]
    rows += [f"{c.name},{c.lhs!r},{c.rhs!r},{c.slack!r},{c.tolerance!r},{int(c.passed)}" for c in res.cases]
    out.text("cases.csv", "\n".join(rows) + "\n", "csv")
    return EXIT_OK if res.passed else EXIT_CHECK


def cmd_demo(cfg: RunConfig, out: _Outputs) -> int:
    b = cfg.demo
    h = compile_univariate(b.h, "t", "demo.h")
    profile = precision.PrecisionProfile(h, b.dim, b.ceiling, b.h)
    op = precision.HalfspaceOperator.default(b.dim, b.base_field)
    rep = precision.demonstrate_precision(profile, b.d, b.c_n, op, b.deltas, b.shells, m_eig=b.m_eig, m_cap=b.m_cap)
    body = rep.to_record()
    if b.tetrahedron:
        sw = precision.tetrahedron_sweep(b.d, b.dim)
        out.text("tetrahedron.csv", sw.to_csv(), "csv")
        body["tetrahedron"] = {"slope": sw.slope, "intercept": sw.intercept, "max_rel_residual": sw.max_rel_residual,
                               "fit": "log cap vs log delta" if b.dim >= 3 else "1/cap vs log(2d/delta)"}
    if b.mu0_scan:
        deltas = [b.d * f for f in (1.0, 0.5, 0.25, 0.125)]
        shift = rep.points[0].shift if rep.points else 2 * b.d
        sc = precision.mu0_delta_scan(op, b.d, deltas, b.m_eig, shift)
        out.text("mu0_delta.csv", sc.to_csv(), "csv")
        body["mu0_scan"] = {"C_fit": sc.C_fit, "exponent": sc.exponent, "fit_residual": sc.fit_residual,
                            "bounded": sc.bounded}
    out.json("precision.json", body)
    out.text("sequence.csv", rep.to_csv(), "csv")
    return EXIT_OK


# ---------------------------------------------------------------------- main


def run(command: str, cfg: RunConfig, output: Path, workers: int | None = None) -> tuple[int, RunRecord]:
    """Execute a validated configuration; errors propagate to the caller."""
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    out = _Outputs(output)
    workers = workers or cfg.workers or criteria.default_workers()
    handlers = {
        "capacity": lambda: cmd_capacity(cfg, out),
        "eigen": lambda: cmd_eigen(cfg, out),
        "molchanov": lambda: cmd_molchanov(cfg, out),
        "scan": lambda: cmd_scan(cfg, out, workers),
        "verify": lambda: cmd_verify(cfg, out),
        "demo-precision": lambda: cmd_demo(cfg, out),
    }
    code = handlers[command]()
    rec = RunRecord(command, config_hash(cfg), __version__, default_ledger().revision, started,
                    time.perf_counter() - t0, code, list(out.entries))
    (output / "run.json").write_text(formats.dumps(asdict(rec)))
    return code, rec


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magspec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"magspec {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("config", help="YAML or JSON run configuration")
        s.add_argument("-o", "--output", help="output directory (overrides the config)")
        s.add_argument("-j", "--workers", type=int, help="parallel workers (default: config, then MAGSPEC_WORKERS)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.command)
        output = Path(args.output or cfg.output)
        code, rec = run(args.command, cfg, output, args.workers)
    except _CONFIG_ERRORS as exc:
        print(f"magspec: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"magspec: solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    status = {EXIT_OK: "ok", EXIT_CHECK: "check failures"}[code]
    print(f"magspec {args.command}: {status}; {len(rec.outputs)} files in {output} ({rec.wall_time:.1f} s)")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
