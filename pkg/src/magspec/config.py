"""Run configuration: one YAML (or JSON) file per run, validated before any compute.

Unknown keys are rejected.  Validation errors carry the dotted field path
and, when the file was YAML, the line the offending entry starts on.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError

__all__ = [
    "CubeSpec",
    "MaskSpec",
    "CapacityBlock",
    "EigenBlock",
    "MolchanovBlock",
    "PairSpec",
    "PositivityBlock",
    "DomainBlock",
    "ScanBlock",
    "VerifyBlock",
    "DemoBlock",
    "RunConfig",
    "COMMANDS",
    "load_config",
    "parse_config",
    "config_hash",
]

COMMANDS = ("capacity", "eigen", "molchanov", "scan", "verify", "demo-precision")
_BLOCK = {"capacity": "capacity", "eigen": "eigen", "molchanov": "molchanov", "scan": "scan",
          "verify": "verify", "demo-precision": "demo"}

Expr = Union[str, float]


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CubeSpec(_Model):
    center: list[float]
    edge: float = Field(gt=0)


class MaskSpec(_Model):
    """Exactly one of: the full cube, a point predicate, or an RLE mask file."""

    full: bool = False
    predicate: Optional[str] = None
    file: Optional[str] = None
    rule: Literal["center", "outer"] = "center"

    @model_validator(mode="after")
    def _one_source(self):
        if sum([self.full, self.predicate is not None, self.file is not None]) != 1:
            raise ValueError("give exactly one of full, predicate, file")
        return self


class _Spatial(_Model):
    dim: Literal[2, 3] = 2

    def _check_len(self, name: str, values) -> None:
        if values is not None and len(values) != self.dim:
            raise ValueError(f"{name} needs {self.dim} entries, got {len(values)}")


class CapacityBlock(_Spatial):
    cube: CubeSpec
    m: int = Field(17, ge=3)
    mask: MaskSpec = MaskSpec(full=True)
    ambient: Optional[CubeSpec] = None
    save_minimizer: bool = False

    @model_validator(mode="after")
    def _dims(self):
        self._check_len("cube.center", self.cube.center)
        if self.ambient is not None:
            self._check_len("ambient.center", self.ambient.center)
        return self


class EigenBlock(_Spatial):
    cube: CubeSpec
    m: int = Field(33, ge=3)
    kind: Literal["dirichlet", "neumann", "local"] = "dirichlet"
    field: Optional[list[Expr]] = None
    potential: Optional[Expr] = None
    tol: float = Field(1e-8, gt=0)
    save_vector: bool = False

    @model_validator(mode="after")
    def _dims(self):
        self._check_len("cube.center", self.cube.center)
        self._check_len("field", self.field)
        return self


class MolchanovBlock(_Spatial):
    cube: CubeSpec
    potential: Expr
    gamma: float = Field(ge=0, lt=1)
    cells: int = Field(4, ge=1)
    method: Literal["greedy", "brute"] = "greedy"
    quad: int = Field(2, ge=1)
    save_witness: bool = True

    @model_validator(mode="after")
    def _dims(self):
        self._check_len("cube.center", self.cube.center)
        return self


class PairSpec(_Model):
    """f as an expression in t (or "standard" for f_n) and g as an expression in d."""

    f: str = "standard"
    g: str = "d**2"


class PositivityBlock(_Model):
    variant: Literal["b", "c", "d", "e"]
    c: Optional[float] = None
    c_n: Optional[float] = None
    d: Optional[float] = None
    d1: Optional[float] = None
    d2: Optional[float] = None
    c_tilde: Optional[float] = None
    samples: int = Field(8, ge=1)
    extent: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _needed(self):
        need = {"b": ("c", "d", "d1"), "c": ("c_n", "d", "d1"), "d": ("c", "d2", "c_tilde"), "e": ("c_n", "d2", "c_tilde")}
        missing = [k for k in need[self.variant] if getattr(self, k) is None]
        if missing:
            raise ValueError(f"variant {self.variant} needs {missing}")
        return self


class DomainBlock(_Model):
    omega: str
    g: str = "d**2"
    c_n: float = Field(0.5, gt=0)


class ScanBlock(_Spatial):
    kind: Literal["discreteness", "necessary", "sufficient", "positivity", "domain"] = "discreteness"
    field: Optional[list[Expr]] = None
    potential: Expr = 0.0
    d_list: list[float] = [1.0]
    shells: int = Field(5, ge=2)
    m: int = Field(9, ge=3)
    cells: int = Field(2, ge=1)
    c_n: Optional[float] = None
    c: Optional[float] = None
    pairs: list[PairSpec] = [PairSpec()]
    spectra: bool = False
    positivity: Optional[PositivityBlock] = None
    domain: Optional[DomainBlock] = None

    @model_validator(mode="after")
    def _consistent(self):
        self._check_len("field", self.field)
        if self.kind == "positivity" and self.positivity is None:
            raise ValueError("kind positivity needs a positivity block")
        if self.kind == "domain" and self.domain is None:
            raise ValueError("kind domain needs a domain block")
        if self.kind == "sufficient" and self.c is None:
            raise ValueError("kind sufficient needs c")
        if any(d <= 0 for d in self.d_list):
            raise ValueError("d_list entries must be positive")
        return self


class VerifyBlock(_Model):
    mode: Literal["calibrate", "validate"]
    ledger: str
    dim: Literal[2] = 2
    m: int = Field(13, ge=5)
    count: int = Field(24, ge=1)


class DemoBlock(_Spatial):
    d: float = Field(1.0, gt=0)
    c_n: float = Field(1.0, gt=0)
    h: str = "1 + log(1 + t)"
    ceiling: float = Field(0.5, gt=0, lt=1)
    deltas: Optional[list[float]] = None
    shells: int = Field(5, ge=2)
    base_field: float = Field(100.0, ge=0)
    tetrahedron: bool = True
    mu0_scan: bool = True
    m_eig: Optional[int] = Field(None, ge=5)
    m_cap: Optional[int] = Field(None, ge=5)


class RunConfig(_Model):
    command: Optional[Literal["capacity", "eigen", "molchanov", "scan", "verify", "demo-precision"]] = None
    seed: int = 0
    workers: Optional[int] = Field(None, ge=1)
    output: str = "magspec-out"
    capacity: Optional[CapacityBlock] = None
    eigen: Optional[EigenBlock] = None
    molchanov: Optional[MolchanovBlock] = None
    scan: Optional[ScanBlock] = None
    verify: Optional[VerifyBlock] = None
    demo: Optional[DemoBlock] = None

    @model_validator(mode="after")
    def _blocks(self):
        present = [b for b in _BLOCK.values() if getattr(self, b) is not None]
        if self.command is not None:
            want = _BLOCK[self.command]
            if want not in present:
                raise ValueError(f"command {self.command} needs a '{want}' block")
        if len(present) > 1:
            raise ValueError(f"one command block per file, found {present}")
        return self

    def block(self, command: str):
        return getattr(self, _BLOCK[command])


# ---------------------------------------------------------------- loading


def _line_of(node, loc: tuple) -> int | None:
    """1-based line of the YAML node at ``loc`` (deepest existing ancestor)."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in loc:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == key:
                    nxt = v
                    line = k.start_mark.line + 1
                    break
            if nxt is None:
                return line
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
            line = node.start_mark.line + 1
        else:
            return line
    return line


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Validate configuration text; ``command`` (from the CLI) must agree with the file."""
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping", line=1)
    if command is not None:
        if raw.get("command", command) != command:
            raise ConfigError(f"file is for command {raw['command']!r}, not {command!r}", field="command",
                              line=_line_of(root, ("command",)))
        raw = {**raw, "command": command}
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))
        field = ".".join(str(p) for p in loc) or None
        msg = err["msg"].removeprefix("Value error, ")
        raise ConfigError(msg, field=field, line=_line_of(root, loc) if root is not None else None) from None


def load_config(path: str | Path, command: str | None = None) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"configuration file {p} does not exist")
    return parse_config(p.read_text(), command)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()
