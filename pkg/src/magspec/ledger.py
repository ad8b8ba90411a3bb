"""Versioned store of empirically fitted constants."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError

__all__ = ["LedgerEntry", "ConstantsLedger", "run_id", "default_ledger"]

FORMAT_VERSION = 1


def run_id(label: str, seed: int, **params) -> str:
    """Deterministic identifier of a calibration run."""
    blob = json.dumps({"label": label, "seed": seed, **params}, sort_keys=True, default=str)
    return f"{label}-{seed}-{hashlib.sha256(blob.encode()).hexdigest()[:10]}"


@dataclass(frozen=True)
class LedgerEntry:
    value: float
    run_id: str
    note: str = ""


@dataclass
class ConstantsLedger:
    """Named constants, each tagged with the run that produced it."""

    entries: dict[str, LedgerEntry] = field(default_factory=dict)
    revision: int = 0

    def set(self, name: str, value: float, run: str, note: str = "") -> None:
        if not run:
            raise ConfigError("every ledger constant needs a run id", field=name)
        self.entries[name] = LedgerEntry(float(value), run, note)

    def get(self, name: str, default: float | None = None) -> float:
        if name in self.entries:
            return self.entries[name].value
        if default is None:
            raise ConfigError(f"constant {name!r} missing from ledger", field=name)
        return default

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def to_json(self) -> str:
        body = {
            "format": FORMAT_VERSION,
            "revision": self.revision,
            "constants": {k: asdict(v) for k, v in sorted(self.entries.items())},
        }
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ConstantsLedger":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"ledger is not valid JSON: {exc.msg}", line=exc.lineno) from None
        if raw.get("format") != FORMAT_VERSION:
            raise ConfigError(f"unsupported ledger format {raw.get('format')!r}", field="format")
        entries = {}
        for name, e in raw.get("constants", {}).items():
            if not e.get("run_id"):
                raise ConfigError("constant without run id", field=name)
            entries[name] = LedgerEntry(float(e["value"]), e["run_id"], e.get("note", ""))
        return cls(entries, int(raw.get("revision", 0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "ConstantsLedger":
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"ledger file {p} does not exist", field="ledger")
        return cls.from_json(p.read_text())


def default_ledger() -> ConstantsLedger:
    """The ledger shipped with the package (empty if absent)."""
    try:
        text = resources.files("magspec").joinpath("data/constants.json").read_text()
    except (FileNotFoundError, OSError):
        return ConstantsLedger()
    return ConstantsLedger.from_json(text)
