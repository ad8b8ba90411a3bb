"""On-disk formats: binary grid fields, CSV export and run-length mask text.

Binary field layout (little endian)::

    b"MAGF" | u16 version | u8 dim | u8 kind (0 real, 1 complex) | u32 m
    | f64 edge | f64 center[dim] | payload (f64 or c128, C order)

Mask text layout::

    # magspec mask v1
    dim 2
    m 9
    edge 1.0
    center 0.0 0.0
    runs 3:4 12:1

Runs are ``start:length`` over the C-ordered flat cell index.
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .lattice import CompactSetMask, Cube, Grid, GridFunction

__all__ = [
    "dumps",
    "clean",
    "save_field",
    "load_field",
    "export_csv",
    "mask_to_text",
    "mask_from_text",
    "save_mask",
    "load_mask",
]

MAGIC = b"MAGF"
VERSION = 1
_HEAD = struct.Struct("<4sHBBId")


def clean(obj):
    """JSON-ready copy: numpy scalars and arrays unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, complex):
        return [clean(obj.real), clean(obj.imag)]
    return obj


def dumps(obj) -> str:
    """Deterministic JSON text (sorted keys, strict: no NaN/Infinity tokens)."""
    return json.dumps(clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def save_field(path: str | Path, u: GridFunction) -> None:
    g = u.grid
    complex_ = np.iscomplexobj(u.values)
    head = _HEAD.pack(MAGIC, VERSION, g.dim, int(complex_), g.m, g.cube.edge)
    center = struct.pack(f"<{g.dim}d", *g.cube.center)
    dtype = "<c16" if complex_ else "<f8"
    Path(path).write_bytes(head + center + np.ascontiguousarray(u.values, dtype=dtype).tobytes())


def load_field(path: str | Path) -> GridFunction:
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size or raw[:4] != MAGIC:
        raise ConfigError(f"{path}: not a field file")
    magic, version, dim, kind, m, edge = _HEAD.unpack_from(raw)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported field version {version}")
    off = _HEAD.size
    center = struct.unpack_from(f"<{dim}d", raw, off)
    off += 8 * dim
    dtype = "<c16" if kind else "<f8"
    grid = Grid(Cube(center, edge), m)
    data = np.frombuffer(raw, dtype=dtype, offset=off)
    if data.size != grid.n_nodes:
        raise ConfigError(f"{path}: expected {grid.n_nodes} values, found {data.size}")
    return GridFunction(grid, data.reshape(grid.shape).copy())


def export_csv(u: GridFunction) -> str:
    """One row per node: coordinates then value (real, imag)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = u.grid.dim
    w.writerow([f"x{k + 1}" for k in range(n)] + ["re", "im"])
    coords = [c.ravel() for c in u.grid.coords()]
    vals = u.values.ravel()
    for i in range(vals.size):
        w.writerow([repr(float(c[i])) for c in coords] + [repr(float(vals[i].real)), repr(float(np.imag(vals[i])))])
    return buf.getvalue()


def _runs(flat: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate([[False], flat, [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(padded))
    return [(int(s), int(e - s)) for s, e in zip(edges[::2], edges[1::2])]


def mask_to_text(F: CompactSetMask) -> str:
    g = F.grid
    runs = " ".join(f"{s}:{n}" for s, n in _runs(F.cells.ravel()))
    lines = [
        "# magspec mask v1",
        f"dim {g.dim}",
        f"m {g.m}",
        f"edge {g.cube.edge!r}",
        "center " + " ".join(repr(c) for c in g.cube.center),
        f"runs {runs}".rstrip(),
    ]
    return "\n".join(lines) + "\n"


def mask_from_text(text: str) -> CompactSetMask:
    fields: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        fields[key] = (lineno, rest.strip())
    for k in ("dim", "m", "edge", "center", "runs"):
        if k not in fields:
            raise ConfigError("missing mask header", field=k)
    try:
        dim = int(fields["dim"][1])
        m = int(fields["m"][1])
        edge = float(fields["edge"][1])
        center = tuple(float(c) for c in fields["center"][1].split())
    except ValueError as exc:
        raise ConfigError(f"bad mask header: {exc}") from exc
    if len(center) != dim:
        raise ConfigError("center length differs from dim", field="center", line=fields["center"][0])
    grid = Grid(Cube(center, edge), m)
    flat = np.zeros(grid.n_cells, dtype=bool)
    line = fields["runs"][0]
    for tok in fields["runs"][1].split():
        try:
            s, n = (int(t) for t in tok.split(":"))
        except ValueError:
            raise ConfigError(f"bad run {tok!r}", field="runs", line=line) from None
        if s < 0 or n < 1 or s + n > flat.size:
            raise ConfigError(f"run {tok!r} out of range", field="runs", line=line)
        flat[s : s + n] = True
    return CompactSetMask(grid, flat.reshape(grid.cell_shape))


def save_mask(path: str | Path, F: CompactSetMask) -> None:
    Path(path).write_text(mask_to_text(F))


def load_mask(path: str | Path) -> CompactSetMask:
    return mask_from_text(Path(path).read_text())
