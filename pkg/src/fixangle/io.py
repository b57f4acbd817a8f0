"""Portable text outputs: CSV tables with a metadata header, sorted JSON, checksums.

CSV layout::

    # fixangle-table/1
    # grid_x0: -1.03125
    # grid_h: 0.015625
    # ...
    index,x1,x2,omega,...
    0,-1.03125,-1.03125,...

Every float is written with ``%.17g`` so values round-trip exactly and
re-runs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError

TABLE_SCHEMA = "fixangle-table/1"


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def _plain(obj):
    """Convert numpy scalars and arrays inside ``obj`` to JSON-native values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if np.isfinite(f) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> Path:
    path = Path(path)
    _atomic_write(path, dumps_json(obj).encode())
    return path


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_table(path, columns: dict[str, np.ndarray], meta: dict | None = None, index: bool = True) -> Path:
    """Write equal-length columns as CSV with ``# key: value`` header lines."""
    path = Path(path)
    cols = {k: np.asarray(v).ravel() for k, v in columns.items()}
    lengths = {len(v) for v in cols.values()}
    if len(lengths) > 1:
        raise ConfigError(f"columns have different lengths {sorted(lengths)}")
    n = lengths.pop() if lengths else 0
    lines = [f"# {TABLE_SCHEMA}"]
    for k, v in (meta or {}).items():
        lines.append(f"# {k}: {json.dumps(_plain(v), sort_keys=True)}")
    names = (["index"] if index else []) + list(cols)
    lines.append(",".join(names))
    arrs = list(cols.values())
    for i in range(n):
        row = ([str(i)] if index else []) + [_fmt(a[i]) for a in arrs]
        lines.append(",".join(row))
    _atomic_write(path, ("\n".join(lines) + "\n").encode())
    return path


def read_table(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of :func:`write_table`: ``(meta, columns)``."""
    meta, header, rows = {}, None, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                k, v = body.split(":", 1)
                meta[k.strip()] = json.loads(v)
            continue
        if header is None:
            header = line.split(",")
            continue
        if line:
            rows.append(line.split(","))
    data = np.array(rows, dtype=float).reshape(-1, len(header or []))
    return meta, {name: data[:, j] for j, name in enumerate(header or [])}


def grid_meta(grid) -> dict:
    return {"grid_x0": grid.x0, "grid_h": grid.h, "grid_n": grid.n}


def write_grid_fields(path, grid, fields: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    """Per-node dump of gridded fields with the grid header."""
    p = grid.points()
    cols = {"x1": p[:, 0], "x2": p[:, 1], **{k: np.asarray(v).ravel() for k, v in fields.items()}}
    return write_table(path, cols, {**grid_meta(grid), **(meta or {})})


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def inventory(paths, root) -> list[dict]:
    """File list with sizes and checksums, relative to ``root``, sorted by name."""
    root = Path(root)
    out = []
    for p in sorted(Path(x) for x in paths):
        out.append({"path": str(p.relative_to(root)), "bytes": p.stat().st_size, "sha256": sha256(p)})
    return out


def verify_inventory(manifest: dict, root) -> list[str]:
    """Paths whose checksum no longer matches the manifest (missing files included)."""
    root = Path(root)
    bad = []
    for item in manifest.get("outputs", []):
        p = root / item["path"]
        if not p.exists() or sha256(p) != item["sha256"]:
            bad.append(item["path"])
    return bad
