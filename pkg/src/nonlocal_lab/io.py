"""CSV tables, text summaries and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from pathlib import Path


def fmt(v) -> str:
    """17 significant digits for floats, plain text for everything else."""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    try:
        return format(float(v), ".17g")
    except (TypeError, ValueError):
        return str(v)


def write_csv(path, rows, columns=None) -> Path:
    """UTF-8, LF line endings, header row."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt(r.get(c, "")) for c in columns])
    return path


def read_csv(path) -> list:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary(path, values: dict) -> Path:
    """JSON text block with sorted keys and 17-digit floats."""
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, bool) or v is None or isinstance(v, (int, str)):
            return v
        f = float(v)
        if f != f or f in (float("inf"), float("-inf")):
            return str(f)
        return float(fmt(f))

    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(clean(values), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numpy
    import scipy

    from . import __version__

    out = {"python": platform.python_version(), "numpy": numpy.__version__,
           "scipy": scipy.__version__, "nonlocal_lab": __version__}
    try:
        import matplotlib
        out["matplotlib"] = matplotlib.__version__
    except ImportError:
        pass
    return out


def write_manifest(out_dir, config: dict, command: str, seed: int, wall_time: float,
                   files, invariants: dict, status: int) -> Path:
    """manifest.json listing every emitted file with its SHA-256."""
    out_dir = Path(out_dir)
    entries = []
    for f in sorted(Path(p) for p in files):
        entries.append({"path": os.path.relpath(f, out_dir), "sha256": sha256(f),
                        "bytes": f.stat().st_size})
    doc = {"command": command, "seed": seed, "config": config, "versions": versions(),
           "wall_time_seconds": wall_time, "files": entries,
           "invariants": invariants, "exit_status": status}
    path = out_dir / "manifest.json"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path
