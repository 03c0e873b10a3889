"""Self-describing text outputs written atomically (temp file, then rename)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__


def header(config_hash: str, seed, extra: dict | None = None) -> dict:
    out = {"config_hash": config_hash, "code_version": __version__, "seed": seed}
    out.update(extra or {})
    return out


def _atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, complex):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_csv(path, meta: dict, columns, rows) -> Path:
    """``# key: value`` header lines, then a CSV table."""
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {_fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        if isinstance(r, dict):
            r = [r.get(c, "") for c in columns]
        w.writerow([_fmt(x) for x in r])
    return _atomic_write(path, buf.getvalue())


def read_csv(path) -> tuple[dict, list[dict]]:
    meta, lines = {}, []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# "):
                k, _, v = line[2:].rstrip("\n").partition(": ")
                meta[k] = v
            else:
                lines.append(line)
    rows = list(csv.DictReader(lines))
    return meta, rows


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _clean(o):
    # JSON has no inf/nan; keep them readable as strings
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)) and not math.isfinite(float(o)):
        return str(float(o))
    return o


def write_json(path, data: dict) -> Path:
    text = json.dumps(_clean(data), default=_json_default, sort_keys=True, indent=2) + "\n"
    return _atomic_write(path, text)


def write_dat(path, meta: dict, columns, rows) -> Path:
    """Whitespace-separated columns with ``#`` comments, readable by gnuplot."""
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {_fmt(v)}\n")
    buf.write("# " + " ".join(columns) + "\n")
    for r in rows:
        buf.write(" ".join(_fmt(x) for x in r) + "\n")
    return _atomic_write(path, buf.getvalue())
