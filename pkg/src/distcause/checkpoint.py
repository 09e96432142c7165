"""Plain-text parameter checkpoints.

Layout (UTF-8, one record per line)::

    distcause-checkpoint 1
    kind <model kind>
    meta <key> <json value>            (zero or more)
    array <name> <ndim> <dim_1> ... <dim_ndim>
    <value>                            (prod(dims) lines, row-major)
    ...
    end

Values are written with ``float.hex`` so a save/load round trip is
bit-exact.  Array names may not contain whitespace.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = "distcause-checkpoint"
VERSION = 1


def dumps(kind: str, arrays: dict, meta: dict | None = None) -> str:
    lines = [f"{MAGIC} {VERSION}", f"kind {kind}"]
    for key, value in (meta or {}).items():
        lines.append(f"meta {key} {json.dumps(value)}")
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=float)
        lines.append(" ".join(["array", name, str(arr.ndim), *map(str, arr.shape)]))
        lines.extend(float(v).hex() for v in arr.ravel())
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads(text: str):
    """Parse a checkpoint; returns ``(kind, arrays, meta)``."""
    lines = text.splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != MAGIC:
        raise ValueError("not a distcause checkpoint")
    if int(head[1]) != VERSION:
        raise ValueError(f"unsupported checkpoint version {head[1]}")
    kind = None
    arrays, meta = {}, {}
    i = 1
    while i < len(lines):
        tok = lines[i].split(" ", 2)
        if tok[0] == "end":
            break
        if tok[0] == "kind":
            kind = tok[1]
        elif tok[0] == "meta":
            meta[tok[1]] = json.loads(tok[2])
        elif tok[0] == "array":
            parts = lines[i].split()
            name, ndim = parts[1], int(parts[2])
            shape = tuple(int(s) for s in parts[3 : 3 + ndim])
            size = int(np.prod(shape)) if ndim else 1
            vals = [float.fromhex(v) for v in lines[i + 1 : i + 1 + size]]
            arrays[name] = np.array(vals, dtype=float).reshape(shape)
            i += size
        else:
            raise ValueError(f"malformed checkpoint line {i + 1}")
        i += 1
    else:
        raise ValueError("truncated checkpoint")
    return kind, arrays, meta


def save(path, kind, arrays, meta=None):
    Path(path).write_text(dumps(kind, arrays, meta), encoding="utf-8")


def load(path):
    return loads(Path(path).read_text(encoding="utf-8"))
