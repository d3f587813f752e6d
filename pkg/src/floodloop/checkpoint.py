"""Versioned plain-text checkpoints.

Layout::

    floodloop-checkpoint 1
    kind <sa|stf>
    meta <json object on one line>
    param <name> <dim0>x<dim1>x...
    <row of %.17g floats>
    ...
    end

Floats are written with 17 significant digits so 64-bit values round-trip
exactly.  Parameters are written in sorted-name order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_ID = "floodloop-checkpoint"
FORMAT_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps(kind: str, meta: dict, params: dict[str, np.ndarray]) -> str:
    lines = [f"{FORMAT_ID} {FORMAT_VERSION}", f"kind {kind}", "meta " + json.dumps(meta, sort_keys=True)]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)
        shape = "x".join(str(n) for n in arr.shape) or "scalar"
        lines.append(f"param {name} {shape}")
        rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim else arr.reshape(1, 1)
        for row in rows:
            lines.append(" ".join(_fmt(v) for v in row))
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[str, dict, dict[str, np.ndarray]]:
    lines = text.splitlines()
    head = lines[0].split()
    if len(head) != 2 or head[0] != FORMAT_ID:
        raise ValueError("not a floodloop checkpoint")
    if int(head[1]) != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {head[1]}")
    kind = lines[1].split(maxsplit=1)[1]
    meta = json.loads(lines[2].split(maxsplit=1)[1])
    params: dict[str, np.ndarray] = {}
    i = 3
    while lines[i] != "end":
        _, name, shape_s = lines[i].split()
        shape = () if shape_s == "scalar" else tuple(int(n) for n in shape_s.split("x"))
        n_rows = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
        rows = [np.array(lines[i + 1 + r].split(), dtype=np.float64) for r in range(n_rows)]
        params[name] = np.concatenate(rows).reshape(shape)
        i += 1 + n_rows
    return kind, meta, params


def save(path: str | Path, kind: str, meta: dict, params: dict[str, np.ndarray]) -> None:
    Path(path).write_text(dumps(kind, meta, params))


def load(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_text())
