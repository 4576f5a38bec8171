"""Plain-text checkpoint format shared by the classifier, policy and budget heads.

Layout::

    OCS-CKPT v1
    kind=linear_classifier
    seed=0
    ...                      # further key=value metadata
    tensor=W rows=4 cols=8
    <row 0 values>
    ...

Values are written with 17 significant digits, which round-trips float64
exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core import ConfigError, atomic_write_text, fmt_float

MAGIC = "OCS-CKPT v1"


def dumps(kind: str, tensors: dict[str, np.ndarray], meta: dict | None = None) -> str:
    lines = [MAGIC, f"kind={kind}"]
    for k, v in sorted((meta or {}).items()):
        if k in ("kind", "tensor"):
            raise ValueError(f"reserved metadata key {k!r}")
        lines.append(f"{k}={v}")
    for name, arr in tensors.items():
        src = np.asarray(arr, dtype=np.float64)
        if src.ndim > 2:
            raise ValueError(f"tensor {name!r} has ndim {src.ndim} > 2")
        a = src.reshape(1, -1) if src.ndim < 2 else src
        rows, cols = a.shape
        lines.append(f"tensor={name} rows={rows} cols={cols} ndim={src.ndim}")
        for row in a:
            lines.append(" ".join(fmt_float(x) for x in row))
    return "\n".join(lines) + "\n"


def loads(text: str) -> tuple[str, dict[str, np.ndarray], dict[str, str]]:
    lines = text.splitlines()
    if not lines or lines[0] != MAGIC:
        raise ConfigError("checkpoint", "missing OCS-CKPT v1 header")
    kind = None
    meta: dict[str, str] = {}
    tensors: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line:
            continue
        if line.startswith("tensor="):
            fields = dict(part.split("=", 1) for part in line.split())
            rows, cols = int(fields["rows"]), int(fields["cols"])
            ndim = int(fields.get("ndim", 2))
            block = lines[i:i + rows]
            if len(block) != rows:
                raise ConfigError("checkpoint", f"truncated tensor {fields['tensor']}")
            i += rows
            a = np.array([[float(x) for x in row.split()] for row in block], dtype=np.float64)
            a = a.reshape(rows, cols)
            if ndim == 0:
                a = a.reshape(())
            elif ndim == 1:
                a = a.reshape(cols)
            tensors[fields["tensor"]] = a
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError("checkpoint", f"bad metadata line {line!r}")
        if key == "kind":
            kind = value
        else:
            meta[key] = value
    if kind is None:
        raise ConfigError("checkpoint", "missing kind")
    return kind, tensors, meta


def save(path, kind, tensors, meta=None) -> None:
    atomic_write_text(path, dumps(kind, tensors, meta))


def load(path, expect_kind: str | None = None):
    kind, tensors, meta = loads(Path(path).read_text(encoding="utf-8"))
    if expect_kind is not None and kind != expect_kind:
        raise ConfigError("checkpoint", f"expected kind {expect_kind!r}, found {kind!r}")
    return kind, tensors, meta
