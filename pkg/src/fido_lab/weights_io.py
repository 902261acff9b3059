"""Binary weight file.

Layout (all integers unsigned 32-bit little-endian)::

    b"FIDO1"
    u32 config_length, config_length bytes of UTF-8 JSON (ModelConfig.to_dict())
    then, for every matrix in weight_layout(config) order:
        u32 name_length, name (UTF-8), u32 rows, u32 cols,
        rows*cols little-endian float64 values, row-major

The file must end exactly after the last matrix.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .config import ConfigError, ModelConfig
from .model import Model, weight_layout

MAGIC = b"FIDO1"
_U32 = struct.Struct("<I")


class WeightFileError(ValueError):
    pass


def dumps(model: Model) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, _U32.pack(len(cfg)), cfg]
    for name, rows, cols in weight_layout(model.config):
        raw = name.encode()
        parts += [_U32.pack(len(raw)), raw, _U32.pack(rows), _U32.pack(cols),
                  model[name].astype("<f8").tobytes()]
    return b"".join(parts)


def save(model: Model, path: str | Path) -> None:
    Path(path).write_bytes(dumps(model))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise WeightFileError(f"truncated weight file while reading {what}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]


def loads(data: bytes, check_finite: bool = True) -> Model:
    r = _Reader(data)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise WeightFileError("bad magic: not a FIDO1 weight file")
    try:
        raw_cfg = json.loads(r.take(r.u32("config length"), "config").decode())
        config = ModelConfig.from_dict(raw_cfg)
    except (UnicodeDecodeError, json.JSONDecodeError, ConfigError) as exc:
        raise WeightFileError(f"unreadable config header: {exc}") from exc

    weights = {}
    for name, rows, cols in weight_layout(config):
        got = r.take(r.u32("name length"), "name").decode(errors="replace")
        if got != name:
            raise WeightFileError(f"expected matrix {name!r}, found {got!r}")
        shape = (r.u32("rows"), r.u32("cols"))
        if shape != (rows, cols):
            raise WeightFileError(f"matrix {name!r} has shape {shape}, config expects {(rows, cols)}")
        w = np.frombuffer(r.take(rows * cols * 8, name), dtype="<f8").reshape(rows, cols)
        if check_finite and not np.all(np.isfinite(w)):
            raise WeightFileError(f"matrix {name!r} contains non-finite values")
        weights[name] = w
    if r.pos != len(data):
        raise WeightFileError(f"{len(data) - r.pos} trailing bytes after last matrix")
    return Model(config, weights)


def load(path: str | Path, check_finite: bool = True) -> Model:
    return loads(Path(path).read_bytes(), check_finite=check_finite)
