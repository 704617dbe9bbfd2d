"""Binary weights file.

Layout (all little-endian)::

    b"DWAY" | uint16 version | uint32 header length | header (UTF-8 JSON)
    | float32 parameter blocks in header order | uint32 CRC-32 of all preceding bytes

The header holds the model configuration and the name and shape of every
parameter.
"""
from __future__ import annotations

import json
import struct
import zlib
from collections import OrderedDict
from pathlib import Path

import numpy as np

from ..io import FormatError
from .model import ConfigError, DeepWayNet, ModelConfig

MAGIC = b"DWAY"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


class IntegrityError(FormatError):
    """Checksum mismatch: the file was modified or corrupted."""


def dumps(net: DeepWayNet) -> bytes:
    header = {
        "config": net.cfg.to_dict(),
        "params": [{"name": k, "shape": list(v.shape)} for k, v in net.params.items()],
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(hb)), hb]
    for v in net.params.values():
        parts.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def loads(data: bytes, dtype=np.float32) -> DeepWayNet:
    if len(data) < _PREFIX.size + 4:
        raise FormatError("weights file is truncated or empty")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, not a weights file")
    if version != VERSION:
        raise FormatError(f"unsupported weights format version {version}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise IntegrityError("weights checksum mismatch")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
        cfg = ModelConfig.from_dict(header["config"])
        specs = [(p["name"], tuple(p["shape"])) for p in header["params"]]
    except (UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed weights header: {exc}") from exc
    pos = _PREFIX.size + hlen
    params = OrderedDict()
    for name, shape in specs:
        n = int(np.prod(shape, dtype=np.int64))
        end = pos + 4 * n
        if end > len(body):
            raise FormatError(f"weights file ends inside parameter {name}")
        params[name] = np.frombuffer(body, dtype="<f4", count=n, offset=pos).reshape(shape).astype(dtype)
        pos = end
    if pos != len(body):
        raise FormatError(f"{len(body) - pos} unexpected trailing bytes in weights file")
    try:
        return DeepWayNet(cfg, params)
    except ConfigError as exc:
        raise FormatError(f"weights do not match their configuration: {exc}") from exc


def save_weights(net: DeepWayNet, path) -> None:
    Path(path).write_bytes(dumps(net))


def load_weights(path, dtype=np.float32) -> DeepWayNet:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read weights {path}: {exc}") from exc
    return loads(data, dtype)
