"""Versioned binary checkpoints.

Layout (little-endian)::

    magic    b"CTXMCKPT"
    version  u32
    hlen     u32, then hlen bytes of UTF-8 JSON header {"format_version", "config", ...}
    count    u32 parameter blocks, each:
        nlen u32, name (UTF-8), ndim u32, ndim x u32 dims, prod(dims) x f64
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ModelConfig, Params, param_shapes

MAGIC = b"CTXMCKPT"
FORMAT_VERSION = 1


class VersionError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


def to_bytes(config: ModelConfig, params: Params, extra: dict | None = None) -> bytes:
    header = {"format_version": FORMAT_VERSION, "config": config.to_dict()}
    if extra:
        header.update(extra)
    hbytes = json.dumps(header, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(hbytes)), hbytes,
           struct.pack("<I", len(params))]
    for name in sorted(params):
        data = np.ascontiguousarray(params[name].data, dtype="<f8")
        nb = name.encode()
        out.append(struct.pack("<I", len(nb)) + nb)
        out.append(struct.pack("<I", data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(data.tobytes())
    return b"".join(out)


def from_bytes(buf: bytes) -> tuple[ModelConfig, Params, dict]:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<II", buf, pos)
    if version != FORMAT_VERSION:
        raise VersionError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
    pos += 8
    header = json.loads(buf[pos:pos + hlen].decode())
    pos += hlen
    config = ModelConfig.from_dict(header["config"])
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    params: Params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        params[name] = Tensor(data, requires_grad=True, name=name)
    expected = param_shapes(config)
    got = {k: v.shape for k, v in params.items()}
    if got != expected:
        raise VersionError("checkpoint parameter blocks do not match its configuration")
    return config, params, header


def save(path: str | Path, config: ModelConfig, params: Params, extra: dict | None = None) -> None:
    Path(path).write_bytes(to_bytes(config, params, extra))


def load(path: str | Path) -> tuple[ModelConfig, Params, dict]:
    return from_bytes(Path(path).read_bytes())
