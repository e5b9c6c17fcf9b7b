"""Binary parameter checkpoints with a plain-text config sidecar.

Layout (little endian)::

    magic      8 bytes  b"PHMADNET"
    version    uint32
    n_tensors  uint32
    per tensor:
        name_len uint16, name utf-8
        ndim     uint8, dims uint64[ndim]
        payload  float64[prod(dims)], row-major

The sidecar ``<path>.cfg`` holds the :class:`MadConfig` fields as
``key = value`` lines under a ``[model]`` section.
"""

from __future__ import annotations

import configparser
import struct
from pathlib import Path

import numpy as np

from ..errors import DataError, InvalidArgumentError
from .model import MadConfig, MadParameters

__all__ = ["CHECKPOINT_VERSION", "save_checkpoint", "load_checkpoint", "sidecar_path"]

MAGIC = b"PHMADNET"
CHECKPOINT_VERSION = 1


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".cfg")


def save_checkpoint(path, params: MadParameters, cfg: MadConfig) -> None:
    params.validate(cfg, require_twin=False)
    chunks = [MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(params.tensors))]
    for name in sorted(params.tensors):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))
    parser = configparser.ConfigParser()
    parser["model"] = {k: str(v) for k, v in cfg.to_dict().items()}
    with open(sidecar_path(path), "w") as fh:
        parser.write(fh)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, cfg: MadConfig | None = None):
    """Read ``(params, cfg)``; ``cfg`` defaults to the sidecar contents.

    Raises :class:`DataError` for a missing, corrupt or mismatching file.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} not found")
    if cfg is None:
        side = sidecar_path(path)
        if not side.is_file():
            raise DataError(f"config sidecar {side} not found")
        parser = configparser.ConfigParser()
        parser.read(side)
        if "model" not in parser:
            raise DataError(f"{side}: missing [model] section")
        try:
            cfg = MadConfig.from_dict(dict(parser["model"]))
        except (InvalidArgumentError, ValueError) as exc:
            raise DataError(f"{side}: {exc}") from exc
    r = _Reader(path.read_bytes(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    version, n = r.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(n):
        name_len, ndim = r.unpack("<HB")
        name = r.take(name_len).decode("utf-8")
        shape = r.unpack(f"<{ndim}Q")
        count = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.data):
        raise DataError(f"{path}: trailing bytes after the last tensor")
    params = MadParameters(tensors)
    try:
        params.validate(cfg, require_twin=False)
    except InvalidArgumentError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return params, cfg
