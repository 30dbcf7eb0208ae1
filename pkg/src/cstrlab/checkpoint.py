"""Binary checkpoint files.

Layout: magic ``CSTR``, u32 format version, u64 step, length-prefixed
UTF-8 config fingerprint, then self-delimiting tensor records until EOF.
Each record is a u32-length-prefixed name, u8 rank, u64 per dimension,
then the payload as little-endian float32. Optimizer accumulators use
the same record scheme under the reserved ``optstate/`` name prefix.
Writes are deterministic (names sorted), so save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Mapping, Optional

import numpy as np

from .errors import CheckpointError

MAGIC = b"CSTR"
VERSION = 1
OPT_PREFIX = "optstate/"


@dataclass
class Checkpoint:
    step: int
    fingerprint: str
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    opt_state: Dict[str, np.ndarray] = field(default_factory=dict)


def _write_record(f, name: str, arr: np.ndarray) -> None:
    # asarray, not ascontiguousarray: the latter promotes 0-d to 1-d, and
    # tobytes() below emits C order for any layout anyway.
    data = np.asarray(arr, dtype="<f4")
    nb = name.encode("utf-8")
    f.write(struct.pack("<I", len(nb)))
    f.write(nb)
    if data.ndim > 255:
        raise CheckpointError(f"tensor {name!r} rank {data.ndim} exceeds 255")
    f.write(struct.pack("<B", data.ndim))
    for d in data.shape:
        f.write(struct.pack("<Q", d))
    f.write(data.tobytes())


def save_checkpoint(path, step: int, fingerprint: str,
                    params: Mapping[str, np.ndarray],
                    opt_state: Optional[Mapping[str, np.ndarray]] = None,
                    ) -> None:
    for name in params:
        if name.startswith(OPT_PREFIX):
            raise CheckpointError(
                f"parameter name {name!r} collides with the reserved "
                f"{OPT_PREFIX!r} prefix")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<I", VERSION))
            f.write(struct.pack("<Q", step))
            fp = fingerprint.encode("utf-8")
            f.write(struct.pack("<I", len(fp)))
            f.write(fp)
            for name in sorted(params):
                _write_record(f, name, params[name])
            if opt_state:
                for name in sorted(opt_state):
                    _write_record(f, OPT_PREFIX + name, opt_state[name])
        tmp.replace(path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e


class _Reader:
    def __init__(self, raw: bytes, path) -> None:
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.raw)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    r = _Reader(raw, path)
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}")
    step = r.u64()
    fingerprint = r.take(r.u32()).decode("utf-8")
    params: Dict[str, np.ndarray] = {}
    opt_state: Dict[str, np.ndarray] = {}
    while not r.done():
        name = r.take(r.u32()).decode("utf-8")
        rank = struct.unpack("<B", r.take(1))[0]
        shape = tuple(r.u64() for _ in range(rank))
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        payload = r.take(count * 4)
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
        target = opt_state if name.startswith(OPT_PREFIX) else params
        key = name[len(OPT_PREFIX):] if name.startswith(OPT_PREFIX) else name
        if key in target:
            raise CheckpointError(f"{path}: duplicate tensor {name!r}")
        target[key] = arr
    return Checkpoint(step=step, fingerprint=fingerprint, params=params,
                      opt_state=opt_state)
