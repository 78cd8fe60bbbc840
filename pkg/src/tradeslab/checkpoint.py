"""Binary checkpoint format.

Layout (all integers little-endian)::

    bytes 0..7    magic  b"TLCKPT01"
    bytes 8..15   uint64 header length H
    next H bytes  UTF-8 JSON header, keys sorted, no whitespace
    remainder     float64 '<f8' blobs, one per parameter, in header order

The header records the MLP spec, parameter names and shapes, the epoch,
a SHA-256 digest of the training config, the PRNG algorithm name, and the
epoch telemetry of the saved model. The file must end exactly after the
last blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import MlpSpec, Params

MAGIC = b"TLCKPT01"
FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    spec: MlpSpec
    arrays: dict
    epoch: int
    config_digest: str
    rng_algorithm: str
    telemetry: dict = field(default_factory=dict)

    def params(self) -> Params:
        return Params(self.spec, self.arrays)

    def to_bytes(self) -> bytes:
        header = {
            "format": FORMAT_VERSION,
            "spec": self.spec.to_dict(),
            "params": [{"name": n, "shape": list(s)} for n, s in self.spec.param_shapes()],
            "epoch": self.epoch,
            "config_digest": self.config_digest,
            "rng_algorithm": self.rng_algorithm,
            "telemetry": self.telemetry,
        }
        head = canonical_json(header).encode("utf-8")
        blobs = b"".join(np.ascontiguousarray(self.arrays[n], dtype="<f8").tobytes()
                         for n, _ in self.spec.param_shapes())
        return MAGIC + struct.pack("<Q", len(head)) + head + blobs

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if len(raw) < 16 or raw[:8] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack("<Q", raw[8:16])
        if 16 + hlen > len(raw):
            raise CheckpointError("truncated header")
        try:
            header = json.loads(raw[16:16 + hlen].decode("utf-8"))
            if header.get("format") != FORMAT_VERSION:
                raise CheckpointError(f"unsupported checkpoint format {header.get('format')!r}")
            spec = MlpSpec(header["spec"]["input_dim"], header["spec"]["hidden_dims"],
                           header["spec"]["num_classes"])
            declared = [(p["name"], tuple(p["shape"])) for p in header["params"]]
            meta = {k: header[k] for k in ("epoch", "config_digest", "rng_algorithm")}
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise CheckpointError(f"unreadable header: {exc}") from None
        if declared != spec.param_shapes():
            raise CheckpointError("parameter table does not match the model spec")
        offset, arrays = 16 + hlen, {}
        for name, shape in declared:
            nbytes = 8 * int(np.prod(shape))
            if offset + nbytes > len(raw):
                raise CheckpointError(f"truncated blob for {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=nbytes // 8, offset=offset).reshape(shape).astype(np.float64)
            offset += nbytes
        if offset != len(raw):
            raise CheckpointError(f"{len(raw) - offset} trailing bytes after parameter blobs")
        return cls(spec=spec, arrays=arrays, telemetry=header.get("telemetry", {}), **meta)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise CheckpointError(f"cannot read {path}: {exc}") from None
        return cls.from_bytes(raw)
