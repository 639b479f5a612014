"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DUALRECK"  u32 version  u32 meta_len  meta (UTF-8 JSON)
    u32 array_count
    per array: u16 name_len, name, u8 ndim, u32 dims[ndim], u64 byte_len, f32 data

Metadata holds the run config, item count, optimizer scalars and the best
validation record. Arrays hold model parameters plus ``adam.m.*`` / ``adam.v.*``
moment buffers.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig
from .dualnet import DualRec
from .numerics import AdamState

MAGIC = b"DUALRECK"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    num_items: int
    arrays: dict[str, np.ndarray]
    optimizer: dict = field(default_factory=dict)
    best: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model: DualRec, config: RunConfig, adam: AdamState | None = None,
                best: dict | None = None) -> "Checkpoint":
        names = [name for name, _ in model.named_parameters()]
        arrays = {name: p.detach().cpu().numpy().astype("<f4")
                  for name, p in model.named_parameters()}
        optimizer = {}
        if adam is not None:
            optimizer = {"step": adam.step, "lr": adam.lr, "beta1": adam.beta1,
                         "beta2": adam.beta2, "eps": adam.eps,
                         "weight_decay": adam.weight_decay}
            for name, m, v in zip(names, adam.exp_avg, adam.exp_avg_sq):
                arrays[f"adam.m.{name}"] = m.detach().cpu().numpy().astype("<f4")
                arrays[f"adam.v.{name}"] = v.detach().cpu().numpy().astype("<f4")
        return cls(config, model.num_items, arrays, optimizer, dict(best or {}))

    def build_model(self) -> DualRec:
        cfg = self.config
        model = DualRec(self.num_items, cfg.n, cfg.d, cfg.heads, cfg.layers, cfg.dropout, cfg.seed)
        state = {}
        for name, p in model.named_parameters():
            if name not in self.arrays:
                raise CheckpointError(f"checkpoint lacks parameter {name!r}")
            arr = self.arrays[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(f"{name}: shape {arr.shape} != model {tuple(p.shape)}")
            state[name] = torch.from_numpy(arr.astype(np.float32))
        model.load_state_dict(state, strict=False)
        return model

    def adam_state(self, model: DualRec) -> AdamState | None:
        if not self.optimizer:
            return None
        names = [name for name, _ in model.named_parameters()]
        opt = self.optimizer
        return AdamState(
            lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"],
            weight_decay=opt["weight_decay"], step=opt["step"],
            exp_avg=[torch.from_numpy(self.arrays[f"adam.m.{n}"].astype(np.float32)) for n in names],
            exp_avg_sq=[torch.from_numpy(self.arrays[f"adam.v.{n}"].astype(np.float32)) for n in names],
        )

    def to_bytes(self) -> bytes:
        meta = json.dumps({"config": self.config.as_dict(), "num_items": self.num_items,
                           "optimizer": self.optimizer, "best": self.best},
                          sort_keys=True).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta,
                 struct.pack("<I", len(self.arrays))]
        for name, arr in self.arrays.items():
            raw_name = name.encode("utf-8")
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            parts.append(struct.pack("<H", len(raw_name)) + raw_name)
            parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(struct.pack("<Q", len(data)) + data)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:len(MAGIC)] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        pos = len(MAGIC)

        def take(fmt: str):
            nonlocal pos
            size = struct.calcsize(fmt)
            if pos + size > len(blob):
                raise CheckpointError("truncated checkpoint")
            values = struct.unpack_from(fmt, blob, pos)
            pos += size
            return values

        version, meta_len = take("<II")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        if pos + meta_len > len(blob):
            raise CheckpointError("truncated checkpoint")
        try:
            meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
        pos += meta_len
        (count,) = take("<I")
        arrays = {}
        for _ in range(count):
            (name_len,) = take("<H")
            if pos + name_len > len(blob):
                raise CheckpointError("truncated checkpoint")
            name = blob[pos:pos + name_len].decode("utf-8", errors="replace")
            pos += name_len
            (ndim,) = take("<B")
            shape = take(f"<{ndim}I") if ndim else ()
            (byte_len,) = take("<Q")
            if byte_len != 4 * int(np.prod(shape, dtype=np.int64)) or pos + byte_len > len(blob):
                raise CheckpointError(f"array {name!r}: byte length does not match shape {shape}")
            arrays[name] = np.frombuffer(blob, dtype="<f4", count=byte_len // 4,
                                         offset=pos).reshape(shape).copy()
            pos += byte_len
        config = RunConfig(**meta["config"])
        return cls(config, int(meta["num_items"]), arrays, meta["optimizer"], meta["best"])

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
