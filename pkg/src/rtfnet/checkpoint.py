"""Binary checkpoint format (little-endian throughout).

::

    b"RTFN"  u32 version
    config block:
        ArchConfig fields, u32 each, declaration order
        f64 noise_level  u32 epochs  u32 batch_size  f64 base_lr
        u32 step_size    f64 gamma   u32 patches_per_image  u32 patch_size
        u32 seed_lo      u32 seed_hi
        u32 epoch        u32 bn_count  u32 has_optimizer  u32 adam_t
    u32 tensor count
    per tensor: u16 name length, UTF-8 name, u8 rank, u32 extent * rank,
                float32 payload

Tensor order: model parameters (canonical layout order), then
``<bn layer>.running_mean`` / ``.running_var`` per batch-norm layer, then,
when ``has_optimizer`` is set, ``adam.m.<param>`` and ``adam.v.<param>``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import atomic_write_bytes
from .functional import BatchNormStats
from .model import ArchConfig, ModelParams, batchnorm_layers, param_layout
from .optim import AdamState
from .tensor import Tensor

MAGIC = b"RTFN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class TrainSnapshot:
    """Numeric training settings persisted with a checkpoint."""

    noise_level: float = 0.3
    epochs: int = 25
    batch_size: int = 32
    base_lr: float = 1e-3
    step_size: int = 6
    gamma: float = 0.5
    patches_per_image: int = 64
    patch_size: int = 64
    seed: int = 0


@dataclass
class Checkpoint:
    model: ModelParams
    train: TrainSnapshot = field(default_factory=TrainSnapshot)
    epoch: int = 0
    optimizer: AdamState | None = None
    version: int = VERSION

    @property
    def arch(self) -> ArchConfig:
        return self.model.config


def expected_tensors(cfg: ArchConfig, with_optimizer: bool) -> list[tuple[str, tuple[int, ...]]]:
    layout = [(name, shape) for name, shape, _ in param_layout(cfg)]
    out = list(layout)
    for layer in batchnorm_layers(cfg):
        out.append((f"{layer}.running_mean", (cfg.features,)))
        out.append((f"{layer}.running_var", (cfg.features,)))
    if with_optimizer:
        out += [(f"adam.m.{n}", s) for n, s in layout]
        out += [(f"adam.v.{n}", s) for n, s in layout]
    return out


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    cfg, tr, mp = ckpt.arch, ckpt.train, ckpt.model
    parts = [MAGIC, struct.pack("<I", ckpt.version)]
    parts.append(struct.pack(f"<{len(ArchConfig.field_names())}I", *(getattr(cfg, f) for f in ArchConfig.field_names())))
    seed = int(tr.seed)
    parts.append(
        struct.pack(
            "<dIIdIdIIII",
            tr.noise_level,
            tr.epochs,
            tr.batch_size,
            tr.base_lr,
            tr.step_size,
            tr.gamma,
            tr.patches_per_image,
            tr.patch_size,
            seed & 0xFFFFFFFF,
            seed >> 32,
        )
    )
    counts = {s.count for s in mp.stats.values()}
    if len(counts) > 1:
        raise CheckpointError("batch-norm layers disagree on their update count")
    bn_count = counts.pop() if counts else 0
    opt = ckpt.optimizer
    parts.append(struct.pack("<IIII", ckpt.epoch, bn_count, int(opt is not None), opt.t if opt else 0))

    arrays: dict[str, np.ndarray] = {name: t.data for name, t in mp.params.items()}
    for layer, s in mp.stats.items():
        arrays[f"{layer}.running_mean"] = s.mean
        arrays[f"{layer}.running_var"] = s.var
    if opt is not None:
        for name in mp.params:
            arrays[f"adam.m.{name}"] = opt.m[name]
            arrays[f"adam.v.{name}"] = opt.v[name]

    expected = expected_tensors(cfg, opt is not None)
    parts.append(struct.pack("<I", len(expected)))
    for name, shape in expected:
        arr = arrays[name]
        if arr.shape != shape:
            raise CheckpointError(f"tensor {name!r} has shape {arr.shape}, expected {shape}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.raw[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def decode_checkpoint(raw: bytes) -> Checkpoint:
    rd = _Reader(raw)
    if rd.take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not an RTFN checkpoint")
    (version,) = rd.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    names = ArchConfig.field_names()
    try:
        cfg = ArchConfig(**dict(zip(names, rd.unpack(f"<{len(names)}I", "architecture config"))))
    except ValueError as exc:
        raise CheckpointError(f"invalid architecture config: {exc}") from exc
    nl, ep, bs, lr, ss, gm, ppi, psz, seed_lo, seed_hi = rd.unpack("<dIIdIdIIII", "training config")
    train = TrainSnapshot(nl, ep, bs, lr, ss, gm, ppi, psz, seed_lo | (seed_hi << 32))
    epoch, bn_count, has_opt, adam_t = rd.unpack("<IIII", "state counters")
    expected = expected_tensors(cfg, bool(has_opt))
    (count,) = rd.unpack("<I", "tensor count")
    if count != len(expected):
        raise CheckpointError(f"checkpoint holds {count} tensors, architecture needs {len(expected)}")

    arrays: dict[str, np.ndarray] = {}
    for want_name, want_shape in expected:
        (nlen,) = rd.unpack("<H", "tensor name length")
        name = rd.take(nlen, "tensor name").decode("utf-8")
        if name != want_name:
            raise CheckpointError(f"unexpected tensor {name!r}, expected {want_name!r}")
        (rank,) = rd.unpack("<B", f"rank of {name!r}")
        shape = rd.unpack(f"<{rank}I", f"extents of {name!r}")
        if tuple(shape) != want_shape:
            raise CheckpointError(f"tensor {name!r} has shape {tuple(shape)}, architecture needs {want_shape}")
        nbytes = 4 * int(np.prod(shape))
        if rd.pos + nbytes > len(rd.raw):
            raise CheckpointError(f"truncated payload for tensor {name!r}")
        arrays[name] = np.frombuffer(rd.take(nbytes, name), dtype="<f4").astype(np.float32).reshape(shape)
    if rd.pos != len(rd.raw):
        raise CheckpointError(f"{len(rd.raw) - rd.pos} trailing bytes after last tensor")

    params = {n: Tensor(arrays[n], requires_grad=True) for n, _, _ in param_layout(cfg)}
    stats = {
        layer: BatchNormStats(arrays[f"{layer}.running_mean"], arrays[f"{layer}.running_var"], bn_count)
        for layer in batchnorm_layers(cfg)
    }
    opt = None
    if has_opt:
        opt = AdamState(t=adam_t)
        for n in params:
            opt.m[n] = arrays[f"adam.m.{n}"]
            opt.v[n] = arrays[f"adam.v.{n}"]
    return Checkpoint(ModelParams(cfg, params, stats), train, epoch, opt, version)


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
