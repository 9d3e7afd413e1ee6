"""The RTF-Net architecture.

A noise suppression network (NSN: residual conv blocks) predicts a noise map
that is subtracted from the noisy input, giving a transition image ``y``. A
structure enhancement network (SEN: convolutional-transformer blocks)
predicts a detail map that is added back to ``y``.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, fields
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, add, permute, reshape, sub

MODES = ("train", "eval")


@dataclass(frozen=True)
class ArchConfig:
    channels: int = 1
    features: int = 32
    nsn_depth: int = 8
    sen_depth: int = 2
    cvt_depth: int = 2
    heads: int = 4
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    reduction: int = 2

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        for name in ("features", "nsn_depth", "sen_depth", "cvt_depth", "heads", "kernel", "reduction"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.features % self.heads:
            raise ValueError(f"features={self.features} not divisible by heads={self.heads}")
        if self.features % (self.reduction**2):
            raise ValueError(f"features={self.features} not divisible by reduction^2={self.reduction**2}")
        if self.stride != 1 or self.kernel != 2 * self.padding + 1:
            raise ValueError("convolutions must preserve spatial shape (stride 1, kernel = 2*padding + 1)")

    @property
    def head_dim(self) -> int:
        return self.features // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# parameter layout


def param_layout(cfg: ArchConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) for every learnable tensor, in canonical order."""
    c, f, k, r = cfg.channels, cfg.features, cfg.kernel, cfg.reduction
    out: list[tuple[str, tuple[int, ...], str]] = []

    def conv(name, c_out, c_in, ksize, bias=True):
        out.append((f"{name}.weight", (c_out, c_in, ksize, ksize), "conv"))
        if bias:
            out.append((f"{name}.bias", (c_out,), "zero"))

    def norm(name):
        out.append((f"{name}.scale", (f,), "one"))
        out.append((f"{name}.shift", (f,), "zero"))

    conv("nsn.head", f, c, k)
    for i in range(cfg.nsn_depth):
        for j in (1, 2):
            conv(f"nsn.res{i}.conv{j}", f, f, k)
            norm(f"nsn.res{i}.conv{j}.norm")
    conv("nsn.tail", c, f, k)

    conv("sen.head", f, c, k)
    for i in range(cfg.sen_depth):
        base = f"sen.cvt{i}"
        conv(f"{base}.embed", f, f, k)
        for j in range(cfg.cvt_depth):
            tf = f"{base}.tf{j}"
            norm(f"{tf}.norm1")
            conv(f"{tf}.attn.reduce", f, f * r * r, 1)
            for proj in ("query", "key", "value"):
                out.append((f"{tf}.attn.{proj}.weight", (f, f), "linear"))
            conv(f"{tf}.attn.proj", f, f // (r * r), 1, bias=False)
            norm(f"{tf}.norm2")
            conv(f"{tf}.mlp.fc1", f, f, 1)
            conv(f"{tf}.mlp.fc2", f, f, 1)
    conv("sen.tail", c, f, k)
    return out


def batchnorm_layers(cfg: ArchConfig) -> list[str]:
    return [f"nsn.res{i}.conv{j}.norm" for i in range(cfg.nsn_depth) for j in (1, 2)]


def param_count(cfg: ArchConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape, _ in param_layout(cfg))


@dataclass
class ModelParams:
    """Named learnable tensors plus batch-norm running statistics."""

    config: ArchConfig
    params: dict[str, Tensor]
    stats: dict[str, F.BatchNormStats]

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def clone(self) -> "ModelParams":
        params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.params.items()}
        return ModelParams(self.config, params, copy.deepcopy(self.stats))

    def astype(self, dtype) -> "ModelParams":
        params = {k: Tensor(v.data.astype(dtype), requires_grad=v.requires_grad) for k, v in self.params.items()}
        stats = {
            k: F.BatchNormStats(s.mean.astype(dtype), s.var.astype(dtype), s.count) for k, s in self.stats.items()
        }
        return ModelParams(self.config, params, stats)


# Output convs of both stages start at zero so each stage begins as the
# identity on its input (y == noisy, restored == y).
ZERO_INIT = ("nsn.tail.weight", "sen.tail.weight")


def init_params(cfg: ArchConfig, seed: int = 0, dtype=np.float32, zero_tails: bool = True) -> ModelParams:
    """Kaiming-uniform conv weights (bound sqrt(2/fan_in)), Xavier-uniform linear
    weights, zero biases, unit norm scales. Draws are float64, then cast.

    With ``zero_tails`` the two residual output convs are zeroed after drawing,
    so the random stream of every other tensor is unchanged.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, kind in param_layout(cfg):
        if kind == "conv":
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(2.0 / fan_in)
            arr = rng.uniform(-bound, bound, size=shape)
        elif kind == "linear":
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-bound, bound, size=shape)
        elif kind == "one":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        if zero_tails and name in ZERO_INIT:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True)
    stats = {name: F.BatchNormStats.fresh(cfg.features, dtype) for name in batchnorm_layers(cfg)}
    return ModelParams(cfg, params, stats)


# ---------------------------------------------------------------------------
# blocks


def _conv(x: Tensor, mp: ModelParams, name: str, padding: int = 0) -> Tensor:
    bias = mp.params.get(f"{name}.bias")
    return F.conv2d(x, mp[f"{name}.weight"], bias, stride=1, padding=padding)


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def conv_block(x: Tensor, mp: ModelParams, prefix: str, mode: str = "train") -> Tensor:
    """conv 3x3 -> batch norm -> ReLU."""
    h = _conv(x, mp, prefix, mp.config.padding)
    h = F.normalize(
        "batch", h, mp[f"{prefix}.norm.scale"], mp[f"{prefix}.norm.shift"], mp.stats[f"{prefix}.norm"], mode
    )
    return F.relu(h)


def residual_block(x: Tensor, mp: ModelParams, prefix: str, mode: str = "train") -> Tensor:
    h = conv_block(x, mp, f"{prefix}.conv1", mode)
    h = conv_block(h, mp, f"{prefix}.conv2", mode)
    return add(x, h)


def attention_block(x: Tensor, mp: ModelParams, prefix: str, record: list | None = None) -> Tensor:
    """Reduced-resolution multi-head self-attention.

    pixel-unshuffle by r, 1x1 reduction back to F channels, one token per
    reduced pixel, per-head scaled dot-product attention, heads concatenated,
    pixel-shuffle by r, 1x1 projection from F/r^2 to F channels.

    If ``record`` is a list, the attention weights (N x heads x L x L) are
    appended to it.
    """
    cfg = mp.config
    r, heads, dk = cfg.reduction, cfg.heads, cfg.head_dim
    n, f, h, w = x.shape
    if h % r or w % r:
        raise ValueError(f"attention needs spatial extents divisible by {r}, got {h}x{w}")
    hr, wr = h // r, w // r
    tokens_n = hr * wr

    red = _conv(F.pixel_unshuffle(x, r), mp, f"{prefix}.reduce")
    tokens = permute(reshape(red, (n, f, tokens_n)), (0, 2, 1))

    def split(name):
        proj = F.matmul(tokens, mp[f"{prefix}.{name}.weight"])
        return permute(reshape(proj, (n, tokens_n, heads, dk)), (0, 2, 1, 3))

    q, k, v = split("query"), split("key"), split("value")
    if record is not None:
        record.append(F.attention_weights(q, k))
    att = F.scaled_dot_product_attention(q, k, v)
    merged = permute(reshape(permute(att, (0, 2, 1, 3)), (n, tokens_n, f)), (0, 2, 1))
    merged = reshape(merged, (n, f, hr, wr))
    return _conv(F.pixel_shuffle(merged, r), mp, f"{prefix}.proj")


def mlp_block(x: Tensor, mp: ModelParams, prefix: str) -> Tensor:
    """1x1 conv -> GELU -> 1x1 conv, width F throughout."""
    return _conv(F.gelu(_conv(x, mp, f"{prefix}.fc1")), mp, f"{prefix}.fc2")


def transformer_block(x_emb: Tensor, mp: ModelParams, prefix: str, record: list | None = None) -> Tensor:
    def ln(t, name):
        return F.normalize("layer", t, mp[f"{prefix}.{name}.scale"], mp[f"{prefix}.{name}.shift"])

    x_mid = add(x_emb, attention_block(ln(x_emb, "norm1"), mp, f"{prefix}.attn", record))
    return add(x_mid, mlp_block(ln(x_mid, "norm2"), mp, f"{prefix}.mlp"))


def cvt_block(x: Tensor, mp: ModelParams, prefix: str, record: list | None = None) -> Tensor:
    h = _conv(x, mp, f"{prefix}.embed", mp.config.padding)
    for j in range(mp.config.cvt_depth):
        h = transformer_block(h, mp, f"{prefix}.tf{j}", record)
    return h


def _check_input(x: Tensor, cfg: ArchConfig) -> None:
    if x.ndim != 4 or x.shape[1] != cfg.channels:
        raise ValueError(f"expected N x {cfg.channels} x H x W input, got {x.shape}")


def nsn_forward(noisy: Tensor, mp: ModelParams, mode: str = "train") -> Tensor:
    """Predicted noise map (same shape as ``noisy``)."""
    _check_mode(mode)
    _check_input(noisy, mp.config)
    h = _conv(noisy, mp, "nsn.head", mp.config.padding)
    for i in range(mp.config.nsn_depth):
        h = residual_block(h, mp, f"nsn.res{i}", mode)
    return _conv(h, mp, "nsn.tail", mp.config.padding)


def sen_forward(y: Tensor, mp: ModelParams, mode: str = "train", record: list | None = None) -> Tensor:
    """Predicted additive detail map (same shape as ``y``)."""
    _check_mode(mode)
    _check_input(y, mp.config)
    h = _conv(y, mp, "sen.head", mp.config.padding)
    for i in range(mp.config.sen_depth):
        h = cvt_block(h, mp, f"sen.cvt{i}", record)
    return _conv(h, mp, "sen.tail", mp.config.padding)


def rtfnet_forward(noisy: Tensor, mp: ModelParams, mode: str = "train") -> tuple[Tensor, Tensor]:
    """Return ``(restored, transition)``.

    In eval mode, inputs whose height/width are not multiples of the
    reduction factor are reflect-padded at the bottom/right and both
    outputs are cropped back.
    """
    _check_mode(mode)
    _check_input(noisy, mp.config)
    r = mp.config.reduction
    h, w = noisy.shape[-2:]
    pad_h, pad_w = -h % r, -w % r
    x = noisy
    if mode == "eval" and (pad_h or pad_w):
        x = F.pad_reflect(noisy, pad_h, pad_w)
    y = sub(x, nsn_forward(x, mp, mode))
    restored = add(y, sen_forward(y, mp, mode))
    if x is not noisy:
        restored, y = F.crop(restored, h, w), F.crop(y, h, w)
    return restored, y
