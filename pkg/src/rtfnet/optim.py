"""Adam with bias correction and a step-decay learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """Raised when a gradient holds NaN/Inf; the optimizer step is aborted."""


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], **kw) -> "AdamState":
        state = cls(**kw)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(
    params: Mapping[str, Tensor],
    state: AdamState,
    lr: float,
    grads: Mapping[str, np.ndarray] | None = None,
) -> None:
    """One in-place Adam update. ``grads`` defaults to each tensor's ``.grad``.

    All gradients are validated before any parameter changes.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    if grads is None:
        grads = {name: p.grad for name, p in params.items()}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ValueError(f"no gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ValueError(f"optimizer state shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in {name!r}; step aborted")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-3
    step_size: int = 6
    gamma: float = 0.5

    def __post_init__(self):
        if self.base_lr <= 0 or self.step_size < 1 or not 0 < self.gamma < 1:
            raise ValueError(f"invalid schedule {self}")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return schedule.base_lr * math.pow(schedule.gamma, epoch // schedule.step_size)
