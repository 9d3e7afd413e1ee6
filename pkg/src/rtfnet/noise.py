"""Salt-and-pepper impulse noise.

Each sample draws ``r1, r2 ~ U[0, 1)``. If ``r1 < p`` it becomes 0 when
``r2 < 0.5`` and 255 otherwise; all other samples are left untouched.
Colour images are corrupted independently per channel. Draws come from
numpy's PCG64 generator seeded with ``NoiseConfig.seed``: all ``r1`` values
first, then all ``r2`` values, in row-major sample order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import ImageBuffer

_U64 = 1 << 64


@dataclass(frozen=True)
class NoiseConfig:
    level: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"noise level must lie in [0, 1], got {self.level}")
        if not 0 <= int(self.seed) < _U64:
            raise ValueError("seed must be an unsigned 64-bit integer")


def salt_pepper_array(samples: np.ndarray, level: float, seed: int) -> np.ndarray:
    """Corrupt a uint8 array of any shape; returns a new array."""
    samples = np.asarray(samples)
    if samples.dtype != np.uint8:
        raise TypeError("salt_pepper_array expects uint8 samples")
    rng = np.random.default_rng(seed)
    r1 = rng.random(samples.shape)
    r2 = rng.random(samples.shape)
    return kernels.salt_pepper(samples, r1, r2, level)


def add_salt_pepper(image: ImageBuffer, cfg: NoiseConfig) -> ImageBuffer:
    return ImageBuffer(salt_pepper_array(image.samples, cfg.level, cfg.seed))


def corruption_stats(clean: ImageBuffer, noisy: ImageBuffer) -> tuple[float, float, float]:
    """(fraction changed, fraction changed to 255, fraction changed to 0) over all samples.

    Samples already at 0/255 that the noise hit with the same value are invisible here.
    """
    if clean.dims != noisy.dims:
        raise ValueError(f"dims mismatch: {clean.dims} vs {noisy.dims}")
    changed = clean.samples != noisy.samples
    n = changed.size
    salt = np.count_nonzero(changed & (noisy.samples == 255))
    pepper = np.count_nonzero(changed & (noisy.samples == 0))
    return np.count_nonzero(changed) / n, salt / n, pepper / n
