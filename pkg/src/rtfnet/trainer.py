"""Training / validation loop and whole-image evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .checkpoint import Checkpoint, TrainSnapshot, load_checkpoint, save_checkpoint
from .data import ImageBuffer, batch_indices, extract_patches, from_tensor, list_images, read_image, to_tensor
from .metrics import MetricsRecord, curves_to_csv, mse, psnr, psnr_from_mse, read_curves_csv
from .model import ArchConfig, ModelParams, init_params, rtfnet_forward
from .noise import salt_pepper_array
from .optim import AdamState, LrSchedule, adam_step, lr_at
from .tensor import Tensor, backward, get_tape, no_grad

log = logging.getLogger(__name__)

# stream tags keep derived seeds for different purposes disjoint
_PATCH, _SHUFFLE, _NOISE, _VAL = 1, 2, 3, 4


class NonFiniteLossError(FloatingPointError):
    pass


def derive_seed(base: int, *tags: int) -> int:
    """Deterministic 64-bit seed for the tuple ``(base, *tags)``."""
    lo, hi = np.random.SeedSequence([int(base), *map(int, tags)]).generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


@dataclass
class TrainConfig:
    noise_level: float = 0.3
    epochs: int = 25
    batch_size: int = 32
    base_lr: float = 1e-3
    step_size: int = 6
    gamma: float = 0.5
    patches_per_image: int = 64
    patch_size: int = 64
    seed: int = 0
    data_dir: str | None = None
    val_dir: str | None = None
    checkpoint: str | None = None
    metrics_csv: str | None = None

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.base_lr, self.step_size, self.gamma)

    def snapshot(self) -> TrainSnapshot:
        keep = TrainSnapshot.__dataclass_fields__
        return TrainSnapshot(**{k: v for k, v in asdict(self).items() if k in keep})


# ---------------------------------------------------------------------------
# one step / one epoch


def _stack(samples: np.ndarray) -> Tensor:
    """(B, H, W, C) uint8 -> B x C x H x W float32 in [0, 1]."""
    return Tensor(np.ascontiguousarray(samples.transpose(0, 3, 1, 2)).astype(np.float32) / np.float32(255))


def noisy_batch(clean: np.ndarray, level: float, seed: int, epoch: int, batch: int) -> np.ndarray:
    """Corrupt each patch of a (B, H, W, C) batch with its own derived seed."""
    return np.stack(
        [salt_pepper_array(patch, level, derive_seed(seed, _NOISE, epoch, batch, j)) for j, patch in enumerate(clean)]
    )


def train_step(mp: ModelParams, noisy: Tensor, clean: Tensor, state: AdamState, lr: float) -> float:
    restored, _ = rtfnet_forward(noisy, mp, "train")
    loss = F.mse_loss(restored, clean)
    value = loss.item()
    if not math.isfinite(value):
        get_tape().clear()
        raise NonFiniteLossError(f"training loss became {value} (lr={lr}, step {state.t + 1})")
    backward(loss)
    adam_step(mp.params, state, lr)
    return value


def train_epoch(
    mp: ModelParams,
    patches: np.ndarray,
    state: AdamState,
    lr: float,
    seed: int,
    epoch: int = 0,
    noise_level: float = 0.3,
    batch_size: int = 32,
    on_step: Callable[[int, float], None] | None = None,
) -> tuple[float, float]:
    """Train over clean uint8 ``patches`` (N, H, W, C) once; returns (mean loss, mean PSNR).

    Batch order and per-patch noise are derived from ``(seed, epoch)``, so
    noise is re-sampled every epoch.
    """
    losses, weights, psnrs = [], [], []
    for b, idx in enumerate(batch_indices(len(patches), batch_size, derive_seed(seed, _SHUFFLE, epoch))):
        clean = patches[idx]
        noisy = noisy_batch(clean, noise_level, seed, epoch, b)
        value = train_step(mp, _stack(noisy), _stack(clean), state, lr)
        losses.append(value)
        weights.append(len(idx))
        psnrs.append(psnr_from_mse(value))
        if on_step is not None:
            on_step(b, value)
    return float(np.average(losses, weights=weights)), float(np.mean(psnrs))


# ---------------------------------------------------------------------------
# inference and validation


def denoise_tensor(mp: ModelParams, noisy: Tensor) -> tuple[Tensor, Tensor]:
    with no_grad():
        return rtfnet_forward(noisy, mp, "eval")


def denoise(mp: ModelParams, noisy: ImageBuffer) -> tuple[ImageBuffer, ImageBuffer]:
    """Restore one image; returns (restored, transition) as 8-bit buffers."""
    restored, transition = denoise_tensor(mp, to_tensor(noisy))
    return from_tensor(restored), from_tensor(transition)


def validation_noise(img: ImageBuffer, level: float, seed: int, index: int) -> ImageBuffer:
    return ImageBuffer(salt_pepper_array(img.samples, level, derive_seed(seed, _VAL, index)))


def validate(mp: ModelParams, images: Sequence[ImageBuffer], level: float, seed: int) -> tuple[float, float]:
    """Whole-image eval-mode pass; returns (mean unit-range MSE, mean PSNR in dB).

    Noise for image ``i`` is fixed by ``(seed, i)``, so repeated calls see
    the same corrupted inputs.
    """
    losses, psnrs = [], []
    for i, img in enumerate(images):
        noisy = validation_noise(img, level, seed, i)
        restored, _ = denoise_tensor(mp, to_tensor(noisy))
        clean = to_tensor(img)
        losses.append(mse(restored, clean))
        psnrs.append(psnr(restored, clean, 1.0))
    return float(np.mean(losses)), float(np.mean(psnrs))


@dataclass(frozen=True)
class EvalRow:
    image: str
    noisy_psnr: float
    denoised_psnr: float
    transition_psnr: float


def evaluate_image(mp: ModelParams, name: str, clean: ImageBuffer, level: float, seed: int) -> EvalRow:
    """8-bit PSNR (peak 255) of the noisy input, the NSN transition image and the output."""
    noisy = ImageBuffer(salt_pepper_array(clean.samples, level, seed))
    restored, transition = denoise(mp, noisy)
    return EvalRow(
        name,
        psnr(noisy.samples, clean.samples, 255.0),
        psnr(restored.samples, clean.samples, 255.0),
        psnr(transition.samples, clean.samples, 255.0),
    )


# ---------------------------------------------------------------------------
# full run


def load_corpus(directory, channels: int) -> tuple[list[str], list[ImageBuffer]]:
    paths = list_images(directory)
    if not paths:
        raise FileNotFoundError(f"no PGM/PPM images in {directory}")
    images = [read_image(p) for p in paths]
    for p, img in zip(paths, images):
        if img.channels != channels:
            raise ValueError(f"{p} has {img.channels} channels, model expects {channels}")
    return [p.stem for p in paths], images


def epoch_patches(images: Sequence[ImageBuffer], cfg: TrainConfig, epoch: int) -> np.ndarray:
    sets = [
        extract_patches(img, cfg.patch_size, cfg.patches_per_image, derive_seed(cfg.seed, _PATCH, epoch, i))
        for i, img in enumerate(images)
    ]
    return np.concatenate([s.samples for s in sets], axis=0)


def fit(
    cfg: TrainConfig,
    arch: ArchConfig | None = None,
    resume: str | Path | None = None,
) -> tuple[Checkpoint, list[MetricsRecord]]:
    """Train for ``cfg.epochs`` epochs (or the remainder, when resuming).

    After every epoch the checkpoint and metrics CSV (when configured) are
    rewritten, so an interrupted run can resume from the last finished epoch.
    """
    if cfg.data_dir is None or cfg.val_dir is None:
        raise ValueError("data_dir and val_dir are required")
    records: list[MetricsRecord] = []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        arch = ckpt.arch
        mp = ckpt.model
        state = ckpt.optimizer or AdamState.for_params(mp.params)
        start = ckpt.epoch
        if cfg.metrics_csv and Path(cfg.metrics_csv).exists():
            records = [r for r in read_curves_csv(cfg.metrics_csv) if r.epoch < start]
    else:
        arch = arch or ArchConfig()
        mp = init_params(arch, cfg.seed)
        state = AdamState.for_params(mp.params)
        start = 0

    _, train_images = load_corpus(cfg.data_dir, arch.channels)
    _, val_images = load_corpus(cfg.val_dir, arch.channels)
    ckpt = Checkpoint(mp, cfg.snapshot(), start, state)

    for epoch in range(start, cfg.epochs):
        lr = lr_at(cfg.schedule, epoch)
        patches = epoch_patches(train_images, cfg, epoch)
        train_loss, train_psnr = train_epoch(
            mp, patches, state, lr, cfg.seed, epoch, cfg.noise_level, cfg.batch_size
        )
        val_loss, val_psnr = validate(mp, val_images, cfg.noise_level, cfg.seed)
        rec = MetricsRecord(epoch, train_loss, val_loss, train_psnr, val_psnr)
        records.append(rec)
        log.info(
            "epoch %d lr %.3g  train loss %.5f psnr %.3f  val loss %.5f psnr %.3f",
            epoch, lr, train_loss, train_psnr, val_loss, val_psnr,
        )
        ckpt.epoch = epoch + 1
        if cfg.checkpoint:
            save_checkpoint(ckpt, cfg.checkpoint)
        if cfg.metrics_csv:
            curves_to_csv(records, cfg.metrics_csv)
    return ckpt, records
