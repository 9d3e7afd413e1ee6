"""Netpbm image I/O, tensor conversion, random-crop patching and batching."""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import DEFAULT_DTYPE, Tensor

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


class ImageFormatError(ValueError):
    pass


@dataclass
class ImageBuffer:
    """8-bit raster; ``samples`` has shape (height, width, channels), row-major."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 2:
            s = s[:, :, None]
        if s.ndim != 3 or s.shape[2] not in (1, 3) or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError(f"samples must be H x W x {{1,3}}, got shape {s.shape}")
        if s.dtype != np.uint8:
            if np.any((s < 0) | (s > 255)) or not np.all(np.equal(np.mod(s, 1), 0)):
                raise ValueError("samples must be integers in [0, 255]")
            s = s.astype(np.uint8)
        self.samples = np.ascontiguousarray(s)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.samples.shape

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageBuffer) and np.array_equal(self.samples, other.samples)


# ---------------------------------------------------------------------------
# file I/O


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write via a temp file in the destination directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _header_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping '#' comments.

    Returns the tokens and the offset of the single whitespace byte that ends
    the header.
    """
    tokens: list[bytes] = []
    i, n = 0, len(raw)
    while len(tokens) < count:
        while i < n and raw[i : i + 1].isspace():
            i += 1
        if i < n and raw[i : i + 1] == b"#":
            while i < n and raw[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not raw[i : i + 1].isspace() and raw[i : i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated header")
        tokens.append(raw[start:i])
    if i >= n or not raw[i : i + 1].isspace():
        raise ImageFormatError("header must end with a single whitespace byte")
    return tokens, i


def read_image(path) -> ImageBuffer:
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageFormatError(f"{path}: unknown magic {magic!r} (expected P5 or P6)")
    tokens, end = _header_tokens(raw[2:], 3)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed header") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"{path}: maxval {maxval} unsupported (only 255)")
    start = 2 + end + 1
    need = width * height * channels
    payload = raw[start : start + need]
    if len(payload) < need:
        raise ImageFormatError(f"{path}: truncated payload ({len(payload)} of {need} bytes)")
    samples = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return ImageBuffer(samples.copy())


def encode_image(buf: ImageBuffer) -> bytes:
    magic = "P5" if buf.channels == 1 else "P6"
    header = f"{magic}\n{buf.width} {buf.height}\n255\n".encode("ascii")
    return header + buf.samples.tobytes()


def write_image(buf: ImageBuffer, path) -> None:
    atomic_write_bytes(path, encode_image(buf))


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


# ---------------------------------------------------------------------------
# tensor conversion


def to_tensor(buf: ImageBuffer, dtype=DEFAULT_DTYPE) -> Tensor:
    arr = buf.samples.transpose(2, 0, 1)[None].astype(dtype) / dtype(255)
    return Tensor(np.ascontiguousarray(arr, dtype=dtype))


def quantize(values: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Map unit-range values to uint8: x*255, clamped, rounded half away from zero."""
    v = np.asarray(values, dtype=np.float64) * 255.0
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    if clamp:
        v = np.clip(v, 0.0, 255.0)
    elif np.any((v < -0.5) | (v >= 255.5)):
        raise ValueError("values outside [0, 1] and clamping disabled")
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.uint8)


def from_tensor(t: Tensor, clamp: bool = True) -> ImageBuffer:
    if t.ndim != 4 or t.shape[0] != 1:
        raise ValueError(f"from_tensor expects a 1 x C x H x W tensor, got {t.shape}")
    return ImageBuffer(quantize(t.data[0].transpose(1, 2, 0), clamp))


# ---------------------------------------------------------------------------
# patches and batches


@dataclass
class PatchSet:
    source_id: str
    size: int
    offsets: list[tuple[int, int]]
    samples: np.ndarray = field(repr=False)  # (count, size, size, channels) uint8

    def __len__(self) -> int:
        return len(self.offsets)

    def tensors(self, dtype=DEFAULT_DTYPE) -> list[Tensor]:
        return [to_tensor(ImageBuffer(s), dtype) for s in self.samples]


def extract_patches(buf: ImageBuffer, size: int = 64, count: int = 64, seed: int = 0, source_id: str = "") -> PatchSet:
    """``count`` uniformly random in-bounds ``size x size`` crops."""
    if buf.height < size or buf.width < size:
        raise ValueError(f"image {buf.height}x{buf.width} is smaller than patch size {size}")
    rng = np.random.default_rng(seed)
    tops = rng.integers(0, buf.height - size + 1, size=count)
    lefts = rng.integers(0, buf.width - size + 1, size=count)
    offsets = [(int(t), int(l)) for t, l in zip(tops, lefts)]
    samples = np.empty((count, size, size, buf.channels), dtype=np.uint8)
    for i, (t, l) in enumerate(offsets):
        samples[i] = buf.samples[t : t + size, l : l + size]
    return PatchSet(source_id, size, offsets, samples)


def batch_indices(n: int, batch: int, seed: int) -> list[np.ndarray]:
    """Seeded permutation of ``range(n)`` cut into consecutive groups of <= ``batch``."""
    if n < 1:
        raise ValueError("cannot batch an empty list")
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    order = np.random.default_rng(seed).permutation(n)
    return [order[i : i + batch] for i in range(0, n, batch)]


def make_batches(pairs: Sequence[tuple[Tensor, Tensor]], batch: int = 32, seed: int = 0) -> list[tuple[Tensor, Tensor]]:
    """Shuffle (noisy, clean) pairs and stack them along the batch axis."""
    if not pairs:
        raise ValueError("cannot batch an empty list")
    shape = pairs[0][0].shape
    for noisy, clean in pairs:
        if noisy.shape != shape or clean.shape != shape:
            raise ValueError("all pairs must share one shape")
    out = []
    for idx in batch_indices(len(pairs), batch, seed):
        noisy = np.concatenate([pairs[i][0].data for i in idx], axis=0)
        clean = np.concatenate([pairs[i][1].data for i in idx], axis=0)
        out.append((Tensor(noisy), Tensor(clean)))
    return out
