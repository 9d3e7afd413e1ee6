"""MSE / PSNR, per-epoch training curves, and published baseline PSNR values."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import astuple, dataclass, fields
from typing import Mapping

import numpy as np

from .data import atomic_write_bytes
from .tensor import Tensor

INF = math.inf  # PSNR sentinel for identical inputs


def _arr(x) -> np.ndarray:
    if isinstance(x, Tensor):
        x = x.data
    return np.asarray(x, dtype=np.float64)


def mse(a, b) -> float:
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def psnr_from_mse(err: float, peak: float = 1.0) -> float:
    if peak <= 0:
        raise ValueError("peak must be positive")
    if err == 0:
        return INF
    return 10.0 * math.log10(peak * peak / err)


def psnr(a, b, peak: float = 1.0) -> float:
    """10 log10(peak^2 / mse) in dB; ``INF`` when the inputs are identical."""
    return psnr_from_mse(mse(a, b), peak)


# ---------------------------------------------------------------------------
# training curves


@dataclass(frozen=True)
class MetricsRecord:
    epoch: int
    train_loss: float
    val_loss: float
    train_psnr: float
    val_psnr: float


CSV_HEADER = [f.name for f in fields(MetricsRecord)]


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".6g")


def curves_to_csv(records, path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        w.writerow([_fmt(v) for v in astuple(rec)])
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def read_curves_csv(path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValueError(f"unexpected header {header}")
        return [MetricsRecord(int(r[0]), *(float(v) for v in r[1:])) for r in reader]


# ---------------------------------------------------------------------------
# published comparison table (PSNR, dB)

METHODS = ("DBA", "NASNLM", "PARIGI", "NLSF", "NLSF-MLP", "NLSF-CNN", "Ours")
IMAGES = ("Lena", "Bridge", "Pepper", "BSD300")
LEVELS = (30, 50, 70)

_ROWS = {
    ("Lena", 30): (34.42, 28.09, 33.90, 34.20, 30.80, 35.38, 38.87),
    ("Lena", 50): (30.11, 26.15, 29.91, 30.12, 29.28, 32.55, 34.62),
    ("Lena", 70): (25.84, 25.97, 25.22, 25.79, 27.63, 30.18, 32.85),
    ("Bridge", 30): (28.07, 23.68, 25.19, 28.21, 25.19, 28.71, 32.24),
    ("Bridge", 50): (24.24, 22.91, 22.61, 22.45, 23.86, 26.01, 28.26),
    ("Bridge", 70): (21.21, 22.63, 20.06, 21.02, 22.61, 24.11, 26.44),
    ("Pepper", 30): (26.85, 22.38, 28.88, 32.27, 30.01, 32.99, 31.70),
    ("Pepper", 50): (25.27, 21.82, 25.44, 27.99, 28.57, 30.23, 30.47),
    ("Pepper", 70): (22.11, 21.58, 21.46, 23.04, 27.04, 27.70, 29.27),
    ("BSD300", 30): (29.92, 25.74, 12.04, 30.01, 29.77, 30.87, 44.56),
    ("BSD300", 50): (26.32, 24.50, 6.01, 26.25, 26.19, 27.84, 38.03),
    ("BSD300", 70): (22.81, 24.65, 5.42, 22.85, 26.19, 25.35, 34.96),
}

BASELINES: dict[tuple[str, int], dict[str, float]] = {
    key: dict(zip(METHODS, vals)) for key, vals in _ROWS.items()
}


def table_key(image: str, level) -> tuple[str, int]:
    """Canonicalize ('lena', 0.3) / ('Lena', 30) to ('Lena', 30)."""
    by_lower = {name.lower(): name for name in IMAGES}
    name = by_lower.get(str(image).lower())
    lvl = float(level)
    lvl = int(round(lvl * 100)) if lvl <= 1.0 else int(round(lvl))
    if name is None or lvl not in LEVELS:
        raise KeyError(f"no baseline row for image={image!r}, level={level!r}")
    return name, lvl


def baseline(image: str, level, method: str) -> float:
    return BASELINES[table_key(image, level)][method]


def best_method(image: str, level) -> tuple[str, float]:
    row = BASELINES[table_key(image, level)]
    name = max(row, key=row.get)
    return name, row[name]


def compare_report(
    measured: Mapping[tuple[str, object], float] | None = None,
    baselines: Mapping[tuple[str, int], Mapping[str, float]] = BASELINES,
) -> str:
    """Aligned plain-text table of every baseline row plus a 'Measured' column.

    The best value of each row is marked with '*'. With no measurements the
    table shows the baselines only.
    """
    measured = {table_key(img, lvl): float(v) for (img, lvl), v in (measured or {}).items()}
    show_measured = bool(measured)
    cols = list(METHODS) + (["Measured"] if show_measured else [])
    header = ["Image", "Noise"] + cols
    rows = []
    for key, row in baselines.items():
        vals = [row[m] for m in METHODS]
        if show_measured:
            vals.append(measured.get(key, math.nan))
        finite = [v for v in vals if not math.isnan(v)]
        best = max(finite)
        cells = [key[0], f"{key[1]}%"]
        for v in vals:
            if math.isnan(v):
                cells.append("-")
            else:
                cells.append(("inf" if math.isinf(v) else f"{v:.2f}") + ("*" if v == best else ""))
        rows.append(cells)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header] + rows]
    return "\n".join(lines) + "\n"
