"""
Image quality metrics.

PURPOSE: PSNR and SSIM for images with values in [0, 1]
DEPENDENCIES: numpy

ARCHITECTURE NOTES:
- PSNR = 10 log10(1 / MSE), capped at a 99 dB sentinel (identical images)
- SSIM: 7x7 Gaussian window (sigma 1.5), valid region only, k1 = 0.01, k2 = 0.03,
  dynamic range 1; color images average the per-channel SSIM maps
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_SENTINEL = 99.0
SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DYNAMIC_RANGE = 1.0


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr: shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(PSNR_SENTINEL, 10.0 * math.log10(DYNAMIC_RANGE**2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 1-D Gaussian taps."""
    x = np.arange(size) - (size - 1) / 2.0
    taps = np.exp(-(x**2) / (2.0 * sigma**2))
    return taps / taps.sum()


def _filter(image: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable valid-mode filter over the first two axes of (H, W, C)."""
    k = taps.size
    rows = sliding_window_view(image, k, axis=0) @ taps
    return sliding_window_view(rows, k, axis=1) @ taps


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity of two (H, W) or (H, W, C) images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"ssim: shapes differ: {a.shape} vs {b.shape}")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"ssim: image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]

    c1 = (K1 * DYNAMIC_RANGE) ** 2
    c2 = (K2 * DYNAMIC_RANGE) ** 2
    taps = gaussian_window()

    mu_a = _filter(a, taps)
    mu_b = _filter(b, taps)
    var_a = _filter(a * a, taps) - mu_a * mu_a
    var_b = _filter(b * b, taps) - mu_b * mu_b
    cov = _filter(a * b, taps) - mu_a * mu_b

    ssim_map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )
    return float(np.mean(ssim_map))


@dataclass
class MetricDistribution:
    """Percentiles, mean and spread of a metric over views, scenes or seeds."""

    metric_name: str
    count: int
    p5: float
    p25: float
    p50: float  # median
    p75: float
    p95: float
    mean: float
    std_dev: float

    @classmethod
    def from_values(cls, metric_name: str, values: list[float]) -> MetricDistribution:
        """Calculate distribution from list of values."""
        if not values:
            return cls(metric_name, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

        arr = np.asarray(values, dtype=np.float64)
        percentiles = np.percentile(arr, [5, 25, 50, 75, 95])
        return cls(
            metric_name=metric_name,
            count=int(arr.size),
            p5=round(float(percentiles[0]), 4),
            p25=round(float(percentiles[1]), 4),
            p50=round(float(percentiles[2]), 4),
            p75=round(float(percentiles[3]), 4),
            p95=round(float(percentiles[4]), 4),
            mean=round(float(np.mean(arr)), 4),
            std_dev=round(float(np.std(arr)), 4),
        )

    def as_row(self) -> dict[str, float | int | str]:
        return asdict(self)
