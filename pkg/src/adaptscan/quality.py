"""Image and segmentation quality: SSIM, PSNR, Dice."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class QualityReport:
    ssim: float
    psnr: float  # math.inf when the images are identical
    dice: float


def _same_shape(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def ssim(a, b, data_range: float | None = None) -> float:
    """Mean SSIM over all valid 7x7 uniform windows.

    ``data_range`` defaults to the peak-to-peak of ``b`` (the reference);
    a flat reference falls back to 1.0.  Local variances use the unbiased
    window estimate.
    """
    a, b = _same_shape(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels per side")
    if data_range is None:
        data_range = float(np.ptp(b)) or 1.0
    n = SSIM_WINDOW * SSIM_WINDOW
    cov_norm = n / (n - 1)
    wa = sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    # centered moments keep flat windows at exactly zero variance
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    var_a = cov_norm * (da * da).mean(axis=(-2, -1))
    var_b = cov_norm * (db * db).mean(axis=(-2, -1))
    cov = cov_norm * (da * db).mean(axis=(-2, -1))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr(a, b, data_range: float) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    a, b = _same_shape(a, b)
    if data_range <= 0:
        raise ValueError(f"data_range must be positive, got {data_range}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def dice(s1, s2, class_id: int = 1) -> float:
    """2|A&B| / (|A| + |B|) for one class; 1.0 when both are empty."""
    s1 = np.asarray(s1)
    s2 = np.asarray(s2)
    if s1.shape != s2.shape:
        raise ValueError(f"shape mismatch: {s1.shape} vs {s2.shape}")
    a = s1 == class_id
    b = s2 == class_id
    total = int(a.sum() + b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


def quality_report(recon, truth, labels_pred, labels_true, class_id: int = 1) -> QualityReport:
    """Magnitude SSIM/PSNR after normalizing both images by the reference peak."""
    ref = np.abs(truth)
    scale = ref.max() or 1.0
    a = np.abs(recon) / scale
    b = ref / scale
    return QualityReport(ssim(a, b, 1.0), psnr(a, b, 1.0), dice(labels_pred, labels_true, class_id))
