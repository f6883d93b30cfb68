"""Segmentation of reconstructions and clinical metrics with MC propagation."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from adaptscan.common import DISTRACTOR, LABEL_CLASSES, STRUCTURE, PhantomKind

DEFAULT_BLUR_SIGMA = 0.7

# (structure threshold, tissue threshold) on the blurred magnitude; frozen
# against noiseless phantoms, see tests/test_downstream.py
THRESHOLDS = {
    PhantomKind.KNEE_STATIC: (0.65, 0.18),
    PhantomKind.CARDIAC_TWO_PHASE: (0.62, 0.16),
}


class MetricKind(str, enum.Enum):
    VOLUME_CM3 = "VolumeCm3"
    LVEF_PERCENT = "LvefPercent"


class DegenerateSegmentationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MetricDistribution:
    samples: np.ndarray
    mean: float
    std: float
    metric_kind: MetricKind
    n_excluded: int = 0

    @classmethod
    def from_samples(cls, samples, metric_kind: MetricKind, n_excluded: int = 0) -> "MetricDistribution":
        s = np.asarray(samples, dtype=float)
        if s.size < 2:
            raise ValueError(f"need at least 2 metric samples, got {s.size}")
        std = 0.0 if np.all(s == s[0]) else float(np.std(s, ddof=1))
        return cls(s, float(np.mean(s)), std, MetricKind(metric_kind), n_excluded)


def _largest_component(mask: np.ndarray) -> np.ndarray:
    lab, n = ndimage.label(mask)
    if n == 0:
        return mask
    sizes = np.bincount(lab.ravel())[1:]
    return lab == (int(np.argmax(sizes)) + 1)


def segment(x: np.ndarray, kind: PhantomKind, blur_sigma: float = DEFAULT_BLUR_SIGMA) -> np.ndarray:
    """Magnitude, Gaussian blur, fixed thresholds, largest component per class."""
    t_struct, t_tissue = THRESHOLDS[PhantomKind(kind)]
    mag = np.abs(np.asarray(x))
    if blur_sigma > 0:
        mag = ndimage.gaussian_filter(mag, blur_sigma, mode="constant")
    structure = _largest_component(mag > t_struct)
    tissue = _largest_component((mag > t_tissue) & ~structure)
    labels = np.zeros(mag.shape, dtype=np.int32)
    labels[tissue] = DISTRACTOR
    labels[structure] = STRUCTURE
    return labels


def volume(labels: np.ndarray, class_id: int, spacing) -> float:
    """Volume in cm^3 of ``class_id`` given voxel spacing in mm."""
    if class_id not in LABEL_CLASSES:
        raise ValueError(f"unknown class id {class_id}; expected one of {LABEL_CLASSES}")
    dx, dy, dz = (float(v) for v in spacing)
    if min(dx, dy, dz) <= 0:
        raise ValueError(f"voxel spacing must be positive, got {spacing}")
    return int(np.count_nonzero(labels == class_id)) * dx * dy * dz / 1000.0


def ejection_fraction(v_ed: float, v_es: float) -> float:
    """LVEF in percent."""
    if v_ed <= 0:
        raise DegenerateSegmentationError(f"end-diastolic volume must be positive, got {v_ed}")
    return (v_ed - v_es) / v_ed * 100.0


def sample_volumes(images: Sequence[np.ndarray], kind, class_id, spacing, blur_sigma=DEFAULT_BLUR_SIGMA) -> np.ndarray:
    return np.array([volume(segment(x, kind, blur_sigma), class_id, spacing) for x in images])


def propagate_volume(
    samples, kind, class_id: int = STRUCTURE, spacing=(1.0, 1.0, 1.0), blur_sigma=DEFAULT_BLUR_SIGMA
) -> MetricDistribution:
    """Segment each reconstruction sample and summarize the volumes."""
    images = getattr(samples, "samples", samples)
    if len(images) < 2:
        raise ValueError("need at least 2 reconstruction samples")
    vols = sample_volumes(images, kind, class_id, spacing, blur_sigma)
    return MetricDistribution.from_samples(vols, MetricKind.VOLUME_CM3)


def lvef_samples(v_ed: np.ndarray, v_es: np.ndarray, pairing: str = "cross") -> tuple[np.ndarray, int]:
    """LVEF over all (ED, ES) pairings, or index-matched pairs.

    Returns the valid samples and the number of pairings excluded for a
    non-positive ED volume.
    """
    v_ed = np.asarray(v_ed, dtype=float)
    v_es = np.asarray(v_es, dtype=float)
    if pairing == "cross":
        ed, es = np.meshgrid(v_ed, v_es, indexing="ij")
    elif pairing == "matched":
        if v_ed.shape != v_es.shape:
            raise ValueError("matched pairing needs equal sample counts")
        ed, es = v_ed, v_es
    else:
        raise ValueError(f"unknown pairing {pairing!r}")
    ed, es = ed.ravel(), es.ravel()
    valid = ed > 0
    if not np.any(valid):
        raise DegenerateSegmentationError("every pairing has a non-positive end-diastolic volume")
    return (ed[valid] - es[valid]) / ed[valid] * 100.0, int(np.count_nonzero(~valid))


def propagate_lvef(
    samples_ed,
    samples_es,
    kind=PhantomKind.CARDIAC_TWO_PHASE,
    class_id: int = STRUCTURE,
    spacing=(1.0, 1.0, 1.0),
    blur_sigma=DEFAULT_BLUR_SIGMA,
    pairing: str = "cross",
) -> MetricDistribution:
    images_ed = getattr(samples_ed, "samples", samples_ed)
    images_es = getattr(samples_es, "samples", samples_es)
    if len(images_ed) < 2 or len(images_es) < 2:
        raise ValueError("need at least 2 reconstruction samples per phase")
    v_ed = sample_volumes(images_ed, kind, class_id, spacing, blur_sigma)
    v_es = sample_volumes(images_es, kind, class_id, spacing, blur_sigma)
    values, excluded = lvef_samples(v_ed, v_es, pairing)
    return MetricDistribution.from_samples(values, MetricKind.LVEF_PERCENT, excluded)
