"""Split conformal calibration of (mean, std) metric predictions.

Scores are normalized absolute errors |w - w_hat| / sigma; the conformal
scale q_hat is the ceil((1 - alpha)(n + 1))-th smallest score, and the
interval is w_hat +/- q_hat * sigma.  When that rank exceeds n the
finite-sample guarantee needs an infinite interval; ``calibrate`` returns
``math.inf`` in that case instead of clamping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class CalibrationRecord:
    w_true: float
    w_hat: float
    sigma: float
    R: float = float("nan")

    def __post_init__(self):
        if not (math.isfinite(self.w_true) and math.isfinite(self.w_hat) and math.isfinite(self.sigma)):
            raise ValueError(f"non-finite calibration record: {self}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class PredictionInterval:
    lo: float
    hi: float
    center: float
    q_hat: float
    sigma: float  # post-floor

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.q_hat)

    def contains(self, w: float) -> bool:
        return self.lo <= w <= self.hi


def nonconformity_score(rec: CalibrationRecord, sigma_floor: float = DEFAULT_SIGMA_FLOOR) -> float:
    if sigma_floor <= 0:
        raise ValueError(f"sigma_floor must be > 0, got {sigma_floor}")
    return abs(rec.w_true - rec.w_hat) / max(rec.sigma, sigma_floor)


def quantile_rank(n: int, alpha: float) -> int:
    """1-based rank ceil((1 - alpha)(n + 1)) of the conformal quantile."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    # round away float noise such as (1 - 0.1) * 10 = 9.000000000000002
    return math.ceil(round((1.0 - alpha) * (n + 1), 9))


def conformal_quantile(scores: Sequence[float], alpha: float) -> float:
    s = np.sort(np.asarray(scores, dtype=float), kind="stable")
    if s.size == 0:
        raise ValueError("no calibration scores")
    k = quantile_rank(s.size, alpha)
    if k > s.size:
        return math.inf
    return float(s[k - 1])


def calibrate(
    records: Sequence[CalibrationRecord], alpha: float = 0.1, sigma_floor: float = DEFAULT_SIGMA_FLOOR
) -> float:
    """Conformal scale q_hat; ``math.inf`` when the rank exceeds len(records)."""
    if len(records) == 0:
        raise ValueError("cannot calibrate on an empty record set")
    return conformal_quantile([nonconformity_score(r, sigma_floor) for r in records], alpha)


def interval(
    w_hat: float, sigma: float, q_hat: float, sigma_floor: float = DEFAULT_SIGMA_FLOOR
) -> PredictionInterval:
    if q_hat < 0:
        raise ValueError(f"q_hat must be >= 0, got {q_hat}")
    s = max(sigma, sigma_floor)
    if math.isinf(q_hat):
        return PredictionInterval(-math.inf, math.inf, w_hat, q_hat, s)
    half = q_hat * s
    return PredictionInterval(w_hat - half, w_hat + half, w_hat, q_hat, s)


def empirical_coverage(intervals: Sequence[PredictionInterval], truths: Sequence[float]) -> float:
    """Fraction of truths inside their (closed) interval."""
    if len(intervals) != len(truths):
        raise ValueError(f"{len(intervals)} intervals vs {len(truths)} truths")
    if not intervals:
        raise ValueError("no intervals")
    return sum(iv.contains(w) for iv, w in zip(intervals, truths)) / len(intervals)


def coverage_from_arrays(w_hat, sigma, truth, q_hat, sigma_floor=DEFAULT_SIGMA_FLOOR) -> float:
    """Vectorized ``empirical_coverage`` for a shared q_hat."""
    half = q_hat * np.maximum(np.asarray(sigma, dtype=float), sigma_floor)
    err = np.abs(np.asarray(truth, dtype=float) - np.asarray(w_hat, dtype=float))
    return float(np.mean(err <= half))


@dataclass(frozen=True)
class CalibratorTable:
    """Per-acceleration-factor conformal scales."""

    entries: Mapping[float, float]
    alpha: float
    n_calib: Mapping[float, int] = field(default_factory=dict)
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be > 0")
        if any(q < 0 for q in self.entries.values()):
            raise ValueError("q_hat entries must be >= 0")

    def q_hat(self, R: float) -> float:
        try:
            return self.entries[float(R)]
        except KeyError:
            raise KeyError(f"calibrator has no entry for R={R}") from None

    def covers(self, factors: Iterable[float]) -> bool:
        return all(float(R) in self.entries for R in factors)

    @property
    def sentinel_factors(self) -> list[float]:
        return [R for R, q in self.entries.items() if math.isinf(q)]

    @classmethod
    def fit(
        cls,
        records: Sequence[CalibrationRecord],
        alpha: float = 0.1,
        sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    ) -> "CalibratorTable":
        """Calibrate independently for every acceleration factor in ``records``."""
        by_r: dict[float, list[CalibrationRecord]] = {}
        for rec in records:
            by_r.setdefault(float(rec.R), []).append(rec)
        entries = {R: calibrate(rs, alpha, sigma_floor) for R, rs in sorted(by_r.items(), reverse=True)}
        return cls(entries, alpha, {R: len(rs) for R, rs in by_r.items()}, sigma_floor)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "sigma_floor": self.sigma_floor,
            "entries": [
                {
                    "R": R,
                    "q_hat": "inf" if math.isinf(q) else q,
                    "n_calib": int(self.n_calib.get(R, 0)),
                }
                for R, q in sorted(self.entries.items(), reverse=True)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "CalibratorTable":
        entries, n_calib = {}, {}
        for e in d["entries"]:
            R = float(e["R"])
            q = e["q_hat"]
            entries[R] = math.inf if q == "inf" else float(q)
            n_calib[R] = int(e.get("n_calib", 0))
        return cls(entries, float(d["alpha"]), n_calib, float(d.get("sigma_floor", DEFAULT_SIGMA_FLOOR)))

    @classmethod
    def from_json(cls, text: str) -> "CalibratorTable":
        return cls.from_dict(json.loads(text))


def uncalibrated_table(factors: Iterable[float], alpha: float = 0.1) -> CalibratorTable:
    """q_hat = 1 everywhere: the plain one-standard-deviation interval."""
    return CalibratorTable({float(R): 1.0 for R in factors}, alpha)
