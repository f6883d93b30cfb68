"""Adaptive acquisition loop: acquire, reconstruct, propagate, calibrate, stop."""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from adaptscan import conformal, downstream, kspace, quality, recon
from adaptscan.common import STRUCTURE, PhantomKind, derive_seed
from adaptscan.conformal import CalibratorTable, PredictionInterval
from adaptscan.phantom import GroundTruthCase
from adaptscan.sampling import AccelerationSchedule

DEFAULT_M = 20
RAN_TO_END = "ran-to-end"


class WidthMode(str, enum.Enum):
    FULL_WIDTH = "FullWidth"
    HALF_WIDTH = "HalfWidth"


@dataclass(frozen=True)
class StoppingPolicy:
    """Stop once the interval width (or half-width) falls strictly below epsilon.

    epsilon = 0 is accepted and never stops.
    """

    epsilon: float
    use_calibration: bool = True
    width_mode: WidthMode = WidthMode.FULL_WIDTH
    fallback: str = "RunToEnd"

    def __post_init__(self):
        object.__setattr__(self, "width_mode", WidthMode(self.width_mode))
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.fallback != "RunToEnd":
            raise ValueError(f"unsupported fallback {self.fallback!r}")


def stop_check(iv: PredictionInterval, policy: StoppingPolicy) -> bool:
    if iv.unbounded:
        return False
    width = iv.width if policy.width_mode is WidthMode.FULL_WIDTH else iv.width / 2
    return width < policy.epsilon


def stop_index(
    w_hats: Sequence[float],
    sigmas: Sequence[float],
    q_hats: Sequence[float],
    policy: StoppingPolicy,
    sigma_floor: float = conformal.DEFAULT_SIGMA_FLOOR,
) -> int:
    """Step at which a replayed (w_hat, sigma) sequence stops; len(...) if never."""
    for i, (w, s, q) in enumerate(zip(w_hats, sigmas, q_hats)):
        if stop_check(conformal.interval(w, s, q, sigma_floor), policy):
            return i
    return len(w_hats)


@dataclass
class StepRecord:
    R: float
    interval: PredictionInterval
    w_hat: float
    sigma: float
    error_vs_truth: float
    ssim: float
    psnr: float
    dice: float
    stop: bool
    wall_time: float = field(default=0.0, compare=False)
    n_excluded: int = 0
    warning: str = ""


@dataclass
class AcquisitionTrace:
    case_id: int
    arm: str
    w_true: float
    steps: list[StepRecord]
    stopped: bool

    @property
    def final(self) -> StepRecord:
        return self.steps[-1]

    @property
    def stopped_at_R(self) -> float | str:
        return self.final.R if self.stopped else RAN_TO_END

    @property
    def final_R(self) -> float:
        return self.final.R

    @property
    def final_interval(self) -> PredictionInterval:
        return self.final.interval

    @property
    def final_error(self) -> float:
        return self.final.error_vs_truth

    @property
    def covered_at_stop(self) -> bool:
        return self.final_interval.contains(self.w_true)


@dataclass(frozen=True)
class PipelineSettings:
    """Knobs of the per-step pipeline that are not part of the stopping policy."""

    M: int = DEFAULT_M
    noise_fraction: float = kspace.DEFAULT_NOISE_FRACTION
    blur_sigma: float = downstream.DEFAULT_BLUR_SIGMA
    class_id: int = STRUCTURE
    lvef_pairing: str = "cross"
    sampler: str = "posterior"  # or "zero_filled"

    def __post_init__(self):
        if self.sampler not in ("posterior", "zero_filled"):
            raise ValueError(f"unknown sampler {self.sampler!r}")


def _metric_distribution(case, sample_sets, settings):
    if case.kind is PhantomKind.KNEE_STATIC:
        return downstream.propagate_volume(
            sample_sets[0], case.kind, settings.class_id, case.voxel_spacing, settings.blur_sigma
        )
    return downstream.propagate_lvef(
        sample_sets[0],
        sample_sets[1],
        case.kind,
        settings.class_id,
        case.voxel_spacing,
        settings.blur_sigma,
        settings.lvef_pairing,
    )


def _quality(case, sample_sets, settings):
    reports = []
    for (img, labels), ss in zip(case.phases, sample_sets):
        seg = downstream.segment(ss.posterior_mean, case.kind, settings.blur_sigma)
        reports.append(quality.quality_report(ss.posterior_mean, img, seg, labels, settings.class_id))
    return (
        float(np.mean([r.ssim for r in reports])),
        float(np.mean([r.psnr for r in reports])),
        float(np.mean([r.dice for r in reports])),
    )


def iterate_steps(
    case: GroundTruthCase,
    schedule: AccelerationSchedule,
    sampler_cfg: recon.PosteriorSamplerConfig,
    seed: int,
    settings: PipelineSettings = PipelineSettings(),
):
    """Yield (R, MetricDistribution or exception, quality tuple, seconds) per step.

    Measurement noise is drawn once per phase from ``seed`` on the full grid
    and revealed through each step's mask.
    """
    shape = case.image.shape
    noise_std = kspace.default_noise_std(case.image, case.coils, settings.noise_fraction)
    for step, (R, mask) in enumerate(schedule):
        t0 = time.perf_counter()
        sample_sets = []
        for p, (img, _) in enumerate(case.phases):
            y = kspace.forward(img, case.coils, mask.phase_grid(p, shape), noise_std, derive_seed(seed, 0, p))
            if settings.sampler == "zero_filled":
                sample_sets.append(recon.zero_filled_sampler(y, case.coils, settings.M))
            else:
                sample_sets.append(
                    recon.sample_posterior(y, case.coils, sampler_cfg, settings.M, derive_seed(seed, 1, step, p))
                )
        try:
            dist = _metric_distribution(case, sample_sets, settings)
        except downstream.DegenerateSegmentationError as exc:
            dist = exc
        qual = _quality(case, sample_sets, settings)
        yield R, dist, qual, time.perf_counter() - t0


def run_adaptive(
    case: GroundTruthCase,
    schedule: AccelerationSchedule,
    sampler_cfg: recon.PosteriorSamplerConfig,
    calibrator: CalibratorTable | None,
    policy: StoppingPolicy,
    seed: int,
    settings: PipelineSettings = PipelineSettings(),
    case_id: int = 0,
) -> AcquisitionTrace:
    """Walk the schedule until the interval is tight enough or the schedule ends."""
    if policy.use_calibration:
        if calibrator is None or not calibrator.covers(schedule.factors):
            raise KeyError("calibrator must have an entry for every schedule factor")
    floor = calibrator.sigma_floor if calibrator is not None else conformal.DEFAULT_SIGMA_FLOOR
    arm = "calibrated" if policy.use_calibration else "uncalibrated"
    steps: list[StepRecord] = []
    stopped = False
    for R, dist, (ssim, psnr, dice), seconds in iterate_steps(case, schedule, sampler_cfg, seed, settings):
        q = calibrator.q_hat(R) if policy.use_calibration else 1.0
        if isinstance(dist, Exception):
            iv = conformal.interval(math.nan, math.inf, math.inf, floor)
            rec = StepRecord(R, iv, math.nan, math.nan, math.nan, ssim, psnr, dice, False, seconds,
                             warning=f"step skipped: {dist}")
        else:
            iv = conformal.interval(dist.mean, dist.std, q, floor)
            stop = stop_check(iv, policy)
            rec = StepRecord(R, iv, dist.mean, dist.std, abs(dist.mean - case.true_metric),
                             ssim, psnr, dice, stop, seconds, dist.n_excluded)
        steps.append(rec)
        if rec.stop:
            stopped = True
            break
    return AcquisitionTrace(case_id, arm, case.true_metric, steps, stopped)


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------


def _num(x: float):
    """JSON-safe float: infinities and NaN become strings."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def step_dict(trace: AcquisitionTrace, i: int, rec: StepRecord) -> dict:
    """Serializable step; wall time is excluded so output stays reproducible."""
    iv = rec.interval
    return {
        "record": "step",
        "case_id": trace.case_id,
        "arm": trace.arm,
        "step": i,
        "R": _num(rec.R),
        "w_hat": _num(rec.w_hat),
        "sigma": _num(rec.sigma),
        "q_hat": _num(iv.q_hat),
        "lo": _num(iv.lo),
        "hi": _num(iv.hi),
        "width": _num(iv.width),
        "error_vs_truth": _num(rec.error_vs_truth),
        "ssim": _num(rec.ssim),
        "psnr": _num(rec.psnr),
        "dice": _num(rec.dice),
        "stop": rec.stop,
        "n_excluded": rec.n_excluded,
        "warning": rec.warning,
    }


def summary_dict(trace: AcquisitionTrace) -> dict:
    iv = trace.final_interval
    return {
        "record": "summary",
        "case_id": trace.case_id,
        "arm": trace.arm,
        "w_true": _num(trace.w_true),
        "stopped": trace.stopped,
        "stopped_at_R": trace.stopped_at_R if isinstance(trace.stopped_at_R, str) else _num(trace.stopped_at_R),
        "final_R": _num(trace.final_R),
        "final_w_hat": _num(trace.final.w_hat),
        "final_lo": _num(iv.lo),
        "final_hi": _num(iv.hi),
        "final_width": _num(iv.width),
        "final_error": _num(trace.final_error),
        "covered_at_stop": trace.covered_at_stop,
        "n_steps": len(trace.steps),
    }


def trace_to_jsonl(trace: AcquisitionTrace) -> str:
    lines = [json.dumps(step_dict(trace, i, rec)) for i, rec in enumerate(trace.steps)]
    lines.append(json.dumps(summary_dict(trace)))
    return "\n".join(lines) + "\n"
