"""Experiment drivers behind the CLI subcommands.

Every output row is ordered by case index and contains no wall-clock data,
so files are byte-identical for a given (config, seed) whatever the worker
count.  Timings go to a separate ``timings.csv``.
"""

from __future__ import annotations

import csv
import io as _io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from adaptscan import conformal, controller, downstream, kspace, quality, recon
from adaptscan.common import derive_seed
from adaptscan.conformal import CalibrationRecord, CalibratorTable
from adaptscan.harness.config import ExperimentConfig
from adaptscan.io import save_case, save_mask, write_array
from adaptscan.phantom import make_case, make_cohort
from adaptscan.sampling import AccelerationSchedule, MaskKind, SamplingMask, nested_schedule

# sub-seed streams of the master seed
_CALIB_COHORT, _TEST_COHORT, _MASKS, _CALIB_RUN, _TEST_RUN, _COVERAGE = 1, 2, 3, 4, 5, 6


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------


def schedule_for(cfg: ExperimentConfig) -> AccelerationSchedule:
    s = cfg.schedule
    seed = s.seed if s.seed is not None else derive_seed(cfg.seed, _MASKS)
    return nested_schedule(s.pattern, cfg.schedule_shape(), s.factors, s.center_radius, seed, s.max_overlap)


def cohort_case(cfg: ExperimentConfig, which: int, i: int):
    """Case ``i`` of a cohort, identical to ``cohort(cfg, which, n)[i]``."""
    return make_case(replace(cfg.phantom_spec(), seed=derive_seed(derive_seed(cfg.seed, which), i)))


def cohort(cfg: ExperimentConfig, which: int, n: int):
    spec = cfg.phantom_spec()
    return make_cohort(spec, n, derive_seed(cfg.seed, which))


def _pmap(fn, items, jobs: int):
    """Map preserving input order; a process pool when jobs > 1."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: Path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def _row(*xs):
    return [_fmt(x) for x in xs]


def _warn(msg: str) -> None:
    print(f"WARNING: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# calibrate
# --------------------------------------------------------------------------


def _calibration_worker(args):
    cfg, i = args
    case = cohort_case(cfg, _CALIB_COHORT, i)
    sched = schedule_for(cfg)
    out = []
    it = controller.iterate_steps(
        case, sched, cfg.sampler_config(), derive_seed(cfg.seed, _CALIB_RUN, i), cfg.pipeline_settings()
    )
    for R, dist, _, seconds in it:
        if isinstance(dist, Exception):
            out.append((R, None, str(dist), seconds))
        else:
            out.append((R, (case.true_metric, dist.mean, dist.std), "", seconds))
    return out


def calibration_records(cfg: ExperimentConfig, jobs: int = 1):
    """Per-case lists of (R, (w_true, w_hat, sigma) or None, warning, seconds)."""
    if cfg.n_calib < 1:
        raise ValueError("n_calib must be >= 1")
    return _pmap(_calibration_worker, [(cfg, i) for i in range(cfg.n_calib)], jobs)


def cmd_calibrate(cfg: ExperimentConfig, out, jobs: int = 1) -> CalibratorTable:
    """Fit q_hat per R; writes ``calibrator.json`` and ``calibration_scores.csv``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    per_case = calibration_records(cfg, jobs)
    records, rows = [], []
    for i, steps in enumerate(per_case):
        for R, rec, warning, _ in steps:
            if rec is None:
                _warn(f"calibration case {i} R={R}: {warning}; record dropped")
                rows.append(_row(i, R, "nan", "nan", "nan", "nan", warning))
                continue
            cr = CalibrationRecord(*rec, R=R)
            records.append(cr)
            score = conformal.nonconformity_score(cr, cfg.sigma_floor)
            rows.append(_row(i, R, cr.w_true, cr.w_hat, cr.sigma, score, ""))
    table = CalibratorTable.fit(records, cfg.alpha, cfg.sigma_floor)
    missing = [R for R in schedule_for(cfg).factors if R not in table.entries]
    if missing:
        raise RuntimeError(f"no usable calibration records for R={missing}")
    for R in table.sentinel_factors:
        k = conformal.quantile_rank(table.n_calib[R], cfg.alpha)
        _warn(
            f"q_hat(R={R}) is the +inf sentinel: rank {k} exceeds n_calib={table.n_calib[R]} "
            f"at alpha={cfg.alpha}; intervals at this R are unbounded and never stop a scan"
        )
    (out / "calibrator.json").write_text(table.to_json() + "\n")
    _write_csv(out / "calibration_scores.csv",
               ["case", "R", "w_true", "w_hat", "sigma", "score", "warning"], rows)
    _write_csv(out / "calibration_timings.csv", ["case", "R", "seconds"],
               [_row(i, R, s) for i, steps in enumerate(per_case) for R, _, _, s in steps])
    return table


# --------------------------------------------------------------------------
# run-adaptive
# --------------------------------------------------------------------------


def _adaptive_worker(args):
    cfg, table_dict, i = args
    case = cohort_case(cfg, _TEST_COHORT, i)
    sched = schedule_for(cfg)
    table = CalibratorTable.from_dict(table_dict)
    seed = derive_seed(cfg.seed, _TEST_RUN, i)
    traces = []
    for use_cal in (True, False):
        traces.append(controller.run_adaptive(
            case, sched, cfg.sampler_config(), table if use_cal else None, cfg.policy(use_cal),
            seed, cfg.pipeline_settings(), case_id=i,
        ))
    return traces


def _aggregate(traces):
    rows = []
    for arm in ("calibrated", "uncalibrated"):
        ts = [t for t in traces if t.arm == arm]
        finals = np.array([t.final_R for t in ts])
        errs = np.array([t.final_error for t in ts], dtype=float)
        widths = np.array([t.final_interval.width for t in ts], dtype=float)
        rows.append(_row(
            arm, len(ts), float(np.mean(finals)), float(np.nanmean(errs)) if np.isfinite(errs).any() else math.nan,
            float(np.mean([t.covered_at_stop for t in ts])), float(np.mean([t.stopped for t in ts])),
            float(np.mean(widths)),
        ))
    return rows


def cmd_run_adaptive(cfg: ExperimentConfig, out, table: CalibratorTable | None = None, jobs: int = 1):
    """Run every test case through both arms and write traces and summaries.

    Without ``table`` a calibration is run first (into ``out``).
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.n_test < 1:
        raise ValueError("empty test set: n_test must be >= 1")
    sched = schedule_for(cfg)
    if table is None:
        table = cmd_calibrate(cfg, out, jobs)
    if not table.covers(sched.factors):
        raise KeyError(f"calibrator does not cover schedule factors {list(sched.factors)}")
    per_case = _pmap(_adaptive_worker, [(cfg, table.to_dict(), i) for i in range(cfg.n_test)], jobs)
    traces = [t for pair in per_case for t in pair]

    (out / "traces.jsonl").write_text("".join(controller.trace_to_jsonl(t) for t in traces))

    step_keys = list(controller.step_dict(traces[0], 0, traces[0].steps[0]))[1:]
    step_rows = []
    for t in traces:
        for i, rec in enumerate(t.steps):
            d = controller.step_dict(t, i, rec)
            step_rows.append([_fmt(d[k]) for k in step_keys])
    _write_csv(out / "traces.csv", step_keys, step_rows)

    sum_keys = list(controller.summary_dict(traces[0]))[1:]
    sum_rows = [[_fmt(controller.summary_dict(t)[k]) for k in sum_keys] for t in traces]
    _write_csv(out / "summary.csv", sum_keys, sum_rows)

    _write_csv(out / "aggregate.csv",
               ["arm", "n_cases", "mean_stopped_at_R", "mean_error_at_stop", "coverage_at_stop",
                "stopped_fraction", "mean_final_width"],
               _aggregate(traces))

    # plot-ready: x = stop factor, y = error at stop
    _write_csv(out / "stopping_points.csv", ["arm", "case_id", "stopped_at_R", "error_at_stop", "covered"],
               [_row(t.arm, t.case_id, t.final_R, t.final_error, t.covered_at_stop) for t in traces])

    _write_csv(out / "timings.csv", ["case_id", "arm", "step", "R", "seconds"],
               [_row(t.case_id, t.arm, i, r.R, r.wall_time) for t in traces for i, r in enumerate(t.steps)])
    return traces


# --------------------------------------------------------------------------
# sweep-quality
# --------------------------------------------------------------------------


def _sweep_masks(cfg: ExperimentConfig):
    sched = schedule_for(cfg)
    masks = list(sched)
    if cfg.sweep_include_full:
        g = cfg.phantom.grid_size
        masks.append((1.0, SamplingMask(np.ones((g, g), dtype=bool), 1.0, MaskKind.FULL)))
    return masks


def sweep_metrics(recons, case, blur_sigma: float, class_id: int = 1):
    """(ssim, psnr, dice) of stored-precision reconstructions, averaged over phases."""
    reports = []
    for x, (img, labels) in zip(recons, case.phases):
        x = np.asarray(x).astype(np.complex64).astype(np.complex128)
        seg = downstream.segment(x, case.kind, blur_sigma)
        reports.append(quality.quality_report(x, img, seg, labels, class_id))
    return tuple(float(np.mean([getattr(r, k) for r in reports])) for k in ("ssim", "psnr", "dice"))


def _sweep_worker(args):
    cfg, i, recon_dir = args
    case = cohort_case(cfg, _TEST_COHORT, i)
    settings = cfg.pipeline_settings()
    sampler_cfg = cfg.sampler_config()
    seed = derive_seed(cfg.seed, _TEST_RUN, i)
    noise_std = kspace.default_noise_std(case.image, case.coils, settings.noise_fraction)
    rows = []
    for R, mask in _sweep_masks(cfg):
        recons = []
        for p, (img, _) in enumerate(case.phases):
            y = kspace.forward(img, case.coils, mask.phase_grid(p, img.shape), noise_std, derive_seed(seed, 0, p))
            if settings.sampler == "zero_filled":
                x = kspace.zero_filled(y, case.coils)
            else:
                x = recon.posterior_mean(y, case.coils, sampler_cfg)
            recons.append(x.astype(np.complex64))
            if recon_dir is not None:
                write_array(Path(recon_dir) / f"case_{i}_R{R:g}_phase{p}.bin", recons[-1])
        rows.append((R, *sweep_metrics(recons, case, settings.blur_sigma, settings.class_id)))
    return rows


def monotone_check(values, max_violations: int = 1, rel_tol: float = 0.01):
    """Check a sequence ordered from sparse to dense sampling is non-decreasing.

    Returns (ok, n_violations, worst_relative_drop).
    """
    drops = []
    for a, b in zip(values, values[1:]):
        if b < a:
            drops.append((a - b) / abs(a) if a != 0 else math.inf)
    worst = max(drops, default=0.0)
    ok = len(drops) == 0 or (len(drops) <= max_violations and worst <= rel_tol)
    return bool(ok), len(drops), worst


def cmd_sweep_quality(cfg: ExperimentConfig, out, jobs: int = 1, save_recons: bool = False):
    """Mean SSIM/PSNR/Dice per R of posterior-mean reconstructions."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    recon_dir = None
    if save_recons:
        recon_dir = out / "recons"
        recon_dir.mkdir(exist_ok=True)
    per_case = _pmap(_sweep_worker, [(cfg, i, recon_dir) for i in range(cfg.n_test)], jobs)

    _write_csv(out / "sweep_cases.csv", ["case_id", "R", "ssim", "psnr", "dice"],
               [_row(i, *r) for i, rows in enumerate(per_case) for r in rows])

    factors = [r[0] for r in per_case[0]]
    means = np.array([[np.mean([rows[j][k] for rows in per_case]) for k in (1, 2, 3)]
                      for j in range(len(factors))])
    _write_csv(out / "sweep_quality.csv", ["R", "mean_ssim", "mean_psnr", "mean_dice", "n_cases"],
               [_row(R, *means[j], len(per_case)) for j, R in enumerate(factors)])

    n_sched = len(cfg.schedule.factors)
    trend_rows = []
    for k, name in enumerate(("ssim", "psnr", "dice")):
        ok, nv, worst = monotone_check(list(means[:n_sched, k]))
        trend_rows.append(_row(name, nv, worst, ok))
    _write_csv(out / "sweep_trend.csv", ["metric", "n_violations", "worst_relative_drop", "monotone"], trend_rows)
    return factors, means


# --------------------------------------------------------------------------
# coverage-sim
# --------------------------------------------------------------------------


def synthetic_population(n: int, rng: np.random.Generator, shrink: float = 0.3):
    """Exchangeable heteroscedastic (w_true, w_hat, sigma) triples.

    The true error scale varies per draw and the errors are heavy-tailed;
    the reported sigma is the true scale times ``shrink`` (overconfident).
    """
    scale = np.exp(rng.normal(0.0, 0.5, n))
    w_true = rng.normal(2.0, 0.5, n)
    w_hat = w_true + scale * rng.standard_t(5, n)
    return w_true, w_hat, shrink * scale


def coverage_cell(n_calib: int, alpha: float, trials: int, n_test: int, shrink: float, seed: int,
                  sigma_floor: float = conformal.DEFAULT_SIGMA_FLOOR):
    """Per-trial empirical coverage (nan for sentinel trials) and sentinel flags."""
    cov = np.empty(trials)
    sentinel = np.zeros(trials, dtype=bool)
    for t in range(trials):
        rng = np.random.default_rng(derive_seed(seed, t))
        wt, wh, s = synthetic_population(n_calib + n_test, rng, shrink)
        scores = np.abs(wt[:n_calib] - wh[:n_calib]) / np.maximum(s[:n_calib], sigma_floor)
        q = conformal.conformal_quantile(scores, alpha)
        if math.isinf(q):
            sentinel[t] = True
            cov[t] = math.nan
            continue
        cov[t] = conformal.coverage_from_arrays(wh[n_calib:], s[n_calib:], wt[n_calib:], q, sigma_floor)
    return cov, sentinel


def cmd_coverage_sim(cfg: ExperimentConfig, out):
    """Mean coverage and a 95% normal CI per (n_calib, alpha) cell."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    c = cfg.coverage
    rows, results = [], []
    for n in c.n_calib_values:
        for a in c.alphas:
            seed = derive_seed(cfg.seed, _COVERAGE, n, int(round(a * 1e6)))
            cov, sentinel = coverage_cell(n, a, c.trials, c.n_test, c.overconfidence_shrink, seed, cfg.sigma_floor)
            k = conformal.quantile_rank(n, a)
            finite = cov[~sentinel]
            if finite.size:
                mean = float(finite.mean())
                half = 1.96 * float(finite.std(ddof=1)) / math.sqrt(finite.size) if finite.size > 1 else math.nan
                lo, hi = mean - half, mean + half
                mean_s, lo_s, hi_s = _fmt(mean), _fmt(lo), _fmt(hi)
            else:
                mean = lo = hi = math.nan
                mean_s = lo_s = hi_s = "undefined-sentinel"
                _warn(f"n_calib={n}, alpha={a}: every trial hit the +inf sentinel (rank {k} > {n})")
            expected = min(k, n + 1) / (n + 1)
            rows.append([_fmt(n), _fmt(a), _fmt(c.trials), _fmt(k), _fmt(float(sentinel.mean())),
                         mean_s, lo_s, hi_s, _fmt(expected)])
            results.append({"n_calib": n, "alpha": a, "rank": k, "sentinel_rate": float(sentinel.mean()),
                            "mean_coverage": mean, "ci_lo": lo, "ci_hi": hi})
    _write_csv(out / "coverage_sim.csv",
               ["n_calib", "alpha", "trials", "rank", "sentinel_rate", "mean_coverage", "ci_lo", "ci_hi",
                "expected_coverage"], rows)
    return results


# --------------------------------------------------------------------------
# make-cohort
# --------------------------------------------------------------------------


def cmd_make_cohort(cfg: ExperimentConfig, out):
    """Write calibration and test cohorts plus the schedule masks."""
    out = Path(out)
    for name, which, n in (("calibration", _CALIB_COHORT, cfg.n_calib), ("test", _TEST_COHORT, cfg.n_test)):
        for i, case in enumerate(cohort(cfg, which, n)):
            save_case(out / name, i, case)
    for R, mask in schedule_for(cfg):
        save_mask(out / "masks", f"mask_R{R:g}", mask)
    (out / "config.json").write_text(cfg.to_json() + "\n")
    return out
