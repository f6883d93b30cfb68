import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptscan.conformal import (
    CalibrationRecord,
    CalibratorTable,
    calibrate,
    conformal_quantile,
    coverage_from_arrays,
    empirical_coverage,
    interval,
    nonconformity_score,
    quantile_rank,
    uncalibrated_table,
)


def test_score_example():
    assert nonconformity_score(CalibrationRecord(5, 4, 0.5)) == 2.0


def test_score_floor():
    rec = CalibrationRecord(5, 4, 0.0)
    assert nonconformity_score(rec, 1e-6) == pytest.approx(1e6)
    with pytest.raises(ValueError):
        nonconformity_score(rec, 0.0)


def test_interval_example():
    iv = interval(10, 2, 1.5)
    assert (iv.lo, iv.hi) == (7.0, 13.0)
    assert iv.width == 6.0
    assert iv.contains(7.0) and iv.contains(13.0) and not iv.contains(13.0001)


def test_interval_sentinel():
    iv = interval(1.0, 0.5, math.inf)
    assert iv.unbounded and iv.contains(1e300)
    with pytest.raises(ValueError):
        interval(1.0, 0.5, -1.0)


@pytest.mark.parametrize(
    "n, alpha, k",
    [(10, 0.1, 10), (5, 0.1, 6), (50, 0.1, 46), (3, 0.5, 2), (9, 0.1, 9), (19, 0.05, 19), (1, 0.5, 1)],
)
def test_quantile_rank(n, alpha, k):
    assert quantile_rank(n, alpha) == k


def test_calibrate_n10_returns_max():
    recs = [CalibrationRecord(float(i), 0.0, 1.0) for i in range(1, 11)]
    assert calibrate(recs, 0.1) == 10.0


def test_calibrate_n5_sentinel():
    recs = [CalibrationRecord(float(i), 0.0, 1.0) for i in range(1, 6)]
    assert calibrate(recs, 0.1) == math.inf


def test_calibrate_zero_sigma_hits_floor():
    recs = [CalibrationRecord(1.0 + 0.1 * i, 1.0, 0.0) for i in range(1, 11)]
    q = calibrate(recs, 0.1, sigma_floor=1e-6)
    assert math.isfinite(q) and q == pytest.approx(1e6)


def test_calibrate_empty():
    with pytest.raises(ValueError):
        calibrate([], 0.1)


@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=60), st.floats(0.01, 0.99))
def test_quantile_is_an_order_statistic(scores, alpha):
    q = conformal_quantile(scores, alpha)
    k = quantile_rank(len(scores), alpha)
    if k > len(scores):
        assert q == math.inf
    else:
        s = sorted(scores)
        assert q == s[k - 1]
        # at least k scores are <= q
        assert sum(v <= q for v in scores) >= k


@given(st.floats(0.01, 0.99), st.integers(1, 200))
def test_rank_bounds(alpha, n):
    k = quantile_rank(n, alpha)
    assert (1 - alpha) * (n + 1) <= k + 1e-9
    assert k - 1 < (1 - alpha) * (n + 1) + 1e-9


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1])
def test_rank_alpha_domain(alpha):
    with pytest.raises(ValueError):
        quantile_rank(10, alpha)


def test_records_validate():
    with pytest.raises(ValueError):
        CalibrationRecord(math.nan, 1.0, 1.0)
    with pytest.raises(ValueError):
        CalibrationRecord(1.0, 1.0, -1.0)


def test_coverage_functions_agree(rng):
    w_hat = rng.normal(size=50)
    sigma = rng.uniform(0.5, 1.5, 50)
    truth = w_hat + rng.normal(size=50)
    ivs = [interval(w, s, 1.3) for w, s in zip(w_hat, sigma)]
    assert empirical_coverage(ivs, truth) == coverage_from_arrays(w_hat, sigma, truth, 1.3)
    with pytest.raises(ValueError):
        empirical_coverage(ivs, truth[:3])


def test_table_fit_per_R():
    recs = [CalibrationRecord(float(i), 0.0, 1.0, R=8.0) for i in range(1, 11)]
    recs += [CalibrationRecord(2.0 * i, 0.0, 1.0, R=4.0) for i in range(1, 11)]
    t = CalibratorTable.fit(recs, 0.1)
    assert t.q_hat(8) == 10.0 and t.q_hat(4) == 20.0
    assert t.covers([8, 4]) and not t.covers([16])
    assert t.n_calib == {8.0: 10, 4.0: 10}
    with pytest.raises(KeyError):
        t.q_hat(16)


def test_table_json_roundtrip():
    t = CalibratorTable({32.0: math.inf, 4.0: 2.5}, 0.1, {32.0: 5, 4.0: 5}, 1e-5)
    text = t.to_json()
    assert json.loads(text)["entries"][0]["q_hat"] == "inf"
    back = CalibratorTable.from_json(text)
    assert back.entries == t.entries and back.alpha == 0.1 and back.sigma_floor == 1e-5
    assert back.sentinel_factors == [32.0]


def test_uncalibrated_table():
    t = uncalibrated_table([8, 4])
    assert t.q_hat(8) == 1.0 and t.q_hat(4) == 1.0


def test_table_validation():
    with pytest.raises(ValueError):
        CalibratorTable({4.0: -1.0}, 0.1)
    with pytest.raises(ValueError):
        CalibratorTable({4.0: 1.0}, 1.5)


def test_marginal_coverage_small_n():
    # alpha = 0.5, n = 3 -> k = 2; coverage should average 2 / 4
    rng = np.random.default_rng(0)
    covs = []
    for _ in range(4000):
        s = np.abs(rng.normal(size=4))
        q = conformal_quantile(s[:3], 0.5)
        covs.append(s[3] <= q)
    assert abs(np.mean(covs) - 0.5) < 0.025
