import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptscan.common import BACKGROUND, DISTRACTOR, STRUCTURE, PhantomKind
from adaptscan.downstream import ejection_fraction, volume
from adaptscan.phantom import (
    CARDIAC_PARAM_RANGES,
    KNEE_PARAM_RANGES,
    PhantomSpec,
    make_case,
    make_coils,
    make_cohort,
)

seeds = st.integers(min_value=0, max_value=2**63 - 1)


def test_same_seed_same_case():
    a = make_case(PhantomSpec(seed=5))
    b = make_case(PhantomSpec(seed=5))
    assert np.array_equal(a.image, b.image)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.coils.maps, b.coils.maps)
    assert a.params == b.params


def test_different_seed_differs():
    a = make_case(PhantomSpec(seed=5))
    b = make_case(PhantomSpec(seed=6))
    assert not np.array_equal(a.image, b.image)


@given(seed=seeds, grid=st.sampled_from([16, 32]))
def test_knee_invariants(seed, grid):
    case = make_case(PhantomSpec(seed=seed, grid_size=grid, n_coils=2))
    assert set(np.unique(case.labels)) <= {BACKGROUND, STRUCTURE, DISTRACTOR}
    assert np.any(case.labels == STRUCTURE)
    # the structure sits inside tissue: never touches background directly at the border
    assert np.all(case.labels[0] == BACKGROUND) and np.all(case.labels[:, 0] == BACKGROUND)
    assert case.true_metric == volume(case.labels, STRUCTURE, case.voxel_spacing)
    assert np.all(np.isfinite(case.image))
    assert np.all(np.abs(case.image[case.labels == BACKGROUND]) == 0)
    for name, (lo, hi) in KNEE_PARAM_RANGES.items():
        assert lo <= case.params[name] <= hi


@given(seed=seeds)
def test_cardiac_invariants(seed):
    case = make_case(PhantomSpec(PhantomKind.CARDIAC_TWO_PHASE, seed=seed, grid_size=64, n_coils=1))
    (ed, ed_lab), (es, es_lab) = case.phases
    v_ed = volume(ed_lab, STRUCTURE, case.voxel_spacing)
    v_es = volume(es_lab, STRUCTURE, case.voxel_spacing)
    assert 0 < v_es < v_ed
    assert case.true_metric == ejection_fraction(v_ed, v_es)
    lo, hi = CARDIAC_PARAM_RANGES["ejection_ratio"]
    # pixelization moves the realized fraction a few points off the drawn one
    assert 100 * lo - 8 < case.true_metric < 100 * hi + 8
    # tissue is unchanged between phases
    assert np.array_equal(ed_lab == BACKGROUND, es_lab == BACKGROUND)


def test_fixed_shape_param_is_honored():
    case = make_case(PhantomSpec(shape_params={"roi_angle": 0.25, "roi_a": (0.15, 0.15)}, seed=3))
    assert case.params["roi_angle"] == 0.25
    assert case.params["roi_a"] == 0.15


def test_override_does_not_shift_other_draws():
    a = make_case(PhantomSpec(seed=3))
    b = make_case(PhantomSpec(shape_params={"roi_angle": 0.25}, seed=3))
    for k in a.params:
        if k != "roi_angle":
            assert a.params[k] == b.params[k]


@pytest.mark.parametrize("n_coils", [1, 4, 8])
def test_coils_rss_normalized(n_coils):
    maps = make_coils(32, n_coils, seed=2).maps
    assert maps.shape == (n_coils, 32, 32)
    np.testing.assert_allclose(np.sqrt(np.sum(np.abs(maps) ** 2, axis=0)), 1.0, atol=1e-12)


def test_phase_is_smooth(knee_case):
    z = knee_case.image
    inside = knee_case.labels > 0
    # neighbouring in-body pixels differ in phase by a small amount
    d = np.angle(z[:, 1:] * np.conj(z[:, :-1]))
    both = inside[:, 1:] & inside[:, :-1]
    assert np.max(np.abs(d[both])) < 0.2


@pytest.mark.parametrize("grid", [15, 24, 8])
def test_bad_grid_rejected(grid):
    with pytest.raises(ValueError):
        PhantomSpec(grid_size=grid)


def test_unknown_param_rejected():
    with pytest.raises(ValueError, match="unknown"):
        PhantomSpec(shape_params={"banana": 1.0})


def test_shape_outside_grid_rejected():
    with pytest.raises(ValueError, match="exits"):
        make_case(PhantomSpec(shape_params={"body_a": 0.6}))


def test_structure_outside_body_rejected():
    with pytest.raises(ValueError, match="exits"):
        make_case(PhantomSpec(shape_params={"roi_dx": 0.3, "roi_a": 0.15}))


def test_cohort_size_and_distinct():
    cohort = make_cohort(PhantomSpec(grid_size=32, n_coils=1), 4, seed=9)
    assert len(cohort) == 4
    assert len({c.true_metric for c in cohort}) > 1
    with pytest.raises(ValueError):
        make_cohort(PhantomSpec(), 0, seed=1)


def test_knee_volume_units():
    # 1000 structure voxels at 1 mm isotropic is 1 cm^3
    labels = np.zeros((64, 64), dtype=np.int32)
    labels.flat[:1000] = STRUCTURE
    assert volume(labels, STRUCTURE, (1.0, 1.0, 1.0)) == 1.0
    assert math.isclose(volume(labels, STRUCTURE, (2.5, 2.5, 5.0)), 31.25)
