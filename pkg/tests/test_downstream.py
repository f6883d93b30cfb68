import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from adaptscan.common import DISTRACTOR, STRUCTURE, PhantomKind
from adaptscan.downstream import (
    DegenerateSegmentationError,
    MetricDistribution,
    MetricKind,
    ejection_fraction,
    lvef_samples,
    propagate_lvef,
    propagate_volume,
    segment,
    volume,
)
from adaptscan.phantom import PhantomSpec, make_case
from adaptscan.quality import dice


def test_volume_examples():
    labels = np.zeros((100, 100), dtype=np.int32)
    labels.flat[:1000] = STRUCTURE
    assert volume(labels, STRUCTURE, (1, 1, 1)) == 1.0
    big = np.zeros((100, 100), dtype=np.int32)
    big.flat[:8000] = STRUCTURE
    assert volume(big, STRUCTURE, (0.5, 0.5, 0.5)) == 1.0
    assert volume(labels, DISTRACTOR, (1, 1, 1)) == 0.0


def test_volume_rejects_bad_input():
    labels = np.zeros((4, 4), dtype=np.int32)
    with pytest.raises(ValueError):
        volume(labels, 7, (1, 1, 1))
    with pytest.raises(ValueError):
        volume(labels, STRUCTURE, (1, 0, 1))


def test_ejection_fraction_examples():
    assert ejection_fraction(100, 40) == 60.0
    assert ejection_fraction(100, 100) == 0.0
    with pytest.raises(DegenerateSegmentationError):
        ejection_fraction(0, 10)


def test_metric_distribution_stats():
    d = MetricDistribution.from_samples([1.0, 2.0, 3.0], MetricKind.VOLUME_CM3)
    assert d.mean == 2.0 and d.std == 1.0
    flat = MetricDistribution.from_samples([5.0] * 4, MetricKind.VOLUME_CM3)
    assert flat.std == 0.0
    with pytest.raises(ValueError):
        MetricDistribution.from_samples([1.0], MetricKind.VOLUME_CM3)


@given(seed=st.integers(0, 2**63 - 1), kind=st.sampled_from(list(PhantomKind)))
def test_threshold_segmenter_on_clean_phantoms(seed, kind):
    case = make_case(PhantomSpec(kind, grid_size=64, n_coils=1, seed=seed))
    for img, labels in case.phases:
        seg = segment(img, kind)
        assert dice(seg, labels, STRUCTURE) >= 0.95
        assert dice(seg, labels, DISTRACTOR) >= 0.95


def test_segment_zero_image():
    seg = segment(np.zeros((32, 32)), PhantomKind.KNEE_STATIC)
    assert not seg.any()


def test_propagate_volume_identical_samples(knee_case):
    samples = np.repeat(knee_case.image[None], 3, axis=0)
    d = propagate_volume(samples, knee_case.kind, STRUCTURE, knee_case.voxel_spacing)
    assert d.std == 0.0
    assert d.metric_kind is MetricKind.VOLUME_CM3
    assert math.isclose(d.mean, volume(segment(knee_case.image, knee_case.kind), 1, knee_case.voxel_spacing))


def test_lvef_pairings():
    vals, excl = lvef_samples(np.array([100.0, 200.0]), np.array([50.0, 100.0]), "cross")
    assert sorted(vals) == [0.0, 50.0, 50.0, 75.0] and excl == 0
    vals, _ = lvef_samples(np.array([100.0, 200.0]), np.array([50.0, 100.0]), "matched")
    assert list(vals) == [50.0, 50.0]
    with pytest.raises(ValueError):
        lvef_samples(np.ones(2), np.ones(3), "matched")
    with pytest.raises(ValueError):
        lvef_samples(np.ones(2), np.ones(2), "diagonal")


def test_lvef_excludes_empty_ed():
    vals, excl = lvef_samples(np.array([0.0, 100.0]), np.array([40.0]), "cross")
    assert list(vals) == [60.0] and excl == 1
    with pytest.raises(DegenerateSegmentationError):
        lvef_samples(np.zeros(3), np.ones(3))


def test_propagate_lvef_clean(cardiac_case):
    (ed, _), (es, _) = cardiac_case.phases
    d = propagate_lvef(np.stack([ed, ed]), np.stack([es, es]), spacing=cardiac_case.voxel_spacing)
    assert d.metric_kind is MetricKind.LVEF_PERCENT
    assert abs(d.mean - cardiac_case.true_metric) < 5.0
    assert d.samples.size == 4
