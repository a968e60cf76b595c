import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import exhaustive_thresholds, otsu_cost
from trim.raster import RasterImage
from trim.segmentation import (
    ChannelHistogram,
    PsoParams,
    ThresholdSet,
    apply_thresholds,
    between_class_variance,
    channel_histogram,
    class_statistics,
    extract_boundaries,
    pso_optimize,
    pso_thresholds,
    quantize,
    segment,
)


def test_quantize_rule():
    assert quantize(np.array([0.0, 1 / 510, 0.5, 1.0])).tolist() == [0, 1, 128, 255]


def test_histogram_all_zero():
    h = channel_histogram(np.zeros((2, 2, 3), dtype=int), 256)
    assert h.counts[0, 0] == 4 and h.counts[0, 1:].sum() == 0
    assert h.global_mean[0] == 0


def test_histogram_two_levels():
    q = np.array([[0, 0], [3, 3]])[:, :, None]
    h = channel_histogram(q, 4)
    assert h.probabilities[0].tolist() == [0.5, 0, 0, 0.5]
    assert h.global_mean[0] == 1.5


def test_histogram_conservation_and_normalisation():
    img = RasterImage(np.random.default_rng(0).random((13, 17, 3)))
    h = channel_histogram(img, 256)
    assert np.all(h.counts.sum(axis=1) == 13 * 17)
    assert np.allclose(h.probabilities.sum(axis=1), 1, atol=1e-12)


def test_histogram_rejects_empty():
    with pytest.raises(ValueError):
        channel_histogram(np.zeros((0, 3, 3), dtype=int), 4)


def test_cost_two_spikes_is_2_25_and_optimal():
    p = np.array([0.5, 0, 0, 0.5])
    assert between_class_variance(p, [0]) == pytest.approx(2.25)
    best, _ = exhaustive_thresholds(p, 2)
    assert best == pytest.approx(2.25)
    for x in (0, 1, 2):
        assert otsu_cost(p, [x]) == pytest.approx(2.25)


def test_cost_single_region_is_zero():
    p = np.random.default_rng(1).dirichlet(np.ones(8))
    assert between_class_variance(p, []) == pytest.approx(0, abs=1e-15)


def test_cost_uniform_split():
    assert between_class_variance(np.full(4, 0.25), [1]) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5))
def test_cost_matches_loop_oracle_and_total_mean(seed, regions):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(12)) * (rng.random(12) > 0.3)
    if p.sum() == 0:
        p[0] = 1
    p /= p.sum()
    thr = np.sort(rng.choice(11, regions - 1, replace=False))
    assert between_class_variance(p, thr) == pytest.approx(otsu_cost(p, list(thr)), abs=1e-12)
    w, mu = class_statistics(p, thr)
    assert w.sum() == pytest.approx(1, abs=1e-12)
    assert np.nansum(w * mu) == pytest.approx(p @ np.arange(12), abs=1e-12)


def test_empty_levels_do_not_change_optimum():
    rng = np.random.default_rng(2)
    p = rng.dirichlet(np.ones(8))
    padded = np.concatenate([p, np.zeros(4)])
    assert exhaustive_thresholds(p, 3)[0] == pytest.approx(exhaustive_thresholds(padded, 3)[0], abs=1e-12)


def test_pso_finds_two_spike_optimum():
    thr = pso_thresholds(np.array([0.5, 0, 0, 0.5]), 2, PsoParams(seed=0))
    assert between_class_variance(np.array([0.5, 0, 0, 0.5]), thr) == pytest.approx(2.25)


def test_pso_single_occupied_level_costs_zero():
    p = np.zeros(16)
    p[5] = 1
    thr = pso_thresholds(p, 2, PsoParams(seed=0))
    assert between_class_variance(p, thr) == 0


def test_pso_falls_back_with_few_occupied_levels(caplog):
    p = np.zeros(16)
    p[[2, 9]] = 0.5
    thr = pso_thresholds(p, 4, PsoParams(seed=0))
    assert "occupied" in caplog.text
    assert list(thr) == [2]


def test_pso_deterministic():
    hist = channel_histogram(RasterImage(np.random.default_rng(3).random((20, 20, 3))), 64)
    a = pso_optimize(hist, 4, PsoParams(seed=11))
    b = pso_optimize(hist, 4, PsoParams(seed=11))
    assert all(np.array_equal(x, y) for x, y in zip(a.thresholds, b.thresholds))


def test_pso_thresholds_valid():
    hist = channel_histogram(RasterImage(np.random.default_rng(4).random((20, 20, 3))), 256)
    thr = pso_optimize(hist, 5, PsoParams(seed=1))
    for t in thr.thresholds:
        assert len(t) == 4
        assert np.all(np.diff(t) > 0)
        assert t[0] >= 0 and t[-1] <= 254


def test_pso_matches_exhaustive_on_small_histograms():
    exact = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.full(16, 0.5))
        best, _ = exhaustive_thresholds(p, 3)
        got = between_class_variance(p, pso_thresholds(p, 3, PsoParams(seed=seed)))
        assert got >= 0.99 * best
        exact += abs(got - best) <= 1e-12
    assert exact >= 19


def test_pso_validation():
    hist = ChannelHistogram(np.ones((1, 4), dtype=int))
    with pytest.raises(ValueError):
        pso_optimize(hist, 1)
    with pytest.raises(ValueError):
        pso_optimize(hist, 5)
    with pytest.raises(ValueError):
        PsoParams(particles=1)


def test_apply_thresholds_conventions():
    thr = ThresholdSet([np.array([3, 7])], 16)
    q = np.array([[0, 3, 4, 7, 8, 15]])
    assert apply_thresholds(q, thr)[:, :, 0].tolist() == [[1, 1, 2, 2, 3, 3]]


def test_apply_thresholds_constant_and_two_tone():
    thr = ThresholdSet([np.array([100])] * 3, 256)
    const = np.full((5, 5, 3), 40)
    assert len(np.unique(apply_thresholds(const, thr).reshape(-1, 3), axis=0)) == 1
    two = const.copy()
    two[:, 3:] = 200
    assert len(np.unique(apply_thresholds(two, thr).reshape(-1, 3), axis=0)) == 2


def test_boundaries_constant_empty():
    assert len(extract_boundaries(np.ones((6, 6, 3), dtype=int))) == 0


def test_boundaries_vertical_split():
    lab = np.ones((5, 8), dtype=int)
    lab[:, 4:] = 2
    mask = extract_boundaries(lab).mask
    assert mask[:, [3, 4]].all()
    assert mask.sum() == 10


def test_boundaries_checkerboard():
    lab = (np.indices((6, 7)).sum(axis=0) % 2) + 1
    assert extract_boundaries(lab).mask.all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_boundaries_symmetric(seed):
    lab = np.random.default_rng(seed).integers(1, 3, (8, 9))
    mask = extract_boundaries(lab).mask
    # every differing 4-neighbour pair flags both pixels
    for a, b in (((slice(1, None), slice(None)), (slice(None, -1), slice(None))),
                 ((slice(None), slice(1, None)), (slice(None), slice(None, -1)))):
        diff = lab[a] != lab[b]
        assert np.all(mask[a][diff]) and np.all(mask[b][diff])
    # and nothing else is flagged
    recon = np.zeros_like(mask)
    dv = lab[1:] != lab[:-1]
    dh = lab[:, 1:] != lab[:, :-1]
    recon[1:] |= dv
    recon[:-1] |= dv
    recon[:, 1:] |= dh
    recon[:, :-1] |= dh
    assert np.array_equal(mask, recon)


def test_segment_returns_labels_in_range():
    img = RasterImage(np.random.default_rng(5).random((10, 12, 3)))
    labels, thr, hist = segment(img, 3, PsoParams(seed=0))
    assert labels.shape == (10, 12, 3)
    assert labels.min() >= 1 and labels.max() <= 3
    assert hist.levels == 256
