import math

import numpy as np
import pytest

from stride.errors import ConfigError, DomainError
from stride.kernels import (
    FeatureMap,
    KernelSpec,
    apply_feature_map,
    build_feature_map,
    eval_kernel,
    kernel_matrix,
    median_bandwidth,
    select_landmarks,
)


def test_rbf_zero_distance():
    spec = KernelSpec(kind="rbf", bandwidth=1.0)
    assert eval_kernel(spec, 3.0, 3.0) == 1.0


def test_rbf_unit_distance_matches_formula():
    spec = KernelSpec(kind="rbf", bandwidth=1.0)
    assert eval_kernel(spec, 0.0, 1.0) == pytest.approx(math.exp(-0.5), abs=1e-15)


def test_laplace_matches_formula():
    spec = KernelSpec(kind="laplace", bandwidth=2.0)
    assert eval_kernel(spec, 1.0, 4.0) == pytest.approx(math.exp(-1.5), abs=1e-15)


def test_poly_offset_only():
    spec = KernelSpec(kind="poly", degree=2, offset=1.0)
    assert eval_kernel(spec, 0.0, 5.0) == 1.0


def test_poly_matches_formula():
    spec = KernelSpec(kind="poly", degree=3, offset=0.5)
    assert eval_kernel(spec, 2.0, -1.0) == pytest.approx((-2.0 + 0.5) ** 3, rel=1e-15)


def test_kernel_symmetry_randomized():
    rng = np.random.default_rng(4)
    specs = [
        KernelSpec(kind="rbf", bandwidth=0.7),
        KernelSpec(kind="laplace", bandwidth=1.3),
        KernelSpec(kind="poly", degree=2, offset=0.25),
    ]
    for spec in specs:
        for _ in range(50):
            x, t = rng.normal(size=2) * 3
            assert eval_kernel(spec, x, t) == eval_kernel(spec, t, x)


def test_rbf_laplace_range():
    rng = np.random.default_rng(5)
    x = rng.normal(size=40)
    t = rng.normal(size=30)
    for kind in ("rbf", "laplace"):
        k = kernel_matrix(KernelSpec(kind=kind, bandwidth=0.9), x, t)
        assert np.all(k > 0) and np.all(k <= 1.0)


def test_non_finite_input_rejected():
    spec = KernelSpec(kind="rbf", bandwidth=1.0)
    with pytest.raises(DomainError):
        eval_kernel(spec, float("nan"), 0.0)
    with pytest.raises(DomainError):
        eval_kernel(spec, 0.0, float("inf"))


def test_invalid_spec_rejected():
    with pytest.raises(ConfigError):
        KernelSpec(kind="cosine")
    with pytest.raises(ConfigError):
        KernelSpec(kind="rbf", bandwidth=0.0)
    with pytest.raises(ConfigError):
        KernelSpec(kind="poly", degree=0)


def _brute_median_pairwise(values):
    dists = []
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            dists.append(abs(values[i] - values[j]))
    return float(np.median(dists))


def test_median_bandwidth_enumerated_pairs():
    column = np.array([0.0, 1.0, 3.0])
    assert _brute_median_pairwise(column) == 2.0
    assert median_bandwidth(column) == 2.0


def test_median_bandwidth_random_agrees_with_enumeration():
    rng = np.random.default_rng(11)
    column = rng.normal(size=37)
    assert median_bandwidth(column) == pytest.approx(_brute_median_pairwise(column), abs=1e-15)


def test_median_bandwidth_constant_fallback():
    assert median_bandwidth(np.array([5.0, 5.0, 5.0, 5.0])) == 1.0


def test_median_bandwidth_single_pair():
    assert median_bandwidth(np.array([0.0, 1.0])) == 1.0


def test_median_bandwidth_too_short():
    with pytest.raises(ConfigError):
        median_bandwidth(np.array([1.0]))


def test_median_bandwidth_subsample_deterministic():
    rng = np.random.default_rng(0)
    column = rng.normal(size=2500)
    assert median_bandwidth(column, seed=3) == median_bandwidth(column, seed=3)


def test_landmarks_subset_and_deterministic():
    rng = np.random.default_rng(7)
    column = rng.normal(size=50)
    lm1 = select_landmarks(column, rank=8, seed=11, feature_index=2)
    lm2 = select_landmarks(column, rank=8, seed=11, feature_index=2)
    assert np.array_equal(lm1.points, lm2.points)
    assert all(p in column for p in lm1.points)
    lm3 = select_landmarks(column, rank=8, seed=11, feature_index=3)
    assert not np.array_equal(lm1.points, lm3.points)


def test_landmarks_rank_bounds():
    column = np.arange(5.0)
    with pytest.raises(ConfigError):
        select_landmarks(column, rank=0, seed=1)
    with pytest.raises(ConfigError):
        select_landmarks(column, rank=6, seed=1)


def test_full_rank_map_reconstructs_kernel_matrix():
    # Exact Nystrom at full rank: the uncentered map M satisfies M M^T = K.
    rng = np.random.default_rng(13)
    column = rng.normal(size=30)
    spec = KernelSpec(kind="rbf", bandwidth=median_bandwidth(column))
    fmap = build_feature_map(column, spec, rank=30, seed=11)
    uncentered = fmap.values + fmap.column_means[None, :]
    full = np.array([[eval_kernel(spec, a, b) for b in column] for a in column])
    assert np.max(np.abs(uncentered @ uncentered.T - full)) <= 1e-8


def test_rank_one_map_matches_hand_evaluation():
    column = np.array([0.0, 0.5, 2.0])
    spec = KernelSpec(kind="rbf", bandwidth=1.0)
    fmap = build_feature_map(column, spec, rank=1, seed=11)
    t = fmap.landmarks.points[0]
    uncentered = (fmap.values + fmap.column_means[None, :]).ravel()
    expected = np.array([eval_kernel(spec, x, t) for x in column]) / math.sqrt(eval_kernel(spec, t, t))
    assert uncentered == pytest.approx(expected, abs=1e-12)


def test_centered_columns_have_zero_background_mean():
    rng = np.random.default_rng(17)
    column = rng.normal(size=200)
    spec = KernelSpec(kind="laplace", bandwidth=0.8)
    fmap = build_feature_map(column, spec, rank=16, seed=23)
    assert np.max(np.abs(fmap.values.mean(axis=0))) <= 1e-12


def test_centered_columns_weighted_mean():
    rng = np.random.default_rng(18)
    column = rng.normal(size=120)
    weights = rng.uniform(0.1, 2.0, size=120)
    spec = KernelSpec(kind="rbf", bandwidth=1.0)
    fmap = build_feature_map(column, spec, rank=10, seed=5, weights=weights)
    wn = weights / weights.sum()
    assert np.max(np.abs(wn @ fmap.values)) <= 1e-12


def test_build_is_deterministic():
    rng = np.random.default_rng(19)
    column = rng.normal(size=80)
    spec = KernelSpec(kind="rbf", bandwidth=1.1)
    a = build_feature_map(column, spec, rank=12, seed=37)
    b = build_feature_map(column, spec, rank=12, seed=37)
    assert np.array_equal(a.values, b.values)
    assert np.array_equal(a.whitening, b.whitening)


def test_apply_reproduces_training_values():
    rng = np.random.default_rng(21)
    column = rng.normal(size=60)
    spec = KernelSpec(kind="rbf", bandwidth=0.9)
    fmap = build_feature_map(column, spec, rank=9, seed=29)
    assert np.array_equal(apply_feature_map(fmap, spec, column), fmap.values)


def test_degenerate_column_yields_zero_map():
    column = np.full(40, 3.25)
    spec = KernelSpec(kind="rbf", bandwidth=1.0)
    fmap = build_feature_map(column, spec, rank=4, seed=11)
    assert fmap.degenerate
    assert np.max(np.abs(fmap.values)) <= 1e-12
    out = apply_feature_map(fmap, spec, np.array([0.0, 3.25, 9.0]))
    assert np.all(out == 0.0)


def test_apply_single_landmark_point():
    # Rank 1, new point placed exactly on the landmark.
    column = np.array([0.0, 1.0, -1.0, 2.0])
    spec = KernelSpec(kind="rbf", bandwidth=1.0)
    fmap = build_feature_map(column, spec, rank=1, seed=2)
    t = float(fmap.landmarks.points[0])
    out = apply_feature_map(fmap, spec, np.array([t]))
    expected = eval_kernel(spec, t, t) / math.sqrt(eval_kernel(spec, t, t)) - fmap.column_means[0]
    assert out[0, 0] == pytest.approx(expected, abs=1e-12)


def test_resolved_fills_bandwidth():
    column = np.array([0.0, 1.0, 3.0])
    spec = KernelSpec(kind="rbf")
    assert spec.resolved(column).bandwidth == 2.0
    poly = KernelSpec(kind="poly", degree=2)
    assert poly.resolved(column) is poly
