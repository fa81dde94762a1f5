"""Scalar codebook: Lloyd fit, encode/decode, persistence."""

import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pianodiff.errors import (
    EmptyCodebook,
    IndexOutOfRange,
    InsufficientDistinctValues,
    SchemaVersionMismatch,
)
from pianodiff.quantizer import Codebook, fit, load, quantization_cost, save


def best_contiguous_partition_cost(values: np.ndarray, k: int) -> float:
    """Exhaustive 1-D k-means oracle: optimal clusters are contiguous in
    sorted order, so enumerate every composition of the sorted values."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    n = x.size
    pre = np.concatenate([[0.0], np.cumsum(x)])
    pre2 = np.concatenate([[0.0], np.cumsum(x * x)])

    def sse(i, j):  # cost of cluster x[i:j]
        s, s2, m = pre[j] - pre[i], pre2[j] - pre2[i], j - i
        return s2 - s * s / m

    best = np.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = (0,) + cuts + (n,)
        cost = sum(sse(bounds[i], bounds[i + 1]) for i in range(k))
        best = min(best, cost)
    return best


def test_fit_k1_is_mean():
    values = np.array([1.0, 2.0, 6.0])
    cb = fit(values, 1)
    np.testing.assert_allclose(cb.centroids, [values.mean()])


def test_fit_spec_example():
    cb = fit(np.array([-70.0, -23.0, -23.0, -10.0]), 2)
    np.testing.assert_allclose(cb.centroids, [-70.0, -56.0 / 3.0])
    oracle = best_contiguous_partition_cost(np.array([-70.0, -23.0, -23.0, -10.0]), 2)
    assert abs(quantization_cost(np.array([-70.0, -23.0, -23.0, -10.0]), cb) - oracle) < 1e-9


def test_fit_fixed_point_on_equal_count_clusters():
    values = np.repeat([1.0, 5.0, 9.0], 4)
    cb = fit(values, 3)
    np.testing.assert_allclose(cb.centroids, [1.0, 5.0, 9.0])


def test_fit_requires_distinct_values():
    with pytest.raises(InsufficientDistinctValues):
        fit(np.array([2.0, 2.0, 2.0]), 2)


def test_fit_deterministic():
    rng = np.random.default_rng(7)
    values = rng.normal(-30, 10, 200)
    a = fit(values, 8)
    b = fit(values, 8)
    np.testing.assert_array_equal(a.centroids, b.centroids)


def test_quantization_error_non_increasing_in_k():
    rng = np.random.default_rng(3)
    values = np.concatenate([rng.normal(-60, 2, 50), rng.normal(-25, 4, 50),
                             rng.normal(-10, 1, 30)])
    costs = [quantization_cost(values, fit(values, k)) for k in (1, 2, 4, 8, 16)]
    assert all(a >= b - 1e-9 for a, b in zip(costs, costs[1:]))


def test_encode_nearest_and_ties():
    cb = Codebook(centroids=np.array([-60.0, -40.0, -20.0, -10.0]))
    assert cb.encode(-20.0) == 2           # exact centroid
    assert cb.encode(-50.0) == 0           # midway: tie to lower index
    assert cb.encode(-100.0) == 0          # below all
    assert cb.encode(5.0) == 3             # above all


@settings(max_examples=60, deadline=None)
@given(st.floats(min_value=-100, max_value=20), st.floats(min_value=0.0, max_value=30.0))
def test_encode_monotone(v, delta):
    cb = Codebook(centroids=np.array([-70.0, -45.5, -30.0, -12.0, -3.0]))
    assert cb.encode(v) <= cb.encode(v + delta)


def test_decode_roundtrip_and_optimality():
    cb = Codebook(centroids=np.array([-70.0, -33.0, -12.5]))
    for j, c in enumerate(cb.centroids):
        assert cb.encode(c) == j
        assert cb.decode(cb.encode(c)) == c
    value = -29.0
    err = abs(value - cb.decode(cb.encode(value)))
    assert all(err <= abs(value - c) + 1e-12 for c in cb.centroids)
    with pytest.raises(IndexOutOfRange):
        cb.decode(3)


def test_decode_single_centroid():
    cb = Codebook(centroids=np.array([-41.25]))
    assert cb.decode(0) == -41.25


def test_save_load_bit_exact(tmp_path):
    rng = np.random.default_rng(11)
    cb = fit(rng.normal(-30, 15, 500), 32)
    path = tmp_path / "cb.json"
    save(cb, path)
    back = load(path)
    np.testing.assert_array_equal(back.centroids, cb.centroids)
    assert back.k == cb.k


def test_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "cb.json"
    path.write_text(json.dumps({"version": 99, "k": 1, "centroids": [0.0]}))
    with pytest.raises(SchemaVersionMismatch):
        load(path)


def test_load_rejects_empty_centroids(tmp_path):
    path = tmp_path / "cb.json"
    path.write_text(json.dumps({"version": 1, "k": 0, "centroids": []}))
    with pytest.raises(EmptyCodebook):
        load(path)


def test_fit_matches_enumeration_oracle_small_cases():
    rng = np.random.default_rng(0)
    for trial in range(8):
        n = int(rng.integers(6, 24))
        k = int(rng.integers(1, 5))
        values = np.round(rng.uniform(-70, -5, n), 3)
        if np.unique(values).size < k:
            continue
        cb = fit(values, k)
        cost = quantization_cost(values, cb)
        oracle = best_contiguous_partition_cost(values, k)
        assert cost <= oracle + 1e-9, f"trial {trial}: {cost} vs {oracle}"
