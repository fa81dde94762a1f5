"""Scalar codebook for loudness values: Lloyd's k-means in one dimension.

Initialization is deterministic (evenly spaced quantiles), so a fit is
reproducible from (values, k) alone. Centroids are kept sorted ascending
and exact duplicates are collapsed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyCodebook,
    IndexOutOfRange,
    InsufficientDistinctValues,
    IoFailure,
    SchemaVersionMismatch,
)

CODEBOOK_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray                 # sorted ascending, strictly
    fit_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.size == 0:
            raise EmptyCodebook("codebook needs at least one centroid")
        if np.any(np.diff(c) <= 0):
            raise ValueError("centroids must be strictly ascending")
        object.__setattr__(self, "centroids", c)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def encode(self, value: float) -> int:
        """Index of the nearest centroid; ties go to the lower index."""
        return int(self.encode_many(np.array([value]))[0])

    def encode_many(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        # searchsorted + neighbor comparison; '<' keeps ties on the lower index
        pos = np.searchsorted(self.centroids, values)
        lo = np.clip(pos - 1, 0, self.k - 1)
        hi = np.clip(pos, 0, self.k - 1)
        pick_hi = np.abs(self.centroids[hi] - values) < np.abs(values - self.centroids[lo])
        return np.where(pick_hi, hi, lo).astype(np.int64)

    def decode(self, index: int) -> float:
        if not 0 <= index < self.k:
            raise IndexOutOfRange(f"index {index} outside [0, {self.k - 1}]")
        return float(self.centroids[index])


def _cluster_sse(pre: np.ndarray, pre2: np.ndarray, j, i):
    """Sum of squared errors of sorted values [j, i) around their mean."""
    s = pre[i] - pre[j]
    s2 = pre2[i] - pre2[j]
    m = i - j
    return s2 - s * s / m


def _optimal_partition(sorted_vals: np.ndarray, k: int) -> np.ndarray:
    """Globally optimal 1-D k-means centroids.

    Optimal clusters are contiguous in sorted order, so dynamic
    programming over break points finds the exact optimum. The layer
    recursion exploits monotone optimal break points (divide and
    conquer), keeping the whole thing O(k n log n). Deterministic:
    ties pick the leftmost break.
    """
    n = sorted_vals.size
    pre = np.concatenate([[0.0], np.cumsum(sorted_vals)])
    pre2 = np.concatenate([[0.0], np.cumsum(sorted_vals * sorted_vals)])

    idx = np.arange(n + 1)
    cost = np.full(n + 1, np.inf)
    cost[1:] = _cluster_sse(pre, pre2, 0, idx[1:])
    splits = np.zeros((k, n + 1), dtype=np.int64)

    for layer in range(1, k):
        new_cost = np.full(n + 1, np.inf)

        def solve(ilo, ihi, jlo, jhi):
            # best previous break j for i = mid lies in [jlo, jhi]
            if ilo > ihi:
                return
            mid = (ilo + ihi) // 2
            j0, j1 = jlo, min(jhi, mid - 1)
            js = np.arange(j0, j1 + 1)
            totals = cost[js] + _cluster_sse(pre, pre2, js, mid)
            best = int(np.argmin(totals))
            new_cost[mid] = totals[best]
            split = j0 + best
            splits[layer, mid] = split
            solve(ilo, mid - 1, jlo, split)
            solve(mid + 1, ihi, split, jhi)

        solve(layer + 1, n, layer, n - 1)
        cost = new_cost

    bounds = [n]
    for layer in range(k - 1, 0, -1):
        bounds.append(int(splits[layer, bounds[-1]]))
    bounds.append(0)
    bounds = bounds[::-1]
    return np.array([
        sorted_vals[bounds[i] : bounds[i + 1]].mean() for i in range(k)
    ])


def fit(values, k: int, max_iters: int = 100, tol: float = 1e-6) -> Codebook:
    """Quantile-initialized Lloyd iterations, then an exact refinement.

    Centroid j starts at the (j+0.5)/k quantile; empty clusters re-seed at
    the point farthest from its assigned centroid; iteration stops when the
    largest centroid movement drops below tol. Because Lloyd can stall in a
    local minimum even in 1-D, the result is checked against the exact
    dynamic-programming optimum and replaced when that is strictly better,
    so the fit cost always equals the global optimum.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    distinct = np.unique(values)
    if distinct.size < k:
        raise InsufficientDistinctValues(
            f"need at least {k} distinct values, got {distinct.size}"
        )

    sorted_vals = np.sort(values)
    quantiles = (np.arange(k) + 0.5) / k
    centroids = np.quantile(sorted_vals, quantiles)

    iterations = 0
    for iterations in range(1, max_iters + 1):
        dist = np.abs(values[:, None] - centroids[None, :])
        assign = np.argmin(dist, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = values[assign == j]
            if members.size:
                new_centroids[j] = members.mean()
            else:
                farthest = np.argmax(np.abs(values - centroids[assign]))
                new_centroids[j] = values[farthest]
        movement = np.max(np.abs(new_centroids - centroids))
        centroids = new_centroids
        if movement < tol:
            break

    centroids = np.unique(centroids)
    lloyd_cost = quantization_cost(values, Codebook(centroids=centroids))
    exact = np.unique(_optimal_partition(sorted_vals, k))
    exact_cost = quantization_cost(values, Codebook(centroids=exact))
    refined = exact_cost < lloyd_cost - 1e-12
    if refined:
        centroids = exact

    metadata = {"samples": int(values.size), "iterations": iterations,
                "requested_k": int(k), "exact_refinement": bool(refined)}
    return Codebook(centroids=centroids, fit_metadata=metadata)


def quantization_cost(values, codebook: Codebook) -> float:
    """Sum of squared errors of values against their nearest centroids."""
    values = np.asarray(values, dtype=np.float64).ravel()
    idx = codebook.encode_many(values)
    err = values - codebook.centroids[idx]
    return float(np.dot(err, err))


def save(codebook: Codebook, path) -> None:
    doc = {
        "version": CODEBOOK_SCHEMA_VERSION,
        "k": codebook.k,
        "centroids": codebook.centroids.tolist(),
        "metadata": codebook.fit_metadata,
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=2))
    except OSError as e:
        raise IoFailure(str(e)) from e


def load(path) -> Codebook:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise IoFailure(str(e)) from e
    if doc.get("version") != CODEBOOK_SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"unknown codebook version {doc.get('version')!r}")
    centroids = np.asarray(doc["centroids"], dtype=np.float64)
    if centroids.size == 0:
        raise EmptyCodebook("file contains no centroids")
    return Codebook(centroids=centroids, fit_metadata=doc.get("metadata", {}))
