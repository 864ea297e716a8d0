"""Fixed-rule time-series to graph mappings: VG, HVG and LPVG.

All node indices are 0-based in memory; exporters shift to 1-based.
Visibility uses the strict chord test, so collinear intermediate samples
block an edge.

HVG and LPVG follow their usual literature definitions:

* HVG joins ``i < j`` when every intermediate sample is strictly below
  ``min(T_i, T_j)``.
* LPVG(L) joins ``i < j`` when at most ``L`` intermediate samples fail the
  VG chord test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import as_series

try:
    from numba import njit
except ImportError:  # pragma: no cover
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


@dataclass(frozen=True, eq=False)
class VisGraph:
    """Undirected weighted graph on ``node_count`` time-indexed nodes.

    ``pairs`` is an ``(E, 2)`` array of 0-based ``(u, v)`` with ``u < v``,
    kept sorted by span ``v - u`` then by ``u``; ``weights`` is parallel.
    """

    node_count: int
    pairs: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if len(weights) != len(pairs):
            raise ValueError("pairs and weights differ in length")
        if len(pairs):
            if np.any(pairs[:, 0] >= pairs[:, 1]):
                raise ValueError("edges must satisfy u < v (no self-loops)")
            if pairs.min() < 0 or pairs.max() >= self.node_count:
                raise ValueError("edge endpoint out of range")
            if np.any(weights <= 0):
                raise ValueError("edge weights must be positive")
        order = np.lexsort((pairs[:, 0], pairs[:, 1] - pairs[:, 0]))
        pairs, weights = pairs[order], weights[order]
        if len(pairs) > 1 and np.any(np.all(pairs[1:] == pairs[:-1], axis=1)):
            raise ValueError("duplicate edge")
        pairs.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def unweighted(cls, node_count: int, pairs) -> "VisGraph":
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return cls(node_count, pairs, np.ones(len(pairs)))

    @property
    def num_edges(self) -> int:
        return len(self.pairs)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.pairs}

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count))
        a[self.pairs[:, 0], self.pairs[:, 1]] = self.weights
        a[self.pairs[:, 1], self.pairs[:, 0]] = self.weights
        return a

    def degrees(self) -> np.ndarray:
        return np.bincount(self.pairs.ravel(), minlength=self.node_count)

    def __eq__(self, other):
        if not isinstance(other, VisGraph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and np.array_equal(self.pairs, other.pairs)
            and np.array_equal(self.weights, other.weights)
        )

    def __repr__(self):
        return f"VisGraph(node_count={self.node_count}, edges={self.num_edges})"


@njit(cache=True)
def _pack(pairs):
    arr = np.empty((len(pairs), 2), dtype=np.int64)
    for k in range(len(pairs)):
        arr[k, 0] = pairs[k][0]
        arr[k, 1] = pairs[k][1]
    return arr


@njit(cache=True)
def _below_chord(x, i, j, u):
    # T_u < (T_j - T_i)(u - j)/(j - i) + T_j
    return x[u] < (x[j] - x[i]) * (u - j) / (j - i) + x[j]


@njit(cache=True)
def _vg_naive_pairs(x):
    n = x.shape[0]
    out = []
    for i in range(n - 1):
        for j in range(i + 1, n):
            visible = True
            for u in range(i + 1, j):
                if not _below_chord(x, i, j, u):
                    visible = False
                    break
            if visible:
                out.append((i, j))
    return _pack(out)


@njit(cache=True)
def _vg_fast_pairs(x):
    n = x.shape[0]
    out = []
    stack = [(0, n - 1)]
    while len(stack) > 0:
        lo, hi = stack.pop()
        if hi <= lo:
            continue
        k = lo
        for t in range(lo + 1, hi + 1):
            if x[t] > x[k]:
                k = t
        # Nothing crosses the pivot: T_k >= both endpoints, so T_k is never
        # strictly below a chord spanning it.
        best = -1
        best_slope = 0.0
        for j in range(k + 1, hi + 1):
            if best < 0 or _below_chord(x, k, j, best):
                out.append((k, j))
            slope = (x[j] - x[k]) / (j - k)
            if best < 0 or slope > best_slope:
                best = j
                best_slope = slope
        best = -1
        for i in range(k - 1, lo - 1, -1):
            if best < 0 or _below_chord(x, i, k, best):
                out.append((i, k))
            slope = (x[i] - x[k]) / (k - i)
            if best < 0 or slope > best_slope:
                best = i
                best_slope = slope
        stack.append((lo, k - 1))
        stack.append((k + 1, hi))
    return _pack(out)


@njit(cache=True)
def _hvg_pairs(x):
    n = x.shape[0]
    out = []
    stack = []
    for j in range(n):
        while len(stack) > 0 and x[stack[-1]] < x[j]:
            out.append((stack.pop(), j))
        if len(stack) > 0:
            out.append((stack[-1], j))
            # an equal value hides everything behind it from later points
            if x[stack[-1]] == x[j]:
                stack.pop()
        stack.append(j)
    return _pack(out)


@njit(cache=True)
def _lpvg_pairs(x, limit):
    n = x.shape[0]
    out = []
    for i in range(n - 1):
        for j in range(i + 1, n):
            blocked = 0
            for u in range(i + 1, j):
                if not _below_chord(x, i, j, u):
                    blocked += 1
                    if blocked > limit:
                        break
            if blocked <= limit:
                out.append((i, j))
    return _pack(out)


def _to_graph(n: int, pairs: np.ndarray) -> VisGraph:
    return VisGraph.unweighted(n, pairs)


def vg_naive(series) -> VisGraph:
    """Natural visibility graph by direct evaluation of every pair.

    O(n^2) pairs, each checked against all intermediate samples (with early
    exit). Serves as the reference for :func:`vg_fast`.
    """
    x = as_series(series)
    return _to_graph(x.size, _vg_naive_pairs(x))


def vg_fast(series) -> VisGraph:
    """Natural visibility graph by max-pivot divide and conquer.

    The maximum of each interval blocks every chord that crosses it, so
    only the pivot's own edges need scanning; each side scan keeps the
    steepest slope seen so far as the sole candidate blocker. Output is
    identical to :func:`vg_naive`. O(n log n) on typical series, O(n^2)
    on monotone ones.
    """
    x = as_series(series)
    return _to_graph(x.size, _vg_fast_pairs(x))


def hvg(series) -> VisGraph:
    """Horizontal visibility graph via a monotone stack, O(n)."""
    x = as_series(series)
    return _to_graph(x.size, _hvg_pairs(x))


def lpvg(series, penetrable_limit: int = 1) -> VisGraph:
    """Limited penetrable visibility graph with at most ``penetrable_limit`` blockers."""
    if penetrable_limit < 0:
        raise ValueError(f"penetrable_limit must be >= 0, got {penetrable_limit}")
    x = as_series(series)
    return _to_graph(x.size, _lpvg_pairs(x, int(penetrable_limit)))
