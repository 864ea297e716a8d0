"""Adaptive visibility graph: a learnable banded convolutional mapping.

For every span ``s`` in ``2..m`` a length-``s`` kernel slides over the
series with stride 1. The rectified response of the window starting at
``f`` becomes the weight of edge ``(f, f + s - 1)``. Samples further than
``m - 1`` steps apart are never joined.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import nn
from .errors import ShapeError
from .signal import as_series
from .visibility import VisGraph


@dataclass
class ConvBank:
    """Kernels ``kernels[s - 2]`` of length ``s`` for ``s = 2..m``, one bias per kernel."""

    kernels: list[np.ndarray]
    biases: np.ndarray
    use_bias: bool = True

    def __post_init__(self):
        self.kernels = [np.asarray(k, dtype=np.float64).reshape(-1) for k in self.kernels]
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(-1)
        if not self.kernels:
            raise ValueError("a bank needs at least one kernel (m >= 2)")
        for idx, k in enumerate(self.kernels):
            if k.size != idx + 2:
                raise ValueError(f"kernel {idx} must have length {idx + 2}, got {k.size}")
        if self.biases.size != len(self.kernels):
            raise ValueError("one bias per kernel required")

    @property
    def m(self) -> int:
        return len(self.kernels) + 1

    def num_values(self) -> int:
        return int(np.sum([k.size for k in self.kernels])) + (self.biases.size if self.use_bias else 0)


def init_bank(m: int, seed: int, use_bias: bool = True) -> ConvBank:
    """Fan-in uniform kernels, ``U(-sqrt(1/s), sqrt(1/s))``; zero biases."""
    if m < 2:
        raise ValueError(f"m must be >= 2, got {m}")
    rng = np.random.default_rng(seed)
    kernels = [rng.uniform(-np.sqrt(1.0 / s), np.sqrt(1.0 / s), size=s) for s in range(2, m + 1)]
    return ConvBank(kernels, np.zeros(m - 1), use_bias)


@dataclass
class BandedMatrix:
    """Symmetric ``n x n`` matrix stored by superdiagonal.

    ``bands[d - 1][i]`` is the entry at ``(i, i + d)`` for ``d = 1..m-1``.
    The diagonal and everything beyond the band are zero.
    """

    n: int
    bands: list[np.ndarray] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.bands) + 1

    def __getitem__(self, ij) -> float:
        i, j = ij
        if i > j:
            i, j = j, i
        d = j - i
        if d == 0 or d > len(self.bands):
            return 0.0
        return float(self.bands[d - 1][i])

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for d, band in enumerate(self.bands, start=1):
            idx = np.arange(self.n - d)
            a[idx, idx + d] = band
            a[idx + d, idx] = band
        return a

    def to_graph(self) -> VisGraph:
        """Edges with strictly positive weight; ReLU zeros are dropped."""
        pairs, weights = [], []
        for d, band in enumerate(self.bands, start=1):
            idx = np.flatnonzero(band > 0)
            pairs.append(np.stack([idx, idx + d], axis=1))
            weights.append(band[idx])
        return VisGraph(self.n, np.concatenate(pairs), np.concatenate(weights))


def _pre_activations(x: np.ndarray, bank: ConvBank) -> list[np.ndarray]:
    """Raw window responses per span; works on ``(..., n)`` inputs."""
    out = []
    for s, w in enumerate(bank.kernels, start=2):
        windows = sliding_window_view(x, s, axis=-1)
        b = bank.biases[s - 2] if bank.use_bias else 0.0
        out.append(windows @ w + b)
    return out


def _check_length(n: int, m: int) -> None:
    if n < m:
        raise ValueError(f"series length {n} is shorter than the largest kernel m={m}")


def avg_forward(series, bank: ConvBank) -> BandedMatrix:
    x = as_series(series)
    _check_length(x.size, bank.m)
    return BandedMatrix(x.size, [np.maximum(b, 0.0) for b in _pre_activations(x, bank)])


def avg_backward(series, bank: ConvBank, upstream) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of a scalar loss w.r.t. kernels and biases.

    ``upstream`` holds d(loss)/d(entry) for each stored band entry, either
    as a :class:`BandedMatrix` or a list of per-band arrays. Returns
    ``(kernel_grads, bias_grads)``; bias gradients are zero when the bank
    has no bias.
    """
    x = as_series(series)
    _check_length(x.size, bank.m)
    bands = upstream.bands if isinstance(upstream, BandedMatrix) else list(upstream)
    if len(bands) != len(bank.kernels):
        raise ShapeError("avg_backward", (len(bank.kernels),), (len(bands),))
    kgrads, bgrads = [], np.zeros(len(bank.kernels))
    for s, (pre, g) in enumerate(zip(_pre_activations(x, bank), bands), start=2):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != pre.shape:
            raise ShapeError(f"avg_backward span {s}", pre.shape, g.shape)
        live = np.where(pre > 0, g, 0.0)
        kgrads.append(sliding_window_view(x, s).T @ live)
        if bank.use_bias:
            bgrads[s - 2] = live.sum()
    return kgrads, bgrads


# ---------------------------------------------------------------------------
# batched dense form for the network


def _band_index(n: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(n - d)
    return rows, rows + d


def avg_dense(x, kernels: Sequence[nn.Tensor], bias: nn.Tensor | None) -> nn.Tensor:
    """Tape op: batch of series ``(B, n)`` -> dense symmetric adjacency ``(B, n, n)``.

    ``kernels[s - 2]`` is a ``(1, s)`` tensor; ``bias`` is ``(1, m - 1)``
    or ``None`` for a bias-free bank.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("avg_dense", x.shape)
    batch, n = x.shape
    m = len(kernels) + 1
    _check_length(n, m)
    adj = np.zeros((batch, n, n))
    masks, windows = [], []
    for s, k in enumerate(kernels, start=2):
        win = sliding_window_view(x, s, axis=-1)
        pre = win @ k.data.reshape(-1)
        if bias is not None:
            pre = pre + bias.data[0, s - 2]
        rows, cols = _band_index(n, s - 1)
        act = np.maximum(pre, 0.0)
        adj[:, rows, cols] = act
        adj[:, cols, rows] = act
        masks.append(pre > 0)
        windows.append(win)

    def backward(g):
        kg, bg = [], np.zeros((1, m - 1))
        for s, (mask, win) in enumerate(zip(masks, windows), start=2):
            rows, cols = _band_index(n, s - 1)
            live = np.where(mask, g[:, rows, cols] + g[:, cols, rows], 0.0)
            kg.append(np.einsum("bf,bft->t", live, win).reshape(1, -1))
            bg[0, s - 2] = live.sum()
        return (*kg, bg) if bias is not None else tuple(kg)

    parents = [*kernels, bias] if bias is not None else list(kernels)
    return nn._node(adj, parents, backward)
