"""Dense GCN + single-stage DiffPool branches and the dual-channel AVGNet.

Each channel (I and Q) is mapped to a weighted graph by its own AVG bank.
A branch embeds the nodes with a GCN stack, soft-assigns them to
``clusters`` groups, coarsens features and adjacency, runs one more GCN
stack on the pooled graph and mean-pools the clusters into a vector of
width ``hidden``. The two branch vectors are concatenated and fed to a
single linear classifier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .avg import ConvBank, avg_dense
from .errors import ShapeError
from .signal import IQFrame


@dataclass(frozen=True)
class ArchConfig:
    m: int = 11
    hidden: int = 64
    clusters: int = 32
    num_classes: int = 11
    embed_depth: int = 2
    pool_depth: int = 2
    post_depth: int = 1
    in_features: int = 2
    conv_bias: bool = True
    share_weights: bool = False

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be >= 2")
        for name in ("hidden", "clusters", "num_classes", "embed_depth", "pool_depth", "in_features"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.post_depth < 0:
            raise ValueError("post_depth must be >= 0")


@dataclass
class BranchParams:
    """Weight stacks for one DiffPool branch (tensors live in a ParamStore)."""

    embed: list[nn.Tensor]
    pool: list[nn.Tensor]
    post: list[nn.Tensor]

    @property
    def hidden(self) -> int:
        return self.embed[-1].shape[1]

    @property
    def clusters(self) -> int:
        return self.pool[-1].shape[1]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class AvgNetParams:
    """All trainable tensors of the network, addressed by checkpoint name.

    Names: ``bank_{i,q}/w{s}`` (1 x s), ``bank_{i,q}/bias`` (1 x m-1),
    ``branch_{i,q}/{embed,pool,post}{k}`` and ``head/weight`` (2h x M),
    ``head/bias`` (1 x M). With shared weights only the ``_i`` tensors
    exist and serve both channels.
    """

    def __init__(self, store: nn.ParamStore, arch: ArchConfig):
        self.store = store
        self.arch = arch

    @classmethod
    def init(cls, arch: ArchConfig, seed: int) -> "AvgNetParams":
        rng = np.random.default_rng(seed)
        store = nn.ParamStore()
        h = arch.hidden
        channels = ("i",) if arch.share_weights else ("i", "q")
        for ch in channels:
            for s in range(2, arch.m + 1):
                lim = np.sqrt(1.0 / s)
                store.add(f"bank_{ch}/w{s}", rng.uniform(-lim, lim, size=(1, s)))
            if arch.conv_bias:
                store.add(f"bank_{ch}/bias", np.zeros((1, arch.m - 1)))
        for ch in channels:
            widths = [arch.in_features] + [h] * arch.embed_depth
            for k in range(arch.embed_depth):
                store.add(f"branch_{ch}/embed{k}", _glorot(rng, widths[k], widths[k + 1]))
            widths = [arch.in_features] + [h] * (arch.pool_depth - 1) + [arch.clusters]
            for k in range(arch.pool_depth):
                store.add(f"branch_{ch}/pool{k}", _glorot(rng, widths[k], widths[k + 1]))
            for k in range(arch.post_depth):
                store.add(f"branch_{ch}/post{k}", _glorot(rng, h, h))
        lim = 1.0 / np.sqrt(2 * h)
        store.add("head/weight", rng.uniform(-lim, lim, size=(2 * h, arch.num_classes)))
        store.add("head/bias", np.zeros((1, arch.num_classes)))
        return cls(store, arch)

    @classmethod
    def from_store(cls, store: nn.ParamStore) -> "AvgNetParams":
        """Recover the architecture from parameter names and shapes."""
        names = set(store.names())
        try:
            m = max(int(k.rsplit("/w", 1)[1]) for k in names if k.startswith("bank_i/w"))

            def depth(kind):
                return sum(1 for k in names if k.startswith(f"branch_i/{kind}"))

            embed0 = store["branch_i/embed0"]
            pool_last = store[f"branch_i/pool{depth('pool') - 1}"]
            arch = ArchConfig(
                m=m,
                hidden=store["head/weight"].shape[0] // 2,
                clusters=pool_last.shape[1],
                num_classes=store["head/weight"].shape[1],
                embed_depth=depth("embed"),
                pool_depth=depth("pool"),
                post_depth=depth("post"),
                in_features=embed0.shape[0],
                conv_bias="bank_i/bias" in names,
                share_weights="bank_q/w2" not in names,
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"parameter store does not describe an AVGNet: {exc}") from None
        expected = set(cls.init(arch, 0).store.names())
        if expected != names:
            raise ValueError(f"unexpected parameter set; differs by {sorted(expected ^ names)}")
        return cls(store, arch)

    def _ch(self, channel: str) -> str:
        if channel not in ("i", "q"):
            raise ValueError(f"channel must be 'i' or 'q', got {channel!r}")
        return "i" if self.arch.share_weights else channel

    def bank_tensors(self, channel: str) -> tuple[list[nn.Tensor], nn.Tensor | None]:
        ch = self._ch(channel)
        kernels = [self.store[f"bank_{ch}/w{s}"] for s in range(2, self.arch.m + 1)]
        bias = self.store[f"bank_{ch}/bias"] if self.arch.conv_bias else None
        return kernels, bias

    def bank(self, channel: str) -> ConvBank:
        """Snapshot of a channel's convolution bank as plain arrays."""
        kernels, bias = self.bank_tensors(channel)
        biases = bias.data.reshape(-1) if bias is not None else np.zeros(len(kernels))
        return ConvBank([k.data.reshape(-1).copy() for k in kernels], biases.copy(), bias is not None)

    def branch(self, channel: str) -> BranchParams:
        ch = self._ch(channel)
        a = self.arch
        return BranchParams(
            [self.store[f"branch_{ch}/embed{k}"] for k in range(a.embed_depth)],
            [self.store[f"branch_{ch}/pool{k}"] for k in range(a.pool_depth)],
            [self.store[f"branch_{ch}/post{k}"] for k in range(a.post_depth)],
        )

    @property
    def head(self) -> tuple[nn.Tensor, nn.Tensor]:
        return self.store["head/weight"], self.store["head/bias"]

    def num_values(self) -> int:
        return self.store.num_values()

    def param_bytes(self) -> int:
        """Serialized size of the parameters alone (32-bit floats)."""
        return 4 * self.num_values()


# ---------------------------------------------------------------------------
# graph layers


def normalize_adjacency(adj) -> nn.Tensor:
    """Symmetric GCN normalisation ``D^-1/2 (A + I) D^-1/2`` (weighted degrees).

    Works on ``(..., n, n)``. Raises if ``A`` is asymmetric by more than
    ``1e-9`` relative to its largest entry.
    """
    adj = nn.as_tensor(adj)
    if adj.ndim < 2 or adj.shape[-1] != adj.shape[-2]:
        raise ShapeError("normalize_adjacency", adj.shape)
    a = adj.data
    scale = max(1.0, float(np.abs(a).max())) if a.size else 1.0
    if a.size and np.abs(a - np.swapaxes(a, -1, -2)).max() > 1e-9 * scale:
        raise ValueError("adjacency is not symmetric")
    looped = nn.add(adj, np.eye(adj.shape[-1]))
    inv_sqrt = nn.power(nn.sum(looped, axis=-1, keepdims=True), -0.5)
    return nn.mul(nn.mul(inv_sqrt, looped), nn.transpose(inv_sqrt))


def gcn_layer(adj_hat, x, w, activate: bool = True) -> nn.Tensor:
    """``ReLU(A_hat X W)``; the product is ordered to keep the n x n multiply narrow."""
    adj_hat, x, w = nn.as_tensor(adj_hat), nn.as_tensor(x), nn.as_tensor(w)
    if adj_hat.shape[-1] != x.shape[-2] or x.shape[-1] != w.shape[-2]:
        raise ShapeError("gcn_layer", adj_hat.shape, x.shape, w.shape)
    if x.shape[-1] <= w.shape[-1]:
        out = nn.matmul(nn.matmul(adj_hat, x), w)
    else:
        out = nn.matmul(adj_hat, nn.matmul(x, w))
    return nn.relu(out) if activate else out


def _stack(adj_hat, x, weights: Sequence[nn.Tensor], last_linear: bool = False) -> nn.Tensor:
    h = x
    for k, w in enumerate(weights):
        h = gcn_layer(adj_hat, h, w, activate=not (last_linear and k == len(weights) - 1))
    return h


@dataclass
class PoolResult:
    adj: nn.Tensor
    features: nn.Tensor
    assign: nn.Tensor
    embed: nn.Tensor


def diffpool_layer(adj, x, branch: BranchParams, adj_hat=None) -> PoolResult:
    """Soft-cluster a graph: ``X' = S^T Z`` and ``A' = S^T A S``.

    ``Z`` comes from the embedding GCN stack and ``S`` is the row softmax of
    the pooling GCN stack, whose last layer is linear.
    """
    adj = nn.as_tensor(adj)
    x = nn.as_tensor(x)
    if adj_hat is None:
        adj_hat = normalize_adjacency(adj)
    z = _stack(adj_hat, x, branch.embed)
    s = nn.row_softmax(_stack(adj_hat, x, branch.pool, last_linear=True))
    st = nn.transpose(s)
    pooled_x = nn.matmul(st, z)
    pooled_adj = nn.matmul(nn.matmul(st, adj), s)
    return PoolResult(pooled_adj, pooled_x, s, z)


def auxiliary_loss(adj, assign) -> nn.Tensor:
    """Link-prediction plus assignment-entropy penalty, averaged over the batch.

    Link term: ``||A - S S^T||_F / n^2``; entropy term: mean per-node
    entropy of the assignment rows.
    """
    adj, assign = nn.as_tensor(adj), nn.as_tensor(assign)
    n = adj.shape[-1]
    diff = nn.sub(adj, nn.matmul(assign, nn.transpose(assign)))
    fro = nn.power(nn.sum(nn.mul(diff, diff), axis=(-2, -1)), 0.5)
    link = nn.mul(nn.mean(fro), 1.0 / (n * n))
    plogp = nn.mul(assign, nn.log(nn.add(assign, 1e-12)))
    entropy = nn.mul(nn.mean(nn.sum(plogp, axis=-1)), -1.0)
    return nn.add(link, entropy)


def branch_forward(adj, node_features, branch: BranchParams, aux: list | None = None) -> nn.Tensor:
    """Graph-level vector of width ``hidden`` for one channel graph.

    GCN embedding, one pooling stage, post-pool GCN stack, then mean over
    clusters. When ``aux`` is a list, the auxiliary DiffPool penalty for
    this branch is appended to it.
    """
    adj = nn.as_tensor(adj)
    x = nn.as_tensor(node_features)
    if adj.shape[-1] != x.shape[-2]:
        raise ShapeError("branch_forward", adj.shape, x.shape)
    pool = diffpool_layer(adj, x, branch)
    h = pool.features
    if branch.post:
        h = _stack(normalize_adjacency(pool.adj), h, branch.post)
    if aux is not None:
        aux.append(auxiliary_loss(adj, pool.assign))
    return nn.mean_rows(h)


def _as_batch(frames) -> tuple[np.ndarray, bool]:
    if isinstance(frames, IQFrame):
        return frames.as_array()[None], True
    arr = np.asarray(frames, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None], True
    if arr.ndim != 3 or arr.shape[1] != 2:
        raise ShapeError("avgnet_forward", arr.shape)
    return arr, False


def avgnet_forward(frames, params: AvgNetParams, aux: list | None = None) -> nn.Tensor:
    """Class logits (no softmax) for one frame ``(M,)`` or a batch ``(B, M)``.

    ``frames`` is an :class:`IQFrame`, a ``(2, n)`` array or a ``(B, 2, n)``
    batch. Both channel graphs share the node features ``[I_j, Q_j]``.
    """
    batch, single = _as_batch(frames)
    if batch.shape[2] < params.arch.m:
        raise ValueError(f"frame length {batch.shape[2]} is shorter than m={params.arch.m}")
    x = np.swapaxes(batch, 1, 2)
    vectors = []
    for ch, idx in (("i", 0), ("q", 1)):
        kernels, bias = params.bank_tensors(ch)
        adj = avg_dense(batch[:, idx, :], kernels, bias)
        vectors.append(branch_forward(adj, x, params.branch(ch), aux))
    weight, bias = params.head
    logits = nn.add_bias(nn.matmul(nn.concat_rows(*vectors), weight), bias)
    if single:
        logits = nn.reshape(logits, (-1,))
    return logits
