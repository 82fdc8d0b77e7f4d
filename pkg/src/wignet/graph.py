"""Dynamic k-NN graph construction.

``knn_windows`` builds one graph per window in feature space, restricted to
nodes sharing a region label. ``knn_oracle`` recomputes the same table with
plain loops and shares no code with it. ``knn_global`` is the single-graph
baseline over every node of the map, used for cost comparison.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .windowing import FeatureGrid, RegionMap, WindowSet

# distance buffer budget (elements) per chunk of windows / rows
CHUNK_ELEMS = 1 << 22


@dataclass
class NeighborTable:
    indices: np.ndarray  # [B, nW, N, k], window-local; 0 where invalid
    valid: np.ndarray  # [B, nW, N, k] bool

    @property
    def k(self) -> int:
        return self.indices.shape[-1]

    def counts(self) -> np.ndarray:
        return self.valid.sum(axis=-1)

    def global_indices(self) -> np.ndarray:
        """Indices into the flattened ``[B*nW*N]`` node axis."""
        B, nW, N, _ = self.indices.shape
        base = (np.arange(B * nW).reshape(B, nW, 1, 1) * N)
        return self.indices + base

    def equals(self, other: "NeighborTable") -> bool:
        if self.indices.shape != other.indices.shape:
            return False
        if not np.array_equal(self.valid, other.valid):
            return False
        return bool(np.array_equal(self.indices[self.valid], other.indices[other.valid]))

    def mismatches(self, other: "NeighborTable") -> int:
        bad = self.valid != other.valid
        bad |= self.valid & other.valid & (self.indices != other.indices)
        return int(bad.sum())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["batch", "window", "node", "slot", "neighbor", "valid"])
            for (b, win, i, s), j in np.ndenumerate(self.indices):
                w.writerow([b, win, i, s, int(j), int(self.valid[b, win, i, s])])


@dataclass
class GraphBuildStats:
    distance_pairs_evaluated: int = 0
    peak_distance_buffer_elems: int = 0


def pairwise_sq_dist(feats) -> np.ndarray:
    """Squared Euclidean distances over the last two axes ``[..., N, F] -> [..., N, N]``.

    Features are accumulated one at a time, which makes the result symmetric
    with an exactly zero diagonal.
    """
    x = np.asarray(getattr(feats, "data", feats))
    d = np.zeros(x.shape[:-1] + (x.shape[-2],), dtype=x.dtype)
    for f in range(x.shape[-1]):
        col = x[..., f]
        diff = col[..., :, None] - col[..., None, :]
        d += diff * diff
    return d


def adaptive_k(k: int, P, M: int):
    """Neighbour budget ``floor(k * P / M^2)``, at least 1, at most ``P - 1``."""
    P = np.asarray(P, dtype=np.int64)
    ki = np.maximum(1, (k * P) // (M * M))
    ki = np.minimum(ki, P - 1)
    out = np.where(P <= 1, 0, ki)
    return int(out) if out.ndim == 0 else out


def _candidates(labels: np.ndarray) -> np.ndarray:
    """[nW, N, N] mask of allowed (i, j) pairs."""
    N = labels.shape[1]
    same = (labels[:, :, None] == labels[:, None, :]) & (labels[:, :, None] >= 0)
    same &= ~np.eye(N, dtype=bool)[None]
    return same


def neighbor_budget(labels: np.ndarray, k: int, M: int, adaptive: bool) -> np.ndarray:
    """Per-node neighbour count ``[nW, N]``."""
    cand = _candidates(labels)
    available = cand.sum(axis=2)
    if adaptive:
        P = np.where(labels >= 0, available + 1, 0)
        return adaptive_k(k, P, M)
    return np.minimum(k, available)


def knn_windows(ws: WindowSet, r: RegionMap, k: int, adaptive: bool = True):
    """k-NN table for every window of every batch element.

    Candidates for node ``i`` are the other non-padded nodes of its window
    carrying the same region label; the ``k_i`` closest (squared Euclidean,
    ties to the lower index) are kept.
    """
    feats = np.asarray(ws.tensor.data)
    B, nW, N, C = feats.shape
    labels = r.labels
    if labels.shape != (nW, N):
        raise ValueError(f"region map {labels.shape} does not match windows {(nW, N)}")
    cand = _candidates(labels)
    budget = neighbor_budget(labels, k, r.M, adaptive)  # [nW, N]

    indices = np.zeros((B, nW, N, k), dtype=np.int64)
    step = max(1, CHUNK_ELEMS // max(1, B * N * N))
    peak = 0
    take = min(k, N)
    for w0 in range(0, nW, step):
        w1 = min(nW, w0 + step)
        d = pairwise_sq_dist(feats[:, w0:w1])
        peak = max(peak, d.size)
        d[:, ~cand[w0:w1]] = np.inf
        order = np.argsort(d, axis=-1, kind="stable")[..., :take]
        indices[:, w0:w1, :, :take] = order
    slots = np.arange(k)
    valid = np.broadcast_to(slots < budget[:, :, None], (B, nW, N, k)).copy()
    indices[~valid] = 0

    real = (labels >= 0).sum(axis=1)
    stats = GraphBuildStats(int(B * np.sum(real.astype(np.int64) ** 2)), int(peak))
    return NeighborTable(indices, valid), stats


def knn_oracle(ws: WindowSet, r: RegionMap, k: int, adaptive: bool = True) -> NeighborTable:
    """Reference k-NN with nested loops and a full sort per node."""
    feats = np.asarray(ws.tensor.data)
    B, nW, N, C = feats.shape
    M = r.M
    zero = feats.dtype.type(0)
    indices = np.zeros((B, nW, N, k), dtype=np.int64)
    valid = np.zeros((B, nW, N, k), dtype=bool)
    for w in range(nW):
        labs = [int(v) for v in r.labels[w]]
        for i in range(N):
            if labs[i] < 0:
                continue
            members = [j for j in range(N) if labs[j] == labs[i]]
            others = [j for j in members if j != i]
            if adaptive:
                p = len(members)
                if p <= 1:
                    ki = 0
                else:
                    ki = min(max(1, (k * p) // (M * M)), p - 1)
            else:
                ki = min(k, len(others))
            for b in range(B):
                scored = []
                for j in others:
                    s = zero
                    for f in range(C):
                        t = feats[b, w, i, f] - feats[b, w, j, f]
                        s = s + t * t
                    scored.append((s, j))
                scored.sort()
                for slot, (_, j) in enumerate(scored[:ki]):
                    indices[b, w, i, slot] = j
                    valid[b, w, i, slot] = True
    return NeighborTable(indices, valid)


def knn_global(x: FeatureGrid, k: int):
    """One k-NN graph over all ``h*w`` nodes (forward-only baseline).

    Returns a table shaped ``[B, 1, h*w, k]`` and build statistics. Rows are
    processed in chunks; within a chunk the ``k`` smallest distances are
    selected with ``argpartition`` and ordered by (distance, index).
    """
    feats = np.asarray(getattr(x, "tensor", x).data)
    B, H, W, C = feats.shape
    n = H * W
    X = feats.reshape(B, n, C)
    take = min(k, n - 1)
    indices = np.zeros((B, 1, n, k), dtype=np.int64)
    valid = np.zeros((B, 1, n, k), dtype=bool)
    valid[..., :take] = True
    rows = max(1, CHUNK_ELEMS // max(n, 1))
    peak = 0
    cols = np.arange(n)
    for b in range(B):
        Xb = X[b]
        sq = np.einsum("ij,ij->i", Xb, Xb)
        for r0 in range(0, n, rows):
            r1 = min(n, r0 + rows)
            d = sq[r0:r1, None] + sq[None, :] - 2.0 * (Xb[r0:r1] @ Xb.T)
            np.maximum(d, 0, out=d)
            peak = max(peak, d.size)
            d[np.arange(r1 - r0), np.arange(r0, r1)] = np.inf
            if take <= 0:
                continue
            if take < n - 1:
                part = np.argpartition(d, take - 1, axis=1)[:, :take]
            else:
                part = np.broadcast_to(cols, d.shape)[:, :]
                part = part[~np.eye(r1 - r0, n, r0, dtype=bool)].reshape(r1 - r0, n - 1)
            dv = np.take_along_axis(d, part, axis=1)
            order = np.lexsort((part, dv), axis=1)
            indices[b, 0, r0:r1, :take] = np.take_along_axis(part, order, axis=1)
    stats = GraphBuildStats(int(B * n * n), int(peak))
    return NeighborTable(indices, valid), stats
