"""Window partitioning, cyclic shift and the shifted-window region map."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, pad, reshape, roll, transpose


@dataclass
class FeatureGrid:
    """Spatial feature map ``[B, H, W, C]``; ``valid`` is False on padding."""

    tensor: Tensor
    valid: np.ndarray | None = None

    @property
    def shape(self):
        return self.tensor.shape


@dataclass(frozen=True)
class WindowMeta:
    M: int
    grid_h: int  # padded extents the windows tile
    grid_w: int
    pad_h: int  # rows/cols appended by partition itself
    pad_w: int
    shifted: bool = False
    shift: int = 0

    @property
    def num_windows(self) -> int:
        return (self.grid_h // self.M) * (self.grid_w // self.M)


@dataclass
class WindowSet:
    tensor: Tensor  # [B, nW, M*M, C]
    meta: WindowMeta
    valid: np.ndarray | None = None  # [nW, M*M]


@dataclass
class RegionMap:
    """Per-window node labels; -1 marks padding."""

    labels: np.ndarray  # [nW, M*M] int
    M: int

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_index", "node_index", "label"])
            for wi, row in enumerate(self.labels):
                for ni, lab in enumerate(row):
                    w.writerow([wi, ni, int(lab)])


def padding_for(h: int, w: int, M: int) -> tuple[int, int]:
    return (-h) % M, (-w) % M


def effective_window(h: int, w: int, M: int) -> int:
    """Window side actually used on an ``h x w`` grid."""
    return max(1, min(M, h, w))


def _window_view(arr: np.ndarray, M: int) -> np.ndarray:
    """[B, Hp, Wp, ...] -> [B, nW, M*M, ...] (row-major windows, row-major nodes)."""
    B, Hp, Wp = arr.shape[:3]
    rest = arr.shape[3:]
    a = arr.reshape((B, Hp // M, M, Wp // M, M) + rest)
    a = a.transpose((0, 1, 3, 2, 4) + tuple(range(5, a.ndim)))
    return a.reshape((B, (Hp // M) * (Wp // M), M * M) + rest)


def pad_grid(x: FeatureGrid, M: int) -> tuple[FeatureGrid, int, int]:
    """Zero-pad right/bottom so both extents are multiples of ``M``."""
    B, H, W, C = x.shape
    ph, pw = padding_for(H, W, M)
    valid = x.valid if x.valid is not None else np.ones((H, W), dtype=bool)
    if ph == 0 and pw == 0:
        return FeatureGrid(x.tensor, valid), 0, 0
    t = pad(x.tensor, ((0, 0), (0, ph), (0, pw), (0, 0)))
    return FeatureGrid(t, np.pad(valid, ((0, ph), (0, pw)))), ph, pw


def partition(x: FeatureGrid, M: int) -> WindowSet:
    """Split into non-overlapping ``M x M`` windows, padding as needed."""
    if M < 1:
        raise ValueError(f"window size must be >= 1, got {M}")
    grid, ph, pw = pad_grid(x, M)
    B, Hp, Wp, C = grid.shape
    t = reshape(grid.tensor, (B, Hp // M, M, Wp // M, M, C))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    t = reshape(t, (B, (Hp // M) * (Wp // M), M * M, C))
    valid = _window_view(grid.valid[None], M)[0]
    return WindowSet(t, WindowMeta(M, Hp, Wp, ph, pw), valid)


def reverse(ws: WindowSet) -> FeatureGrid:
    """Inverse of :func:`partition`, dropping the padding it added."""
    m = ws.meta
    B, nW, N, C = ws.tensor.shape
    if N != m.M * m.M or nW != m.num_windows:
        raise ValueError(
            f"window tensor {ws.tensor.shape} inconsistent with meta (M={m.M}, grid {m.grid_h}x{m.grid_w})"
        )
    gh, gw = m.grid_h // m.M, m.grid_w // m.M
    t = reshape(ws.tensor, (B, gh, gw, m.M, m.M, C))
    t = transpose(t, (0, 1, 3, 2, 4, 5))
    t = reshape(t, (B, m.grid_h, m.grid_w, C))
    H, W = m.grid_h - m.pad_h, m.grid_w - m.pad_w
    valid = None
    if ws.valid is not None:
        v = ws.valid.reshape(gh, gw, m.M, m.M).transpose(0, 2, 1, 3).reshape(m.grid_h, m.grid_w)
        valid = v[:H, :W]
    if m.pad_h or m.pad_w:
        t = t[:, :H, :W, :]
    return FeatureGrid(t, valid)


def _check_shift(x: FeatureGrid, S: int) -> None:
    H, W = x.shape[1:3]
    if not 0 <= S < min(H, W):
        raise ValueError(f"shift {S} out of range for a {H}x{W} grid")


def cyclic_shift(x: FeatureGrid, S: int) -> FeatureGrid:
    """Roll by ``(-S, -S)``: the top-left block wraps to the bottom-right."""
    _check_shift(x, S)
    if S == 0:
        return x
    valid = None if x.valid is None else np.roll(x.valid, (-S, -S), axis=(0, 1))
    return FeatureGrid(roll(x.tensor, (-S, -S), (1, 2)), valid)


def cyclic_unshift(x: FeatureGrid, S: int) -> FeatureGrid:
    _check_shift(x, S)
    if S == 0:
        return x
    valid = None if x.valid is None else np.roll(x.valid, (S, S), axis=(0, 1))
    return FeatureGrid(roll(x.tensor, (S, S), (1, 2)), valid)


def region_grid(H: int, W: int, M: int, S: int, shifted: bool, pad_h: int = 0, pad_w: int = 0) -> np.ndarray:
    """Region labels on the padded (and, if shifted, rolled) grid."""
    Hp, Wp = H + pad_h, W + pad_w
    if Hp % M or Wp % M:
        raise ValueError(f"padded grid {Hp}x{Wp} is not a multiple of window {M}")
    labels = np.zeros((Hp, Wp), dtype=np.int64)
    ys, xs = np.arange(Hp), np.arange(Wp)
    if shifted and S > 0:
        def bands(n):
            b = np.zeros(n, dtype=np.int64)
            b[n - M:n - S] = 1
            b[n - S:] = 2
            return b

        labels = bands(Hp)[:, None] * 3 + bands(Wp)[None, :]
        ys = (ys + S) % Hp  # original coordinate of each rolled position
        xs = (xs + S) % Wp
    padded = (ys[:, None] >= H) | (xs[None, :] >= W)
    labels[padded] = -1
    return labels


def region_map(H: int, W: int, M: int, S: int, shifted: bool, pad_h: int = 0, pad_w: int = 0) -> RegionMap:
    """Labels ``[nW, M*M]``: nodes may connect only within equal, non-negative labels."""
    grid = region_grid(H, W, M, S, shifted, pad_h, pad_w)
    return RegionMap(_window_view(grid[None], M)[0], M)


def possible_neighbor_counts(r: RegionMap) -> np.ndarray:
    """Region size of every node (self included); 0 for padding."""
    lab = r.labels
    same = (lab[:, :, None] == lab[:, None, :]) & (lab[:, :, None] >= 0)
    return same.sum(axis=2)
