"""Analytic and measured cost of graph construction.

Pair counts, MACs and buffer sizes are closed-form integers. Wall times
are measured on the actual builders and are the only empirical column.
"""
from __future__ import annotations

import csv
import math
import statistics
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .graph import knn_global, knn_windows
from .model import count_macs, get_config, mac_breakdown, stage_resolutions
from .tensor import Tensor
from .windowing import FeatureGrid, effective_window, pad_grid, partition, region_map

METHODS = ("wignet_knn", "global_knn", "full_model")
CSV_HEADER = [
    "method", "variant", "image_h", "image_w", "grid_h", "grid_w", "window",
    "analytic_macs", "pairs", "peak_buffer_elems", "wall_ms", "status",
]
DEFAULT_PAIR_CEILING = 1 << 26


@dataclass(frozen=True)
class CostReport:
    method: str
    h: int
    w: int
    window: int
    feature_dim: int
    pairs: int
    macs: int
    peak_buffer_elems: int  # every distance buffer alive at once
    peak_buffer_serial: int  # one window (or the whole map) at a time
    wall_time_ms: float | None = None

    @property
    def peak_buffer_bytes(self) -> int:
        return self.peak_buffer_elems * 4


def _window_extents(n: int, M: int) -> list[int]:
    """Real (non-padded) extent of each window along one axis."""
    return [min(M, n - s) for s in range(0, n, M)]


def knn_cost(method: str, h: int, w: int, M: int, F: int) -> CostReport:
    """Distance pairs, MACs (F per pair) and buffer sizes of one graph build.

    Windowed pairs are ``sum_w |V_w|^2`` over real nodes, which is ``hw M^2``
    whenever ``M`` divides both sides.
    """
    if method == "global_knn":
        n = h * w
        pairs = n * n
        return CostReport(method, h, w, M, F, pairs, pairs * F, pairs, pairs)
    if method != "wignet_knn":
        raise ValueError(f"knn_cost method must be wignet_knn or global_knn, got {method!r}")
    Me = effective_window(h, w, M)
    rows, cols = _window_extents(h, Me), _window_extents(w, Me)
    pairs = sum(r * r for r in rows) * sum(c * c for c in cols)
    n_windows = len(rows) * len(cols)
    return CostReport(method, h, w, Me, F, pairs, pairs * F, n_windows * Me**4, Me**4)


def pair_ratio(h: int, w: int, M: int) -> float:
    """Global over windowed pair count (``hw / M^2`` for divisible grids)."""
    return knn_cost("global_knn", h, w, M, 1).pairs / knn_cost("wignet_knn", h, w, M, 1).pairs


def crossover_side(ratio: float, M: int = 8) -> int:
    """Smallest square grid side where global k-NN costs ``ratio`` times windowed."""
    s = max(1, math.ceil(M * math.sqrt(ratio)))
    while s > 1 and pair_ratio(s - 1, s - 1, M) >= ratio:
        s -= 1
    while pair_ratio(s, s, M) < ratio:
        s += 1
    return s


def crossover_report(M: int = 8, ratios: Sequence[float] = (10, 100, 1000)) -> str:
    lines = [f"global vs windowed k-NN distance pairs, window M={M}"]
    for t in ratios:
        s = crossover_side(t, M)
        lines.append(
            f"  >= {t:g}x at grid {s}x{s} (hw={s * s}, ratio {pair_ratio(s, s, M):.2f}),"
            f" image {4 * s}x{4 * s} at stage 1"
        )
    return "\n".join(lines)


def _median_ms(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def _build_windowed(x: np.ndarray, k: int, M: int):
    B, h, w, _ = x.shape
    Me = effective_window(h, w, M)
    grid, ph, pw = pad_grid(FeatureGrid(Tensor(x)), Me)
    ws = partition(grid, Me)
    return knn_windows(ws, region_map(h, w, Me, 0, False, ph, pw), k)


def sweep(
    resolutions: Iterable[int | tuple[int, int]],
    variant: str = "Ti",
    methods: Sequence[str] = ("wignet_knn", "global_knn"),
    pair_ceiling: int = DEFAULT_PAIR_CEILING,
    repeats: int = 3,
    seed: int = 0,
) -> list[dict]:
    """One row per (method, image resolution) at the stage-1 grid of ``variant``.

    The graph builders run on random stage-1 features; their reported pair
    counts are compared against the analytic value (status ``mismatch`` if
    they differ). Global builds above ``pair_ceiling`` pairs are skipped.
    ``full_model`` rows carry the whole-network analytic MACs and k-NN pairs.
    """
    cfg = get_config(variant)
    F, k, M = cfg.stage_dims[0], cfg.k, cfg.window
    rng = np.random.default_rng(seed)
    rows = []
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
        for res in resolutions:
            H, W = (res, res) if isinstance(res, int) else res
            h, w = stage_resolutions(H, W)[0]
            row = {"method": method, "variant": variant, "image_h": H, "image_w": W,
                   "grid_h": h, "grid_w": w, "window": effective_window(h, w, M), "wall_ms": ""}
            if method == "full_model":
                breakdown = mac_breakdown(cfg, (H, W))
                dims = {f"stage{s + 1}": 2 * d for s, d in enumerate(cfg.stage_dims)}
                pairs = sum(v // dims[name.split(".")[0]] for name, v in breakdown if name.endswith(".knn"))
                row.update(analytic_macs=count_macs(cfg, (H, W)), pairs=pairs,
                           peak_buffer_elems="", status="analytic")
                rows.append(row)
                continue
            report = knn_cost(method, h, w, M, F)
            row.update(analytic_macs=report.macs, pairs=report.pairs,
                       peak_buffer_elems=report.peak_buffer_elems)
            if method == "global_knn" and report.pairs > pair_ceiling:
                row["status"] = "skipped"
                rows.append(row)
                continue
            x = rng.standard_normal((1, h, w, F)).astype(np.float32)
            if method == "global_knn":
                build = lambda: knn_global(FeatureGrid(Tensor(x)), k)  # noqa: E731
            else:
                build = lambda: _build_windowed(x, k, M)  # noqa: E731
            _, stats = build()
            row["wall_ms"] = f"{_median_ms(build, repeats):.3f}"
            row["status"] = "ok" if stats.distance_pairs_evaluated == report.pairs else "mismatch"
            rows.append(row)
    return rows


def write_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected profile CSV header {reader.fieldnames}")
        return list(reader)
