"""Graph convolution operators and the WiGNet block (Grapher + FFN)."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import functional as F
from .graph import GraphBuildStats, NeighborTable, knn_windows
from .nn import BatchNorm, Linear, Module, normal_init
from .tensor import Parameter, Tensor, concat, get_default_dtype, reshape
from .windowing import (
    FeatureGrid,
    WindowSet,
    cyclic_shift,
    cyclic_unshift,
    effective_window,
    pad_grid,
    partition,
    region_map,
    reverse,
)


class ConfigError(ValueError):
    pass


def _update(x: Tensor, agg: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    """``W_update (x || agg)``; a 3-D weight applies one block per channel group.

    Group ``g`` sees the ``g``-th channel slice of both ``x`` and ``agg``.
    """
    n, fin = x.shape
    if weight.ndim == 2:
        if weight.shape[0] != 2 * fin:
            raise F.DimensionError(f"W_update {weight.shape} does not accept {2 * fin} inputs")
        out = F.linear(concat([x, agg], axis=1), weight, bias)
        return out
    g, i, o = weight.shape
    if fin % g or i != 2 * (fin // g):
        raise F.DimensionError(f"grouped W_update {weight.shape} does not accept {fin}+{fin} inputs")
    cg = fin // g
    u = concat([reshape(x, (n, g, cg)), reshape(agg, (n, g, cg))], axis=2)
    out = reshape(F.grouped_linear(u, weight), (n, g * o))
    if bias is not None:
        out = out + bias
    return out


def max_relative_conv(x: Tensor, index: np.ndarray, valid: np.ndarray, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Max-Relative graph convolution.

    ``x``: [n, F] node features, ``index``/``valid``: [n, k] neighbour table
    into the rows of ``x``. Each node is updated from its own feature and the
    elementwise max of ``x_j - x_i`` over its neighbours (zero when it has none).
    """
    n, fin = x.shape
    if index.shape[0] != n or valid.shape != index.shape:
        raise F.DimensionError(f"neighbour table {index.shape}/{valid.shape} vs features {x.shape}")
    nb = F.gather_rows(x, index)
    rel = nb - reshape(x, (n, 1, fin))
    agg = F.masked_max_over_neighbors(rel, valid)
    return _update(x, agg, weight, bias)


def graphsage_conv(x, index, valid, weight, bias=None, pool_weight=None, pool_bias=None) -> Tensor:
    """Max-pooled neighbour projection: ``W (x_i || max_j P x_j)``."""
    proj = F.linear(x, pool_weight, pool_bias)
    agg = F.masked_max_over_neighbors(F.gather_rows(proj, index), valid)
    return _update(x, agg, weight, bias)


def edge_conv(x, index, valid, weight, bias=None) -> Tensor:
    """``max_j W (x_i || x_j - x_i)`` over neighbour edges."""
    n, fin = x.shape
    k = index.shape[1]
    nb = F.gather_rows(x, index)
    rel = nb - reshape(x, (n, 1, fin))
    self_rows = F.gather_rows(x, np.repeat(np.arange(n)[:, None], k, axis=1))
    edges = _update(reshape(self_rows, (n * k, fin)), reshape(rel, (n * k, fin)), weight, bias)
    return F.masked_max_over_neighbors(reshape(edges, (n, k, edges.shape[1])), valid)


OPERATORS: dict[str, Callable[..., Tensor]] = {
    "max_relative": max_relative_conv,
    "graphsage": graphsage_conv,
    "edgeconv": edge_conv,
}


def operator_dispatch(kind: str, x: Tensor, index: np.ndarray, valid: np.ndarray, **params) -> Tensor:
    try:
        op = OPERATORS[kind]
    except KeyError:
        raise ConfigError(f"unknown graph operator {kind!r}; choose from {sorted(OPERATORS)}") from None
    return op(x, index, valid, **params)


class GraphConv(Module):
    """Parameter holder for one of the registered graph operators."""

    def __init__(self, kind: str, dim: int, out_dim: int, rng: np.random.Generator, groups: int = 1):
        if kind not in OPERATORS:
            raise ConfigError(f"unknown graph operator {kind!r}; choose from {sorted(OPERATORS)}")
        if dim % groups or out_dim % groups:
            groups = 1
        self.kind = kind
        self.groups = groups
        dt = get_default_dtype()
        shape = (groups, 2 * dim // groups, out_dim // groups)
        self.weight = Parameter(normal_init(rng, shape), "weight")
        self.bias = Parameter(np.zeros(out_dim, dt), "bias")
        if kind == "graphsage":
            self.pool_weight = Parameter(normal_init(rng, (dim, dim)), "pool_weight")
            self.pool_bias = Parameter(np.zeros(dim, dt), "pool_bias")

    def forward(self, x: Tensor, index: np.ndarray, valid: np.ndarray) -> Tensor:
        params = {"weight": self.weight, "bias": self.bias}
        if self.kind == "graphsage":
            params.update(pool_weight=self.pool_weight, pool_bias=self.pool_bias)
        return operator_dispatch(self.kind, x, index, valid, **params)


class GrapherLayer(Module):
    """Window-based Grapher: ``Y = act(GraphConv(X W_in)) W_out + X``.

    Batch norm follows both projections. The k-NN graph is rebuilt on every
    call from the projected features unless ``freeze_graph`` is set, in which
    case the first table built is reused (for finite-difference checks).
    """

    def __init__(
        self,
        dim: int,
        k: int,
        window: int,
        rng: np.random.Generator,
        shifted: bool = False,
        adaptive: bool = True,
        operator: str = "max_relative",
        groups: int = 4,
    ):
        self.dim = dim
        self.k = k
        self.window = window
        self.shifted = shifted
        self.adaptive = adaptive
        self.fc_in = Linear(dim, 2 * dim, rng)
        self.bn_in = BatchNorm(2 * dim)
        self.conv = GraphConv(operator, 2 * dim, 2 * dim, rng, groups)
        self.fc_out = Linear(2 * dim, dim, rng)
        self.bn_out = BatchNorm(dim)
        self.freeze_graph = False
        self._frozen: NeighborTable | None = None
        self.last_table: NeighborTable | None = None
        self.last_stats: GraphBuildStats | None = None

    def geometry(self, H: int, W: int) -> tuple[int, int]:
        """(effective window, shift size) used on an ``H x W`` grid."""
        M = effective_window(H, W, self.window)
        single = H <= M and W <= M
        S = M // 2 if self.shifted and not single else 0
        return M, S

    def forward(self, x: Tensor) -> Tensor:
        B, H, W, C = x.shape
        if C != self.dim:
            raise F.DimensionError(f"Grapher expects {self.dim} channels, got {x.shape}")
        h = self.bn_in(self.fc_in(x))
        M, S = self.geometry(H, W)
        grid, ph, pw = pad_grid(FeatureGrid(h), M)
        if S:
            grid = cyclic_shift(grid, S)
        ws = partition(grid, M)
        _, nW, N, C2 = ws.tensor.shape
        if self.freeze_graph and self._frozen is not None:
            table = self._frozen
        else:
            rmap = region_map(H, W, M, S, bool(S), ph, pw)
            table, self.last_stats = knn_windows(ws, rmap, self.k, self.adaptive)
            if self.freeze_graph:
                self._frozen = table
        self.last_table = table
        flat = reshape(ws.tensor, (B * nW * N, C2))
        idx = table.global_indices().reshape(B * nW * N, -1)
        y = self.conv(flat, idx, table.valid.reshape(B * nW * N, -1))
        y = reverse(WindowSet(reshape(y, (B, nW, N, C2)), ws.meta))
        if S:
            y = cyclic_unshift(y, S)
        t = y.tensor
        if ph or pw:
            t = t[:, :H, :W, :]
        return self.bn_out(self.fc_out(F.gelu(t))) + x


class FFNLayer(Module):
    """``Z = act(Y W_1) W_2 + Y`` with batch norm after each projection."""

    def __init__(self, dim: int, ratio: int, rng: np.random.Generator):
        self.dim = dim
        self.hidden = dim * ratio
        self.fc1 = Linear(dim, self.hidden, rng)
        self.bn1 = BatchNorm(self.hidden)
        self.fc2 = Linear(self.hidden, dim, rng)
        self.bn2 = BatchNorm(dim)

    def forward(self, y: Tensor) -> Tensor:
        h = F.gelu(self.bn1(self.fc1(y)))
        return self.bn2(self.fc2(h)) + y


class WiGNetBlock(Module):
    def __init__(self, grapher: GrapherLayer, ffn: FFNLayer):
        self.grapher = grapher
        self.ffn = ffn

    def forward(self, x: Tensor) -> Tensor:
        return self.ffn(self.grapher(x))


def grapher_forward(x: FeatureGrid, layer: GrapherLayer) -> FeatureGrid:
    return FeatureGrid(layer(x.tensor), x.valid)


def ffn_forward(y: FeatureGrid, layer: FFNLayer) -> FeatureGrid:
    return FeatureGrid(layer(y.tensor), y.valid)


def wignet_block(x: FeatureGrid, grapher: GrapherLayer, ffn: FFNLayer) -> FeatureGrid:
    return ffn_forward(grapher_forward(x, grapher), ffn)


def set_frozen_graphs(module: Module, frozen: bool) -> None:
    """Freeze (or release) the neighbour tables of every Grapher in ``module``."""
    for m in module.modules():
        if isinstance(m, GrapherLayer):
            m.freeze_graph = frozen
            m._frozen = None
