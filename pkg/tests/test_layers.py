import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wignet import checks
from wignet.gradcheck import gradcheck
from wignet.layers import (
    OPERATORS,
    ConfigError,
    FFNLayer,
    GraphConv,
    GrapherLayer,
    WiGNetBlock,
    ffn_forward,
    grapher_forward,
    max_relative_conv,
    operator_dispatch,
    wignet_block,
)
from wignet.tensor import DimensionError, Tensor
from wignet.windowing import FeatureGrid


def zero_(*params):
    for p in params:
        p.data[...] = 0


# ----------------------------------------------------------------------
# max-relative convolution

def test_max_relative_hand_example():
    x = Tensor([[1.0], [4.0]])
    idx = np.array([[1], [0]])
    out = max_relative_conv(x, idx, np.ones((2, 1), bool), Tensor(np.eye(2)))
    assert out.data.tolist() == [[1.0, 3.0], [4.0, -3.0]]


def test_max_relative_identical_features():
    r = np.random.default_rng(0)
    x = Tensor(np.tile(r.standard_normal(3), (5, 1)))
    w = Tensor(r.standard_normal((6, 4)))
    idx = r.integers(0, 5, size=(5, 3))
    out = max_relative_conv(x, idx, np.ones((5, 3), bool), w)
    expect = np.concatenate([x.data, np.zeros((5, 3))], axis=1) @ w.data
    np.testing.assert_array_equal(out.data, expect)


@pytest.mark.parametrize("seed", range(5))
def test_max_relative_neighbor_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    n, k, F = 7, 4, 3
    x = Tensor(r.standard_normal((n, F)))
    w = Tensor(r.standard_normal((2 * F, F)))
    idx = r.integers(0, n, size=(n, k))
    valid = r.random((n, k)) < 0.7
    base = max_relative_conv(x, idx, valid, w).data
    for _ in range(5):
        perm = np.stack([r.permutation(k) for _ in range(n)])
        out = max_relative_conv(x, np.take_along_axis(idx, perm, 1), np.take_along_axis(valid, perm, 1), w)
        np.testing.assert_array_equal(out.data, base)


def test_max_relative_no_neighbors_gives_zero_aggregate():
    x = Tensor([[2.0, -1.0]])
    out = max_relative_conv(x, np.zeros((1, 3), int), np.zeros((1, 3), bool), Tensor(np.eye(4)))
    assert out.data.tolist() == [[2.0, -1.0, 0.0, 0.0]]


def test_max_relative_grouped_weight_matches_block_diagonal():
    r = np.random.default_rng(1)
    n, F, g = 6, 8, 4
    x = Tensor(r.standard_normal((n, F)))
    idx = r.integers(0, n, size=(n, 3))
    valid = np.ones((n, 3), bool)
    wg = r.standard_normal((g, 2 * F // g, F // g))
    # equivalent dense weight over [x || agg]
    cg = F // g
    dense = np.zeros((2 * F, F))
    for i in range(g):
        cols = slice(i * cg, (i + 1) * cg)
        dense[i * cg:(i + 1) * cg, cols] = wg[i, :cg]
        dense[F + i * cg:F + (i + 1) * cg, cols] = wg[i, cg:]
    a = max_relative_conv(x, idx, valid, Tensor(wg)).data
    b = max_relative_conv(x, idx, valid, Tensor(dense)).data
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_max_relative_shape_errors():
    x = Tensor(np.zeros((3, 2)))
    with pytest.raises(DimensionError):
        max_relative_conv(x, np.zeros((2, 1), int), np.ones((2, 1), bool), Tensor(np.eye(4)))
    with pytest.raises(DimensionError):
        max_relative_conv(x, np.zeros((3, 1), int), np.ones((3, 1), bool), Tensor(np.eye(3)))


# ----------------------------------------------------------------------
# operator surface

def _fixture(seed=0, n=10, F=8, k=3):
    r = np.random.default_rng(seed)
    x = Tensor(r.standard_normal((n, F)))
    idx = r.integers(0, n, size=(n, k))
    valid = r.random((n, k)) < 0.8
    return r, x, idx, valid


def test_dispatch_max_relative_is_identity():
    r, x, idx, valid = _fixture()
    w = Tensor(r.standard_normal((16, 8)))
    b = Tensor(r.standard_normal(8))
    a = operator_dispatch("max_relative", x, idx, valid, weight=w, bias=b)
    np.testing.assert_array_equal(a.data, max_relative_conv(x, idx, valid, w, b).data)


def test_dispatch_unknown_kind():
    _, x, idx, valid = _fixture()
    with pytest.raises(ConfigError):
        operator_dispatch("gat", x, idx, valid)
    with pytest.raises(ConfigError):
        GraphConv("gat", 8, 8, np.random.default_rng(0))


@pytest.mark.parametrize("kind", sorted(OPERATORS))
@pytest.mark.parametrize("out_dim", [8, 4])
def test_every_operator_output_shape(kind, out_dim):
    r, x, idx, valid = _fixture()
    conv = GraphConv(kind, 8, out_dim, r, groups=4).astype(np.float64)
    out = conv(x, idx, valid)
    assert out.shape == (10, out_dim)
    assert np.isfinite(out.data).all()


@pytest.mark.parametrize("kind", sorted(OPERATORS))
def test_every_operator_gradcheck(kind):
    r, x, idx, valid = _fixture()
    conv = GraphConv(kind, 8, 8, r, groups=2).astype(np.float64)
    for p in conv.parameters():
        p.data += r.standard_normal(p.shape)
    assert gradcheck(lambda x, *ps: conv(x, idx, valid), [x] + conv.parameters()) < 1e-4


# ----------------------------------------------------------------------
# Grapher / FFN / block

def test_grapher_dimension_plan():
    g = GrapherLayer(48, 9, 8, np.random.default_rng(0))
    assert g.fc_in.weight.shape == (48, 96)
    assert g.fc_out.weight.shape == (96, 48)
    assert g.conv.weight.shape == (4, 2 * 96 // 4, 96 // 4)  # grouped [x || agg] -> 2F


def test_ffn_hidden_width():
    f = FFNLayer(48, 4, np.random.default_rng(0))
    assert f.hidden == 192
    assert f.fc1.weight.shape == (48, 192) and f.fc2.weight.shape == (192, 48)


@pytest.mark.parametrize("shifted", [False, True])
def test_grapher_residual_identity_bit_exact(shifted):
    r = np.random.default_rng(0)
    g = GrapherLayer(6, 4, 4, r, shifted=shifted)
    zero_(g.fc_out.weight, g.fc_out.bias)
    for _ in range(20):
        x = Tensor(r.standard_normal((2, 8, 8, 6)).astype(np.float32))
        np.testing.assert_array_equal(g(x).data, x.data)


def test_ffn_residual_identity_bit_exact():
    r = np.random.default_rng(1)
    f = FFNLayer(6, 4, r)
    zero_(f.fc2.weight, f.fc2.bias)
    for _ in range(20):
        y = Tensor(r.standard_normal((2, 5, 7, 6)).astype(np.float32))
        np.testing.assert_array_equal(f(y).data, y.data)


def test_block_zeroed_inner_weights_is_identity():
    r = np.random.default_rng(2)
    g, f = GrapherLayer(4, 4, 4, r, shifted=True), FFNLayer(4, 4, r)
    zero_(g.fc_out.weight, g.fc_out.bias, f.fc2.weight, f.fc2.bias)
    x = FeatureGrid(Tensor(r.standard_normal((1, 6, 10, 4)).astype(np.float32)))
    np.testing.assert_array_equal(wignet_block(x, g, f).tensor.data, x.tensor.data)


def test_grapher_single_pixel():
    r = np.random.default_rng(3)
    g = GrapherLayer(4, 9, 8, r).astype(np.float64).eval()
    for p in g.parameters():
        p.data += r.standard_normal(p.shape) * 0.5
    x = r.standard_normal((1, 1, 1, 4))
    out = g(Tensor(x)).data

    def bn(v, m):
        return (v - m.running_mean) / np.sqrt(m.running_var + m.eps) * m.gamma.data + m.beta.data

    h = bn(x.reshape(1, 4) @ g.fc_in.weight.data + g.fc_in.bias.data, g.bn_in)
    groups = g.conv.weight.shape[0]
    hg = h.reshape(1, groups, -1)
    u = np.concatenate([hg, np.zeros_like(hg)], axis=2)  # per group: [x || 0]
    y = np.einsum("ngi,gio->ngo", u, g.conv.weight.data).reshape(1, -1) + g.conv.bias.data
    y = 0.5 * y * (1 + np.tanh(np.sqrt(2 / np.pi) * (y + 0.044715 * y**3)))
    expect = bn(y @ g.fc_out.weight.data + g.fc_out.bias.data, g.bn_out) + x.reshape(1, 4)
    np.testing.assert_allclose(out.reshape(1, 4), expect, rtol=1e-12, atol=1e-12)
    assert not g.last_table.valid.any()


@settings(max_examples=25, deadline=None)
@given(
    H=st.integers(1, 10), W=st.integers(1, 10), C=st.sampled_from([4, 8]),
    M=st.integers(1, 5), shifted=st.booleans(), adaptive=st.booleans(),
    op=st.sampled_from(sorted(OPERATORS)),
)
def test_block_preserves_shape(H, W, C, M, shifted, adaptive, op):
    r = np.random.default_rng(H * 100 + W)
    g = GrapherLayer(C, 3, M, r, shifted=shifted, adaptive=adaptive, operator=op)
    block = WiGNetBlock(g, FFNLayer(C, 2, r))
    x = Tensor(r.standard_normal((2, H, W, C)).astype(np.float32))
    out = block(x)
    assert out.shape == x.shape and np.isfinite(out.data).all()


def test_grapher_window_locality_unshifted():
    r = np.random.default_rng(4)
    g = GrapherLayer(4, 4, 4, r).eval()
    for m in g.modules():
        if hasattr(m, "running_var"):
            m.running_mean[:] = r.standard_normal(m.running_mean.shape) * 0.1
    x = r.standard_normal((1, 8, 8, 4)).astype(np.float32)
    base = g(Tensor(x)).data
    x2 = x.copy()
    x2[0, 4:8, 0:4] += r.standard_normal((4, 4, 4)).astype(np.float32)  # window (1, 0)
    out = g(Tensor(x2)).data
    changed = np.any(out != base, axis=-1)[0]
    inside = np.zeros((8, 8), bool)
    inside[4:8, 0:4] = True
    assert changed[inside].any()
    assert not changed[~inside].any()


def test_grapher_shift_creates_cross_window_edges():
    r = np.random.default_rng(4)
    g = GrapherLayer(4, 4, 4, r, shifted=True)
    g(Tensor(r.standard_normal((1, 8, 8, 4)).astype(np.float32)))
    t, S = g.last_table, 2
    cross = 0
    for w in range(4):
        for i in range(16):
            # original coordinates of rolled-frame node i of window w
            ry, rx = (w // 2) * 4 + i // 4, (w % 2) * 4 + i % 4
            home = (((ry + S) % 8) // 4, ((rx + S) % 8) // 4)
            for j in t.indices[0, w, i][t.valid[0, w, i]]:
                qy, qx = (w // 2) * 4 + j // 4, (w % 2) * 4 + j % 4
                cross += home != (((qy + S) % 8) // 4, ((qx + S) % 8) // 4)
    assert cross > 0


def test_grapher_rebuilds_graph_every_call():
    r = np.random.default_rng(5)
    g = GrapherLayer(4, 4, 4, r)
    g(Tensor(r.standard_normal((1, 8, 8, 4)).astype(np.float32)))
    first = g.last_table
    g(Tensor(r.standard_normal((1, 8, 8, 4)).astype(np.float32)))
    assert not first.equals(g.last_table)


def test_frozen_graph_is_reused():
    r = np.random.default_rng(5)
    g = GrapherLayer(4, 4, 4, r)
    g.freeze_graph = True
    g(Tensor(r.standard_normal((1, 8, 8, 4)).astype(np.float32)))
    first = g.last_table
    g(Tensor(r.standard_normal((1, 8, 8, 4)).astype(np.float32)))
    assert g.last_table is first


def test_grapher_geometry_single_window_never_shifts():
    g = GrapherLayer(4, 4, 8, np.random.default_rng(0), shifted=True)
    assert g.geometry(16, 16) == (8, 4)
    assert g.geometry(8, 8) == (8, 0)
    assert g.geometry(4, 4) == (4, 0)
    assert g.geometry(4, 6) == (4, 2)  # padded to two windows


def test_grapher_channel_mismatch():
    g = GrapherLayer(4, 4, 4, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        g(Tensor(np.zeros((1, 4, 4, 3), np.float32)))


def test_functional_wrappers_keep_valid_mask():
    r = np.random.default_rng(6)
    g, f = GrapherLayer(4, 4, 4, r), FFNLayer(4, 4, r)
    x = FeatureGrid(Tensor(r.standard_normal((1, 4, 4, 4)).astype(np.float32)))
    assert grapher_forward(x, g).valid is x.valid
    assert ffn_forward(x, f).tensor.shape == x.tensor.shape


# ----------------------------------------------------------------------
# gradient checks (float64, frozen neighbour tables)

def test_block_gradcheck_suite():
    for name, err in checks.block_suite(0):
        assert err < checks.THRESHOLDS["block"], name


@pytest.mark.parametrize("shifted", [False, True])
def test_grapher_gradcheck_padded_grid(shifted):
    r = np.random.default_rng(7)
    g = GrapherLayer(4, 3, 4, r, shifted=shifted).astype(np.float64)
    checks._jitter(g, r, 0.3)
    checks.randomize_running_stats(g, r)
    x = Tensor(r.standard_normal((1, 6, 7, 4)), dtype=np.float64)
    assert checks.check_module(g, x, training=False) < 1e-4


def test_pre_norm_bias_gradient_is_zero_in_train_mode():
    r = np.random.default_rng(8)
    g = GrapherLayer(4, 4, 4, r).astype(np.float64)
    checks._jitter(g, r, 0.3)
    g.train()
    x = Tensor(r.standard_normal((2, 8, 8, 4)), dtype=np.float64)
    (g(x) * Tensor(r.standard_normal((2, 8, 8, 4)))).sum().backward()
    assert np.abs(g.fc_in.bias.grad).max() < 1e-12
    assert np.abs(g.fc_out.bias.grad).max() < 1e-12
    assert np.abs(g.conv.bias.grad).max() > 1e-3
