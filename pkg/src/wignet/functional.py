"""Neural-network operations with hand-written backward passes.

Feature maps are channel-last: ``[B, H, W, C]``.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor, concat, make_result

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
_GELU_C = math.sqrt(2.0 / math.pi)

# when a list, masked_max appends its argmax choices (used to detect kinks)
_ARGMAX_LOG: list | None = None


@contextlib.contextmanager
def record_argmax():
    """Collect the argmax arrays chosen by every masked max inside the block."""
    global _ARGMAX_LOG
    prev, _ARGMAX_LOG = _ARGMAX_LOG, []
    try:
        yield _ARGMAX_LOG
    finally:
        _ARGMAX_LOG = prev


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    fin, fout = weight.shape
    if x.shape[-1] != fin:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, fin)
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, fout)
        if x.requires_grad:
            x._accumulate((g2 @ weight.data.T).reshape(x.shape))
        if weight.requires_grad:
            weight._accumulate(x2.T @ g2)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))

    return make_result(out.reshape(lead + (fout,)), parents, "linear", backward)


def grouped_linear(u: Tensor, weight: Tensor) -> Tensor:
    """Block-diagonal projection: ``u[n, g, i] x weight[g, i, o] -> [n, g, o]``."""
    n, g, i = u.shape
    if weight.ndim != 3 or weight.shape[0] != g or weight.shape[1] != i:
        raise DimensionError(f"grouped_linear: input {u.shape} does not match weight {weight.shape}")
    ut = u.data.transpose(1, 0, 2)  # [g, n, i]
    out = np.matmul(ut, weight.data).transpose(1, 0, 2)

    def backward(grad):
        gt = grad.transpose(1, 0, 2)  # [g, n, o]
        if u.requires_grad:
            u._accumulate(np.matmul(gt, weight.data.transpose(0, 2, 1)).transpose(1, 0, 2))
        if weight.requires_grad:
            weight._accumulate(np.matmul(ut.transpose(0, 2, 1), gt))

    return make_result(np.ascontiguousarray(out), (u, weight), "grouped_linear", backward)


def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution via im2col. ``x``: [B,H,W,Cin], ``weight``: [kh,kw,Cin,Cout]."""
    B, H, W, C = x.shape
    kh, kw, cin, cout = weight.shape
    if cin != C:
        raise DimensionError(f"conv2d: input {x.shape} has {C} channels, weight {weight.shape} expects {cin}")
    Ho = conv_output_size(H, kh, stride, pad)
    Wo = conv_output_size(W, kw, stride, pad)
    if Ho <= 0 or Wo <= 0 or kh > H + 2 * pad or kw > W + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} too large for padded input {H}x{W} (pad {pad})")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    # win: [B, Ho, Wo, C, kh, kw] -> cols [B*Ho*Wo, kh*kw*C]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, kh * kw * C)
    w2 = weight.data.reshape(kh * kw * C, cout)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, cout)
        if weight.requires_grad:
            weight._accumulate((cols.T @ g2).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g2.sum(axis=0))
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape(B, Ho, Wo, kh, kw, C)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += gcols[:, :, :, i, j, :]
            x._accumulate(gxp[:, pad:pad + H, pad:pad + W, :])

    return make_result(out.reshape(B, Ho, Wo, cout), parents, "conv2d", backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Channel-last batch normalisation; statistics over every axis but the last.

    In training mode the running buffers are updated in place (unbiased
    variance, as is conventional).
    """
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batch_norm: gamma {gamma.shape}/beta {beta.shape} vs {C} channels")
    axes = tuple(range(x.ndim - 1))
    n = x.data.size // C if C else 0
    if training:
        if n == 0:
            raise ValueError("batch_norm: empty batch in training mode")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean.astype(x.dtype, copy=False)
        var = running_var.astype(x.dtype, copy=False)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * invstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx = g * gamma.data
            if training:
                s1 = gx.sum(axis=axes)
                s2 = (gx * xhat).sum(axis=axes)
                gx = (gx - s1 / n - xhat * (s2 / n)) * invstd
            else:
                gx = gx * invstd
            x._accumulate(gx)

    return make_result(out.astype(x.dtype, copy=False), (x, gamma, beta), "batch_norm", backward)


def _gelu_grad(x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    x2 = x * x
    if t is None:
        t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation (differs from the erf form by < 1e-3)."""
    d = x.data
    t = np.tanh(_GELU_C * d * (1.0 + 0.044715 * (d * d)))
    out = 0.5 * d * (1.0 + t)

    def backward(g):
        x._accumulate(g * _gelu_grad(d, t))

    return make_result(out, (x,), "gelu", backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[index]`` for a 2-D ``x``; output shape ``index.shape + (F,)``."""
    index = np.asarray(index, dtype=np.intp)
    n, F = x.shape

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index.reshape(-1), g.reshape(-1, F))
        x._accumulate(gx)

    return make_result(x.data[index], (x,), "gather_rows", backward)


def masked_max_over_neighbors(values: Tensor, valid: np.ndarray) -> Tensor:
    """Per-row, per-feature maximum over the valid neighbour slots.

    ``values``: [n, k, F]; ``valid``: bool [n, k]. Rows without any valid slot
    produce zeros. The gradient goes to the lowest-index argmax slot.
    """
    n, k, F = values.shape
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != (n, k):
        raise DimensionError(f"masked_max: mask {valid.shape} does not match values {values.shape}")
    if k == 0:
        return make_result(np.zeros((n, F), values.dtype), (values,), "masked_max", lambda g: None)
    masked = np.where(valid[:, :, None], values.data, -np.inf)
    arg = masked.argmax(axis=1)  # first occurrence wins ties
    if _ARGMAX_LOG is not None:
        _ARGMAX_LOG.append(arg)
    has = valid.any(axis=1)
    out = np.take_along_axis(values.data, arg[:, None, :], axis=1)[:, 0, :]
    out = np.where(has[:, None], out, 0).astype(values.dtype, copy=False)

    def backward(g):
        gv = np.zeros_like(values.data)
        g = np.where(has[:, None], g, 0)
        np.put_along_axis(gv, arg[:, None, :], g[:, None, :], axis=1)
        values._accumulate(gv)

    return make_result(out, (values,), "masked_max", backward)


def concat_channels(tensors) -> Tensor:
    return concat(tensors, axis=-1)


def global_avg_pool(x: Tensor) -> Tensor:
    """[B, H, W, C] -> [B, C]."""
    B, H, W, C = x.shape
    out = x.data.mean(axis=(1, 2))

    def backward(g):
        x._accumulate(np.broadcast_to(g[:, None, None, :] / (H * W), x.shape))

    return make_result(out, (x,), "global_avg_pool", backward)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.intp)
    B, C = logits.shape
    if labels.shape != (B,):
        raise DimensionError(f"softmax_cross_entropy: labels {labels.shape} vs logits {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = (logsum - z[np.arange(B), labels]).mean()

    def backward(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(B), labels] -= 1.0
        logits._accumulate(p * (g / B))

    return make_result(np.asarray(loss, dtype=logits.dtype), (logits,), "softmax_cross_entropy", backward)
