"""Finite-difference gradient suites for ops, blocks and the toy model.

Each suite returns ``(component, worst relative error)`` pairs at float64.
Block and model checks hold the k-NN tables fixed at their first forward
value. Batch-norm layers are checked in both modes: in eval mode running
statistics are randomised so every parameter has a nonzero gradient; in
train mode the biases feeding straight into a batch norm are left out,
since batch normalisation removes any constant shift and their exact
gradient is zero (the relative error would then compare roundoff with
roundoff).
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import functional as F
from .gradcheck import gradcheck, gradcheck_detail
from .layers import FFNLayer, GrapherLayer, WiGNetBlock, set_frozen_graphs
from .model import WiGNetModel, build
from .nn import BatchNorm, Module
from .tensor import Tensor

THRESHOLDS = {"ops": 1e-4, "block": 1e-4, "model": 1e-3}


def _t64(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)


def ops_suite(seed: int = 0) -> list[tuple[str, float]]:
    r = np.random.default_rng(seed)
    bn = BatchNorm(3).astype(np.float64)
    bn.running_mean[:] = r.standard_normal(3) * 0.1
    bn.running_var[:] = r.uniform(0.5, 1.5, 3)
    valid = np.array([[1, 1, 0], [1, 1, 1], [0, 0, 0]], bool)
    idx = r.integers(0, 5, size=(5, 3))
    cases: list[tuple[str, Callable, list[Tensor]]] = [
        ("matmul", lambda a, b: a @ b, [_t64(r, 3, 4), _t64(r, 4, 2)]),
        ("add", lambda a, b: a + b, [_t64(r, 3, 4), _t64(r, 4)]),
        ("mul", lambda a, b: a * b, [_t64(r, 3, 4), _t64(r, 3, 1)]),
        ("linear", F.linear, [_t64(r, 4, 3), _t64(r, 3, 2), _t64(r, 2)]),
        ("grouped_linear", F.grouped_linear, [_t64(r, 6, 2, 4), _t64(r, 2, 4, 3)]),
        ("conv2d", lambda x, w, b: F.conv2d(x, w, b, 2, 1),
         [_t64(r, 2, 5, 5, 2), _t64(r, 3, 3, 2, 3), _t64(r, 3)]),
        ("batch_norm[train]", lambda x, g, b: F.batch_norm(x, g, b, bn.running_mean.copy(), bn.running_var.copy(), True),
         [_t64(r, 6, 3), _t64(r, 3), _t64(r, 3)]),
        ("batch_norm[eval]", lambda x, g, b: F.batch_norm(x, g, b, bn.running_mean, bn.running_var, False),
         [_t64(r, 6, 3), _t64(r, 3), _t64(r, 3)]),
        ("gelu", F.gelu, [_t64(r, 12, scale=2.0)]),
        ("gather_rows", lambda x: F.gather_rows(x, idx), [_t64(r, 5, 4)]),
        ("masked_max", lambda v: F.masked_max_over_neighbors(v, valid), [_t64(r, 3, 3, 2)]),
        ("concat", lambda a, b: F.concat_channels([a, b]), [_t64(r, 2, 3), _t64(r, 2, 2)]),
        ("global_avg_pool", F.global_avg_pool, [_t64(r, 2, 3, 3, 2)]),
        ("cross_entropy", lambda z: F.softmax_cross_entropy(z, [0, 2, 1]), [_t64(r, 3, 3)]),
    ]
    return [(name, gradcheck(fn, inputs)) for name, fn, inputs in cases]


def pre_norm_biases(module: Module) -> set[int]:
    """ids of bias parameters whose output goes straight into a batch norm."""
    out: set[int] = set()
    for m in module.modules():
        if isinstance(m, GrapherLayer):
            out |= {id(m.fc_in.bias), id(m.fc_out.bias)}
        elif isinstance(m, FFNLayer):
            out |= {id(m.fc1.bias), id(m.fc2.bias)}
        elif isinstance(m, WiGNetModel):
            out |= {id(m.stem[i].bias) for i in (0, 2, 4)}
            out |= {id(d.conv.bias) for d in m.downsamples}
    return out


def randomize_running_stats(module: Module, rng: np.random.Generator) -> None:
    for m in module.modules():
        if isinstance(m, BatchNorm):
            m.running_mean[:] = rng.standard_normal(m.running_mean.shape) * 0.1
            m.running_var[:] = rng.uniform(0.5, 1.5, m.running_var.shape)


def check_module(
    module: Module,
    x: Tensor,
    training: bool,
    max_samples: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error over the input and parameters of ``module``."""
    module.train(training)
    set_frozen_graphs(module, True)
    params = module.parameters()
    if training:
        skip = pre_norm_biases(module)
        params = [p for p in params if id(p) not in skip]
    try:
        errs = gradcheck_detail(lambda x, *ps: module(x), [x] + params, max_samples=max_samples, seed=seed)
    finally:
        set_frozen_graphs(module, False)
    return max(errs)


def _jitter(module: Module, rng: np.random.Generator, scale: float) -> None:
    # move parameters away from their init (zero biases, unit gammas) so
    # every term of the backward pass is exercised
    for p in module.parameters():
        p.data += rng.standard_normal(p.shape) * scale


def block_suite(seed: int = 0) -> list[tuple[str, float]]:
    results = []
    for name in ("grapher", "ffn", "block"):
        for training in (False, True):
            r = np.random.default_rng(seed)
            g = GrapherLayer(4, 4, 4, r, shifted=True)
            f = FFNLayer(4, 4, r)
            module = {"grapher": g, "ffn": f, "block": WiGNetBlock(g, f)}[name].astype(np.float64)
            _jitter(module, r, 0.3)
            randomize_running_stats(module, r)
            x = _t64(r, 2, 8, 8, 4)
            tag = "train" if training else "eval"
            results.append((f"{name}[{tag}]", check_module(module, x, training, seed=seed)))
    return results


def model_suite(seed: int = 0, max_samples: int = 2) -> list[tuple[str, float]]:
    r = np.random.default_rng(seed)
    m = build("toy-narrow", seed=seed).astype(np.float64)
    _jitter(m, r, 0.05)
    randomize_running_stats(m, r)
    x = _t64(r, 2, *m.config.input_resolution, 3)
    return [
        (f"toy-narrow[{'train' if t else 'eval'}]", check_module(m, x, t, max_samples=max_samples, seed=seed))
        for t in (False, True)
    ]


SUITES = {"ops": ops_suite, "block": block_suite, "model": model_suite}
