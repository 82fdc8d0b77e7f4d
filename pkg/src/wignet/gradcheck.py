"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import functional
from .tensor import Tensor, no_grad


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def gradcheck_detail(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_samples: int | None = None,
    seed: int = 0,
    exclude: Sequence[np.ndarray | None] | None = None,
) -> list[float]:
    """Worst relative error for each of ``inputs``.

    The output of ``fn`` is contracted with a fixed random tensor to obtain a
    scalar loss. ``max_samples`` limits the number of probed coordinates per
    input (sampled without replacement); ``exclude`` holds optional boolean
    masks of coordinates to skip. Coordinates whose +-eps stencil changes
    the argmax selected by any max reduction straddle a kink of the
    piecewise-linear map and are skipped as well; the count is stored in
    ``gradcheck_detail.skipped``.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError(f"gradcheck needs float64 inputs, got {t.dtype}")
        t.data = np.ascontiguousarray(t.data)
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape)

    def loss_value():
        with no_grad(), functional.record_argmax() as log:
            value = float(np.sum(fn(*inputs).data * proj))
        return value, log

    def same_choice(a, b) -> bool:
        return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))

    (out * Tensor(proj)).sum().backward()
    _, base_choice = loss_value()
    skipped = 0
    errors = []
    for n, t in enumerate(inputs):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        candidates = np.arange(flat.size)
        if exclude is not None and exclude[n] is not None:
            candidates = candidates[~np.asarray(exclude[n], dtype=bool).reshape(-1)]
        if max_samples is not None and candidates.size > max_samples:
            candidates = np.sort(rng.choice(candidates, size=max_samples, replace=False))
        worst = 0.0
        for i in candidates:
            orig = flat[i]
            flat[i] = orig + eps
            up, up_choice = loss_value()
            flat[i] = orig - eps
            down, down_choice = loss_value()
            flat[i] = orig
            if not (same_choice(up_choice, base_choice) and same_choice(down_choice, base_choice)):
                skipped += 1
                continue
            numeric = (up - down) / (2 * eps)
            worst = max(worst, float(relative_error(analytic.reshape(-1)[i], numeric)))
        errors.append(worst)
    gradcheck_detail.skipped = skipped
    return errors


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_samples: int | None = None,
    seed: int = 0,
    exclude=None,
) -> float:
    """Worst relative error between analytic and central-difference gradients."""
    return max(gradcheck_detail(fn, inputs, eps, max_samples, seed, exclude), default=0.0)
