"""Module container and the basic parameterised layers."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor, get_default_dtype


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = ""):
        seen: set[int] = set()
        for name, p in self._named_parameters(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _named_parameters(self, prefix):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child._named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = ""):
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def modules(self):
        yield self
        for _, child in self._children():
            yield from child.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def astype(self, dtype):
        """Cast every parameter and buffer in place."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for name in getattr(m, "_buffers", ()):
                setattr(m, name, getattr(m, name).astype(dtype))
        return self

    def state(self) -> list[tuple[str, np.ndarray]]:
        """Parameters followed by buffers, in registration order."""
        return [(n, p.data) for n, p in self.named_parameters()] + list(self.named_buffers())

    def load_state(self, state) -> None:
        state = dict(state)
        for name, p in self.named_parameters():
            arr = state.pop(name)
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.astype(p.dtype)
        for m_prefix, m in self._named_modules():
            for b in getattr(m, "_buffers", ()):
                key = m_prefix + b
                arr = state.pop(key)
                setattr(m, b, arr.astype(getattr(m, b).dtype))
        if state:
            raise ValueError(f"unexpected checkpoint entries: {sorted(state)[:5]}")

    def _named_modules(self, prefix: str = ""):
        yield prefix, self
        for name, child in self._children():
            yield from child._named_modules(f"{prefix}{name}.")


def normal_init(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return (rng.standard_normal(shape) * std).astype(get_default_dtype())


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(normal_init(rng, (fin, fout)), "weight")
        self.bias = Parameter(np.zeros(fout, get_default_dtype()), "bias") if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class BatchNorm(Module):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, momentum: float = F.BN_MOMENTUM, eps: float = F.BN_EPS):
        dt = get_default_dtype()
        self.gamma = Parameter(np.ones(channels, dt), "gamma")
        self.beta = Parameter(np.zeros(channels, dt), "beta")
        self.running_mean = np.zeros(channels, dt)
        self.running_var = np.ones(channels, dt)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, kernel: int, stride: int, pad: int, rng: np.random.Generator):
        self.weight = Parameter(normal_init(rng, (kernel, kernel, cin, cout)), "weight")
        self.bias = Parameter(np.zeros(cout, get_default_dtype()), "bias")
        self.stride = stride
        self.pad = pad

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k = self.weight.shape[0]
        return (F.conv_output_size(h, k, self.stride, self.pad), F.conv_output_size(w, k, self.stride, self.pad))
