"""Small parameterised building blocks on top of :mod:`star_zsl.tensor`."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .tensor import Parameter, Tensor


def fan_in_normal(rng: np.random.Generator, fan_in: int, shape, gain: float = 1.0) -> np.ndarray:
    """N(0, gain / fan_in): variance preserving for gain 1, and for gain 2 ahead of a relu."""
    return rng.normal(0.0, np.sqrt(gain / fan_in), size=shape)


def normal_init(rng: np.random.Generator, std: float, shape) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear:
    """Affine map ``x @ W + b`` over the last axis."""

    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True,
                 gain: float = 1.0):
        dtype = T.get_default_dtype()
        self.d_in, self.d_out = d_in, d_out
        self.weight = Parameter(fan_in_normal(rng, d_in, (d_in, d_out), gain), f"{name}.weight", dtype=dtype)
        self.bias = Parameter(np.zeros(d_out), f"{name}.bias", dtype=dtype) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"{self.weight.name}: expected last dim {self.d_in}, got {x.shape}")
        y = T.matmul(x, self.weight)
        return y if self.bias is None else T.add(y, self.bias)

    def parameters(self) -> list[Parameter]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


class MLP2:
    """Two affine layers with a relu in between."""

    def __init__(self, name: str, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.fc1 = Linear(f"{name}.fc1", d_in, d_hidden, rng, gain=2.0)
        self.fc2 = Linear(f"{name}.fc2", d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))

    def parameters(self) -> list[Parameter]:
        return self.fc1.parameters() + self.fc2.parameters()
