"""Learnable layer primitives and parameter-tree utilities."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, depthwise_conv2d, layer_norm, linear


class Linear:
    """Affine map on the trailing axis; optionally zero-initialized."""

    def __init__(self, cin: int, cout: int, rng: np.random.Generator, zero_init: bool = False):
        if zero_init:
            w = np.zeros((cin, cout))
            b = np.zeros(cout)
        else:
            k = 1.0 / np.sqrt(cin)
            w = rng.uniform(-k, k, size=(cin, cout))
            b = rng.uniform(-k, k, size=cout)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(b, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.w, self.b)

    def params(self):
        return {"w": self.w, "b": self.b}


class LayerNorm:
    def __init__(self, c: int, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(c), requires_grad=True)
        self.beta = Tensor(np.zeros(c), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}


class DepthwiseConv2d:
    def __init__(self, k: int, c: int, rng: np.random.Generator):
        bound = 1.0 / k  # fan_in = k*k per channel
        self.kernels = Tensor(rng.uniform(-bound, bound, size=(k, k, c)), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return depthwise_conv2d(x, self.kernels)

    def params(self):
        return {"kernels": self.kernels}


def collect_params(module, prefix: str = "") -> dict[str, Tensor]:
    """Flatten a nested params() tree into dotted-name -> Tensor."""
    out: dict[str, Tensor] = {}
    for name, item in module.params().items():
        key = f"{prefix}{name}"
        if isinstance(item, Tensor):
            out[key] = item
        else:
            out.update(collect_params(item, prefix=f"{key}."))
    return out
