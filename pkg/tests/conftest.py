"""Shared oracles: central finite differences and model randomization."""

from __future__ import annotations

import numpy as np
import pytest

from serpent.layers import collect_params
from serpent.tensor import Tensor


def fd_gradient(f, t: Tensor, h: float = 1e-3) -> np.ndarray:
    """Per-element central finite differences of scalar f() w.r.t. t.data."""
    base = t.data.copy()
    flat = t.data.reshape(-1)
    out = np.zeros(base.size, dtype=np.float64)
    for i in range(base.size):
        orig = float(flat[i])
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    t.data = base
    return out.reshape(base.shape)


def fd_directional(f, tensors: list[Tensor], directions: list[np.ndarray], h: float = 1e-3) -> float:
    """Central finite-difference Jacobian-vector product along `directions`."""
    bases = [t.data.copy() for t in tensors]
    for t, b, d in zip(tensors, bases, directions):
        t.data = (b + h * d).astype(np.float32)
    fp = f()
    for t, b, d in zip(tensors, bases, directions):
        t.data = (b - h * d).astype(np.float32)
    fm = f()
    for t, b in zip(tensors, bases):
        t.data = b
    return (fp - fm) / (2.0 * h)


def rel_err(a, b, floor: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def perturb_params(module, rng: np.random.Generator, scale: float = 0.05):
    """Add noise to every parameter (keeps negative-a init negative, makes
    zero-initialized projections non-trivial so gradients flow everywhere)."""
    for t in collect_params(module).values():
        t.data = (t.data + rng.normal(0.0, scale, size=t.data.shape)).astype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
