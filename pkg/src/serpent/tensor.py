"""Dense f32 tensors with reverse-mode automatic differentiation.

Design constraints: row-major float32 storage, broadcasting restricted to
scalars and trailing dimensions, reshape/permute materialize copies (no
views in the graph), single-threaded forward/backward per graph.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class GraphError(RuntimeError):
    """Backward called on a non-scalar, detached, or already-consumed graph."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """A dense float32 array plus an optional slot in a computation graph.

    Leaf tensors are created with ``requires_grad`` set; interior tensors
    come out of the ops below and carry a backward rule. Data is immutable
    by convention once a tensor participates in a graph; only ``grad``
    buffers are written afterwards.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        # asarray with order="C" keeps 0-d scalars 0-d (ascontiguousarray would not)
        self.data = np.asarray(data, dtype=np.float32, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def make_node(data: np.ndarray, parents: Iterable[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an op result in a graph node.

    ``backward`` receives the upstream gradient and must return one array
    (or None) per parent, in order. Exposed so other modules can register
    fused operations with hand-derived gradients.
    """
    parents = tuple(parents)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def backward(loss: Tensor):
    """Populate ``grad`` on every reachable requires_grad tensor.

    The loss must be scalar and attached to a graph. Gradients accumulate
    (sum) across shared subexpressions. Calling twice on the same loss
    without rebuilding the graph is an error.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward on a detached graph (loss does not require grad)")
    if loss._consumed:
        raise GraphError("backward already called on this graph; rebuild it first")
    loss._consumed = True

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    for node in order:
        node.grad = np.zeros_like(node.data)
    loss.grad = np.ones_like(loss.data)

    for node in reversed(order):
        if node._backward is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if g.shape != parent.data.shape:
                raise GraphError(
                    f"backward produced grad shape {g.shape} for parent {parent.shape}"
                )
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g.astype(np.float32, copy=False)


# ---------------------------------------------------------------------------
# broadcasting helpers (scalar and trailing-dim only)

def _broadcastable(small: tuple[int, ...], big: tuple[int, ...]) -> bool:
    if small == big or small == ():
        return True
    return len(small) < len(big) and big[len(big) - len(small):] == small


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.data.shape, b.data.shape
    if not (_broadcastable(sa, sb) or _broadcastable(sb, sa)):
        raise ShapeError(f"{op}: shapes {sa} and {sb} are not scalar/trailing broadcastable")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the parent's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(extra))).reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "add")
    out = a.data + b.data

    def bw(g):
        return _reduce_to(g, a.data.shape), _reduce_to(g, b.data.shape)

    return make_node(out, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "sub")
    out = a.data - b.data

    def bw(g):
        return _reduce_to(g, a.data.shape), _reduce_to(-g, b.data.shape)

    return make_node(out, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "mul")
    out = a.data * b.data

    def bw(g):
        return _reduce_to(g * b.data, a.data.shape), _reduce_to(g * a.data, b.data.shape)

    return make_node(out, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def abs_(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return make_node(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    s = _sigmoid(a.data)
    out = a.data * s
    return make_node(out, (a,), lambda g: (g * (s + a.data * s * (1.0 - s)),))


def softplus_np(x: np.ndarray) -> np.ndarray:
    """ln(1 + e^x) without overflow on either branch."""
    return np.logaddexp(0.0, x)


def softplus(a: Tensor) -> Tensor:
    out = softplus_np(a.data).astype(np.float32)
    return make_node(out, (a,), lambda g: (g * _sigmoid(a.data),))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    out = a.data @ b.data

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return make_node(out, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Contract the last axis: x[..., Cin] @ w[Cin, Cout] (+ b[Cout])."""
    cin = x.data.shape[-1]
    if w.data.ndim != 2 or w.data.shape[0] != cin:
        raise ShapeError(f"linear: x last dim {cin} vs weight {w.data.shape}")
    cout = w.data.shape[1]
    x2 = x.data.reshape(-1, cin)
    out = x2 @ w.data
    if b is not None:
        if b.data.shape != (cout,):
            raise ShapeError(f"linear: bias shape {b.data.shape}, expected ({cout},)")
        out = out + b.data
    out = out.reshape(x.data.shape[:-1] + (cout,))

    def bw(g):
        g2 = g.reshape(-1, cout)
        dx = (g2 @ w.data.T).reshape(x.data.shape)
        dw = x2.T @ g2
        if b is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    c = x.data.shape[-1]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(
            f"layer_norm: gamma/beta shapes {gamma.data.shape}/{beta.data.shape}, expected ({c},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def bw(g):
        dgamma = (g * xhat).reshape(-1, c).sum(axis=0)
        dbeta = g.reshape(-1, c).sum(axis=0)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx.astype(np.float32), dgamma, dbeta

    return make_node(out, (x, gamma, beta), bw)


def depthwise_conv2d(x: Tensor, kernels: Tensor) -> Tensor:
    """Per-channel k×k convolution with zero 'same' padding; k must be odd."""
    if x.data.ndim != 3:
        raise ShapeError(f"depthwise_conv2d: input must be H×W×C, got {x.data.shape}")
    if kernels.data.ndim != 3 or kernels.data.shape[0] != kernels.data.shape[1]:
        raise ShapeError(f"depthwise_conv2d: kernels must be k×k×C, got {kernels.data.shape}")
    k = kernels.data.shape[0]
    if k % 2 == 0:
        raise ShapeError(f"depthwise_conv2d: kernel size must be odd, got {k}")
    h, w, c = x.data.shape
    if kernels.data.shape[2] != c:
        raise ShapeError(f"depthwise_conv2d: {c} channels vs kernels {kernels.data.shape}")
    r = k // 2
    xp = np.pad(x.data, ((r, r), (r, r), (0, 0)))
    out = np.zeros_like(x.data)
    for a in range(k):
        for b in range(k):
            out += xp[a:a + h, b:b + w, :] * kernels.data[a, b, :]

    def bw(g):
        gp = np.pad(g, ((r, r), (r, r), (0, 0)))
        dx = np.zeros_like(x.data)
        dk = np.zeros_like(kernels.data)
        for a in range(k):
            for b in range(k):
                # correlation with the flipped kernel gives the input grad
                dx += gp[2 * r - a:2 * r - a + h, 2 * r - b:2 * r - b + w, :] * kernels.data[a, b, :]
                dk[a, b, :] = (xp[a:a + h, b:b + w, :] * g).sum(axis=(0, 1))
        return dx, dk

    return make_node(out, (x, kernels), bw)


# ---------------------------------------------------------------------------
# reductions and shape ops (all materialize copies)

def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(), dtype=np.float32)
    return make_node(out, (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    out = np.asarray(a.data.mean(), dtype=np.float32)
    return make_node(out, (a,), lambda g: (np.broadcast_to(g / n, a.data.shape).astype(np.float32),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: {a.data.shape} -> {shape} changes element count")
    out = a.data.reshape(shape).copy()
    return make_node(out, (a,), lambda g: (g.reshape(a.data.shape).copy(),))


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = np.ascontiguousarray(a.data.transpose(axes))
    inv = np.argsort(axes)
    return make_node(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D tensor; gradient scatter-adds back."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows: expected 2-D input, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]

    def bw(g):
        da = np.zeros_like(a.data)
        np.add.at(da, idx, g)
        return (da,)

    return make_node(out, (a,), bw)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[:-1] != b.data.shape[:-1]:
        raise ShapeError(f"concat_last: leading dims differ, {a.data.shape} vs {b.data.shape}")
    ca = a.data.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)

    def bw(g):
        return np.ascontiguousarray(g[..., :ca]), np.ascontiguousarray(g[..., ca:])

    return make_node(out, (a, b), bw)


def space_to_patches(x: Tensor, p: int) -> Tensor:
    """H×W×C -> (H/p)×(W/p)×(p·p·C); each patch raster-flattened, channels fastest."""
    if x.data.ndim != 3:
        raise ShapeError(f"space_to_patches: expected H×W×C, got {x.data.shape}")
    h, w, c = x.data.shape
    if h % p or w % p:
        raise ShapeError(f"space_to_patches: {h}×{w} not divisible by patch size {p}")
    out = (
        x.data.reshape(h // p, p, w // p, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(h // p, w // p, p * p * c)
        .copy()
    )

    def bw(g):
        dg = (
            g.reshape(h // p, w // p, p, p, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape(h, w, c)
        )
        return (np.ascontiguousarray(dg),)

    return make_node(out, (x,), bw)


def patches_to_space(x: Tensor, p: int) -> Tensor:
    """(h)×(w)×(p·p·C) -> (h·p)×(w·p)×C; exact inverse of space_to_patches."""
    h, w, g = x.data.shape
    if g % (p * p):
        raise ShapeError(f"patches_to_space: channel count {g} not divisible by {p * p}")
    c = g // (p * p)
    out = (
        x.data.reshape(h, w, p, p, c)
        .transpose(0, 2, 1, 3, 4)
        .reshape(h * p, w * p, c)
        .copy()
    )

    def bw(gr):
        dg = (
            gr.reshape(h, p, w, p, c)
            .transpose(0, 2, 1, 3, 4)
            .reshape(h, w, g)
        )
        return (np.ascontiguousarray(dg),)

    return make_node(out, (x,), bw)
