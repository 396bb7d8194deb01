"""Four-directional 2D selective scan and the VSS processing block.

An H×W feature map is flattened along row-major rasters starting from each
of the four corners, every raster is run through its own selective scan
(independent weights per direction), and the four rerolled outputs are
summed. The VSS block wraps this with normalization, a gating branch, a
depthwise convolution, and a zero-initialized output projection so a fresh
block is the identity.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from . import ssm
from .layers import DepthwiseConv2d, LayerNorm, Linear
from .tensor import Tensor, ShapeError, add, mul, reshape, silu, take_rows


class ScanDirection(Enum):
    TL_BR = "tl_br"
    TR_BL = "tr_bl"
    BL_TR = "bl_tr"
    BR_TL = "br_tl"


# canonical enumeration order; reductions always happen in this order so
# results are independent of the order directions are computed in
DIRECTIONS = (ScanDirection.TL_BR, ScanDirection.TR_BL, ScanDirection.BL_TR, ScanDirection.BR_TL)


def unroll_order(h: int, w: int, direction: ScanDirection) -> np.ndarray:
    """Flat row-major indices in the order the raster visits them."""
    grid = np.arange(h * w, dtype=np.intp).reshape(h, w)
    if direction is ScanDirection.TL_BR:
        pass
    elif direction is ScanDirection.TR_BL:
        grid = grid[:, ::-1]
    elif direction is ScanDirection.BL_TR:
        grid = grid[::-1, :]
    elif direction is ScanDirection.BR_TL:
        grid = grid[::-1, ::-1]
    return np.ascontiguousarray(grid.reshape(-1))


def reroll_order(h: int, w: int, direction: ScanDirection) -> np.ndarray:
    """Inverse permutation: sequence position holding each flat pixel index."""
    order = unroll_order(h, w, direction)
    inv = np.empty_like(order)
    inv[order] = np.arange(h * w, dtype=np.intp)
    return inv


def unroll(feat: Tensor, direction: ScanDirection) -> Tensor:
    """H×W×E -> (H·W)×E along the direction's raster."""
    if feat.data.ndim != 3:
        raise ShapeError(f"unroll: expected H×W×E, got {feat.shape}")
    h, w, e = feat.data.shape
    seq = reshape(feat, (h * w, e))
    return take_rows(seq, unroll_order(h, w, direction))


def reroll(seq: Tensor, direction: ScanDirection, h: int, w: int) -> Tensor:
    """Exact inverse of unroll for the same direction."""
    if seq.data.ndim != 2 or seq.data.shape[0] != h * w:
        raise ShapeError(f"reroll: sequence shape {seq.shape} does not match {h}×{w}")
    e = seq.data.shape[1]
    back = take_rows(seq, reroll_order(h, w, direction))
    return reshape(back, (h, w, e))


class SelectiveScanLayer:
    """Trainable parameter set for one directional scan."""

    def __init__(self, e: int, n: int, rng: np.random.Generator):
        init = ssm.SelectiveParams.init(e, n, rng)
        self.a = Tensor(init.a, requires_grad=True)
        self.w_b = Tensor(init.w_b, requires_grad=True)
        self.b_b = Tensor(init.b_b, requires_grad=True)
        self.w_c = Tensor(init.w_c, requires_grad=True)
        self.b_c = Tensor(init.b_c, requires_grad=True)
        self.w_delta = Tensor(init.w_delta, requires_grad=True)
        self.b_delta = Tensor(init.b_delta, requires_grad=True)

    def __call__(self, seq: Tensor) -> Tensor:
        return ssm.selective_scan_tensor(
            seq, self.a, self.w_b, self.b_b, self.w_c, self.b_c, self.w_delta, self.b_delta
        )

    def params(self):
        return {
            "a": self.a, "w_b": self.w_b, "b_b": self.b_b, "w_c": self.w_c,
            "b_c": self.b_c, "w_delta": self.w_delta, "b_delta": self.b_delta,
        }


class Ss2dLayer:
    """Four independent per-direction selective scans, outputs summed."""

    def __init__(self, e: int, n: int, rng: np.random.Generator):
        self.e = e
        self.n = n
        self.scans = {d: SelectiveScanLayer(e, n, rng) for d in DIRECTIONS}

    def __call__(self, feat: Tensor, compute_order: tuple[ScanDirection, ...] = DIRECTIONS) -> Tensor:
        if feat.data.ndim != 3 or feat.data.shape[2] != self.e:
            raise ShapeError(f"ss2d: feature shape {feat.shape} does not match {self.e} channels")
        h, w, _ = feat.data.shape
        rerolled: dict[ScanDirection, Tensor] = {}
        for d in compute_order:
            rerolled[d] = reroll(self.scans[d](unroll(feat, d)), d, h, w)
        # fixed reduction order keeps f32 output identical for any compute_order
        out = rerolled[DIRECTIONS[0]]
        for d in DIRECTIONS[1:]:
            out = add(out, rerolled[d])
        return out

    def params(self):
        return {d.value: s for d, s in self.scans.items()}


class VssBlock:
    """Two data flows over a shared normalized input.

    Branch 1 is a linear gate; branch 2 is linear -> depthwise 3×3 conv ->
    silu -> four-direction scan with a per-channel feedthrough gain ->
    norm. The gated product is projected by a zero-initialized linear and
    added back to the input, so the block starts as the identity.
    """

    def __init__(self, e: int, n: int, rng: np.random.Generator, conv_k: int = 3):
        self.e = e
        self.norm_in = LayerNorm(e)
        self.lin_gate = Linear(e, e, rng)
        self.lin_in = Linear(e, e, rng)
        self.conv = DepthwiseConv2d(conv_k, e, rng)
        self.ss2d = Ss2dLayer(e, n, rng)
        self.gain = Tensor(np.ones(e), requires_grad=True)
        self.norm_out = LayerNorm(e)
        self.lin_out = Linear(e, e, rng, zero_init=True)

    def __call__(self, feat: Tensor) -> Tensor:
        if feat.data.ndim != 3 or feat.data.shape[2] != self.e:
            raise ShapeError(f"vss: feature shape {feat.shape} does not match {self.e} channels")
        z = self.norm_in(feat)
        g = self.lin_gate(z)
        v = silu(self.conv(self.lin_in(z)))
        s = add(self.ss2d(v), mul(v, self.gain))
        h = self.norm_out(s)
        return add(feat, self.lin_out(mul(h, silu(g))))

    def params(self):
        return {
            "norm_in": self.norm_in, "lin_gate": self.lin_gate, "lin_in": self.lin_in,
            "conv": self.conv, "ss2d": self.ss2d, "gain": self.gain,
            "norm_out": self.norm_out, "lin_out": self.lin_out,
        }
