"""The hierarchical U-shaped restoration network.

A patchifier embeds P×P patches to width D; encoder stages alternate a
stack of VSS blocks with 2×2 patch merging (channels double); a bottleneck
stage sits at the coarsest scale; decoder stages mirror with patch
expanding and concat+project skip fusion. A zero-initialized head maps
tokens back to pixels and the result is added to the input (global
residual), so a freshly built model is the identity map.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import Linear, collect_params
from .ss2d import VssBlock
from .tensor import (
    Tensor,
    ShapeError,
    add,
    concat_last,
    patches_to_space,
    space_to_patches,
)


class ConfigError(ValueError):
    """Invalid configuration or configuration/input mismatch."""


VARIANTS = {"B": 4, "L": 2, "H": 1}  # variant name -> patch size, D fixed


@dataclass(frozen=True)
class SerpentConfig:
    patch_size: int = 4
    embed_dim: int = 32
    depth: int = 2
    num_scales: int = 4
    state_ratio: float = 1.0 / 6.0
    in_channels: int = 3

    def __post_init__(self):
        if self.patch_size not in (1, 2, 4):
            raise ConfigError(f"patch_size must be 1, 2 or 4, got {self.patch_size}")
        if self.embed_dim < 1 or self.depth < 0 or self.num_scales < 1 or self.in_channels < 1:
            raise ConfigError(f"invalid config: {self}")
        if not 0 < self.state_ratio <= 1:
            raise ConfigError(f"state_ratio must be in (0, 1], got {self.state_ratio}")

    @classmethod
    def variant(cls, name: str, **overrides) -> "SerpentConfig":
        if name not in VARIANTS:
            raise ConfigError(f"unknown variant {name!r}, expected one of {sorted(VARIANTS)}")
        return cls(patch_size=VARIANTS[name], **overrides)

    def channels_at(self, scale: int) -> int:
        return self.embed_dim * (2 ** scale)

    def state_dim_at(self, scale: int) -> int:
        # nearest integer (ties up) with floor 1
        return max(1, int(math.floor(self.channels_at(scale) * self.state_ratio + 0.5)))

    @property
    def spatial_divisor(self) -> int:
        return self.patch_size * (2 ** (self.num_scales - 1))

    def check_input(self, h: int, w: int):
        d = self.spatial_divisor
        if h % d or w % d:
            raise ConfigError(
                f"input {h}×{w} not divisible by patch_size·2^(num_scales−1) = "
                f"{self.patch_size}·{2 ** (self.num_scales - 1)} = {d}"
            )


class PatchEmbed:
    def __init__(self, cfg: SerpentConfig, rng: np.random.Generator):
        self.p = cfg.patch_size
        self.lin = Linear(self.p * self.p * cfg.in_channels, cfg.embed_dim, rng)

    def __call__(self, img: Tensor) -> Tensor:
        return self.lin(space_to_patches(img, self.p))

    def params(self):
        return {"lin": self.lin}


class PatchMerge:
    """2×2 neighborhood concat (4c channels) then linear down to 2c."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.lin = Linear(4 * c, 2 * c, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h, w, _ = x.data.shape
        if h % 2 or w % 2:
            raise ShapeError(f"patch_merge: spatial dims {h}×{w} must be even")
        return self.lin(space_to_patches(x, 2))

    def params(self):
        return {"lin": self.lin}


class PatchExpand:
    """Linear c -> 2c, then split channels into the four 2×2 positions (c/2 each)."""

    def __init__(self, c: int, rng: np.random.Generator):
        if c % 2:
            raise ShapeError(f"patch_expand: channel count {c} must be even")
        self.lin = Linear(c, 2 * c, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return patches_to_space(self.lin(x), 2)

    def params(self):
        return {"lin": self.lin}


class SerpentBlock:
    """A stack of n VSS blocks at one scale; n = 0 is the identity."""

    def __init__(self, e: int, n_state: int, depth: int, rng: np.random.Generator):
        self.blocks = [VssBlock(e, n_state, rng) for _ in range(depth)]

    def __call__(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x

    def params(self):
        return {str(i): b for i, b in enumerate(self.blocks)}


class SerpentModel:
    def __init__(self, cfg: SerpentConfig, rng: np.random.Generator | None = None,
                 global_residual: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.global_residual = global_residual
        s_top = cfg.num_scales - 1

        self.patch_embed = PatchEmbed(cfg, rng)
        self.down_blocks = []
        self.merges = []
        for s in range(s_top):
            c = cfg.channels_at(s)
            self.down_blocks.append(SerpentBlock(c, cfg.state_dim_at(s), cfg.depth, rng))
            self.merges.append(PatchMerge(c, rng))
        self.bottleneck = SerpentBlock(cfg.channels_at(s_top), cfg.state_dim_at(s_top), cfg.depth, rng)
        self.expands = []
        self.fuses = []
        self.up_blocks = []
        for s in reversed(range(s_top)):
            c = cfg.channels_at(s)
            self.expands.append(PatchExpand(2 * c, rng))
            self.fuses.append(Linear(2 * c, c, rng))
            self.up_blocks.append(SerpentBlock(c, cfg.state_dim_at(s), cfg.depth, rng))
        self.head = Linear(cfg.embed_dim, cfg.patch_size ** 2 * cfg.in_channels, rng, zero_init=True)

    def forward(self, img: Tensor, skip_scale: float | None = None) -> Tensor:
        """Restore an H×W×C image; shape is preserved.

        skip_scale is a diagnostic hook (None = normal wiring; 0.0 severs
        the skip connections to probe that they matter).
        """
        if img.data.ndim != 3 or img.data.shape[2] != self.cfg.in_channels:
            raise ConfigError(
                f"input shape {img.shape} does not match in_channels={self.cfg.in_channels}"
            )
        h, w, _ = img.data.shape
        self.cfg.check_input(h, w)

        t = self.patch_embed(img)
        skips = []
        for block, merge in zip(self.down_blocks, self.merges):
            t = block(t)
            skips.append(t)
            t = merge(t)
        t = self.bottleneck(t)
        for expand, fuse, block, skip in zip(self.expands, self.fuses, self.up_blocks, reversed(skips)):
            t = expand(t)
            if skip_scale is not None:
                skip = Tensor(skip.data * skip_scale)
            t = fuse(concat_last(t, skip))
            t = block(t)
        out = patches_to_space(self.head(t), self.cfg.patch_size)
        if self.global_residual:
            out = add(out, img)
        return out

    __call__ = forward

    def params(self):
        tree = {"patch_embed": self.patch_embed}
        for i, b in enumerate(self.down_blocks):
            tree[f"down.{i}.block"] = b
            tree[f"down.{i}.merge"] = self.merges[i]
        tree["bottleneck"] = self.bottleneck
        for i, b in enumerate(self.up_blocks):
            tree[f"up.{i}.expand"] = self.expands[i]
            tree[f"up.{i}.fuse"] = self.fuses[i]
            tree[f"up.{i}.block"] = b
        tree["head"] = self.head
        return tree

    def parameters(self) -> dict[str, Tensor]:
        return collect_params(self)

    def backbone_parameters(self) -> dict[str, Tensor]:
        """Everything except the patch embedding and the output head."""
        return {
            k: v for k, v in self.parameters().items()
            if not (k.startswith("patch_embed.") or k.startswith("head."))
        }

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]):
        own = self.parameters()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise ConfigError(f"state mismatch: missing {missing[:3]}, unexpected {extra[:3]}")
        for k, t in own.items():
            arr = np.asarray(state[k], dtype=np.float32)
            if arr.shape != t.data.shape:
                raise ConfigError(f"state tensor {k}: shape {arr.shape}, expected {t.data.shape}")
            t.data = arr.copy()

    def config_echo(self) -> dict:
        return asdict(self.cfg)


# ---------------------------------------------------------------------------
# accounting

@dataclass
class ParamCountReport:
    total: int
    backbone: int
    by_module: dict[str, int] = field(default_factory=dict)


def count_params(model: SerpentModel) -> ParamCountReport:
    by_module: dict[str, int] = {}
    total = 0
    for name, t in model.parameters().items():
        top = name.split(".")[0] if not name.startswith(("down", "up")) else ".".join(name.split(".")[:3])
        by_module[top] = by_module.get(top, 0) + t.size
        total += t.size
    backbone = sum(t.size for t in model.backbone_parameters().values())
    return ParamCountReport(total=total, backbone=backbone, by_module=by_module)


@dataclass
class FlopsReport:
    """Analytic multiply-accumulate counts; no hardware timing involved."""

    total: int
    linear: int
    dwconv: int
    scan: int
    tokens: int
    attention_reference: int

    @property
    def attention_ratio(self) -> float:
        return self.attention_reference / self.total


def scan_macs(length: int, e: int, n: int) -> int:
    """MACs for one directional selective scan (matches the runtime counter)."""
    return 12 * length * e * n + 2 * length * e


def attention_reference_flops(length: int, e: int) -> int:
    """Global self-attention reference: 4·L²·E plus the four L·E² projections."""
    return 4 * length * length * e + 4 * length * e * e


def count_flops(model: SerpentModel, h: int, w: int) -> FlopsReport:
    cfg = model.cfg
    cfg.check_input(h, w)
    lin = 0
    dw = 0
    scan = 0

    def vss_stage(tokens: int, c: int, n_state: int, depth: int):
        nonlocal lin, dw, scan
        for _ in range(depth):
            lin += 3 * tokens * c * c           # gate, in, out projections
            dw += tokens * 9 * c                # 3×3 depthwise
            scan += 4 * scan_macs(tokens, c, n_state)

    hp, wp = h // cfg.patch_size, w // cfg.patch_size
    lin += (hp * wp) * (cfg.patch_size ** 2 * cfg.in_channels) * cfg.embed_dim
    s_top = cfg.num_scales - 1
    for s in range(s_top):
        tokens = (hp >> s) * (wp >> s)
        c = cfg.channels_at(s)
        vss_stage(tokens, c, cfg.state_dim_at(s), cfg.depth)
        lin += (tokens // 4) * (4 * c) * (2 * c)        # merge
    tokens_b = (hp >> s_top) * (wp >> s_top)
    vss_stage(tokens_b, cfg.channels_at(s_top), cfg.state_dim_at(s_top), cfg.depth)
    for s in reversed(range(s_top)):
        c = cfg.channels_at(s)
        tokens = (hp >> s) * (wp >> s)
        lin += (tokens // 4) * (2 * c) * (4 * c)        # expand
        lin += tokens * (2 * c) * c                     # skip fuse
        vss_stage(tokens, c, cfg.state_dim_at(s), cfg.depth)
    lin += (hp * wp) * cfg.embed_dim * (cfg.patch_size ** 2 * cfg.in_channels)

    return FlopsReport(
        total=lin + dw + scan,
        linear=lin,
        dwconv=dw,
        scan=scan,
        tokens=hp * wp,
        attention_reference=attention_reference_flops(hp * wp, cfg.embed_dim),
    )
