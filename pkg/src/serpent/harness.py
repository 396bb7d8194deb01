"""Gaussian-deblurring harness: degradation synthesis, metrics, training, eval.

Degradations are seeded per image from (spec.seed, image index) so results
never depend on iteration order. Training is strictly serial and seeded;
two runs with the same seeds produce identical metric rows (wall-clock
fields aside) and bit-identical checkpoints.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import serialization
from .arch import SerpentModel
from .tensor import Tensor, abs_, backward, mean_all, sub


class DataError(ValueError):
    """Bad input: missing paths, empty/undecodable datasets, invalid values."""


class TrainingError(RuntimeError):
    """Training diverged or was asked to do something impossible."""


VAL_FRACTION = 0.1  # deterministic last 10% of sorted filenames


# ---------------------------------------------------------------------------
# degradation

@dataclass(frozen=True)
class DegradationSpec:
    kernel_size: int = 9
    blur_sigma: float = 0.0  # 0 means kernel_size / 6
    noise_sigma: float = 0.05
    seed: int = 0
    clamp: bool = True  # unclamped variant kept for ablation

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise DataError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.noise_sigma < 0:
            raise DataError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.blur_sigma < 0:
            raise DataError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.blur_sigma == 0:
            object.__setattr__(self, "blur_sigma", self.kernel_size / 6.0)


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized isotropic Gaussian taps on a size×size grid; size must be odd."""
    if size < 1 or size % 2 == 0:
        raise DataError(f"gaussian_kernel: size must be odd and positive, got {size}")
    if not sigma > 0:
        raise DataError(f"gaussian_kernel: sigma must be positive, got {sigma}")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2.0 * sigma * sigma))
    return k / k.sum()


def blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Reflect-padded 2-D convolution applied per channel."""
    k = kernel.shape[0]
    r = k // 2
    h, w, c = img.shape
    padded = np.pad(img.astype(np.float64), ((r, r), (r, r), (0, 0)), mode="reflect") if r else img.astype(np.float64)
    out = np.zeros((h, w, c), dtype=np.float64)
    for a in range(k):
        for b in range(k):
            out += kernel[a, b] * padded[a:a + h, b:b + w, :]
    return out


def per_image_rng(spec: DegradationSpec, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(index,)))


def degrade(img: np.ndarray, spec: DegradationSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Blur + additive Gaussian noise (+ clamp to [0, 1] unless disabled)."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    out = blur(img, gaussian_kernel(spec.kernel_size, spec.blur_sigma))
    if spec.noise_sigma > 0:
        out = out + rng.normal(0.0, spec.noise_sigma, size=out.shape)
    if spec.clamp:
        out = np.clip(out, 0.0, 1.0)
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# metrics

def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10·log10(1/MSE) on a [0, 1] scale, capped at 100 dB."""
    if a.shape != b.shape:
        raise DataError(f"psnr: shapes differ, {a.shape} vs {b.shape}")
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    if mse < 1e-10:
        return 100.0
    return min(100.0, 10.0 * np.log10(1.0 / mse))


def _window_means(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, win.shape)
    return np.tensordot(view, win, axes=((2, 3), (0, 1)))


def ssim(a: np.ndarray, b: np.ndarray, win_size: int = 11, win_sigma: float = 1.5) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over channels.

    C1 = 0.01², C2 = 0.03² on the [0, 1] intensity scale; statistics are
    taken over valid window positions only.
    """
    if a.shape != b.shape:
        raise DataError(f"ssim: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w, c = a.shape
    if h < win_size or w < win_size:
        raise DataError(f"ssim: image {h}×{w} smaller than the {win_size}×{win_size} window")
    win = gaussian_kernel(win_size, win_sigma)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for ch in range(c):
        x = a[:, :, ch].astype(np.float64)
        y = b[:, :, ch].astype(np.float64)
        mx = _window_means(x, win)
        my = _window_means(y, win)
        sxx = _window_means(x * x, win) - mx * mx
        syy = _window_means(y * y, win) - my * my
        sxy = _window_means(x * y, win) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# dataset

def list_images(data_dir) -> list[Path]:
    d = Path(data_dir)
    if not d.is_dir():
        raise DataError(f"dataset directory not found: {d}")
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise DataError(f"no .png images in {d}")
    return paths


def load_image(path, channels: int = 3) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB" if channels == 3 else "L")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image(path, arr: np.ndarray):
    arr = np.clip(arr, 0.0, 1.0)
    if arr.shape[-1] == 1:
        arr = arr[:, :, 0]
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8)).save(path)


def split_train_val(paths: list[Path]) -> tuple[list[int], list[int]]:
    """Deterministic split: last 10% of sorted names validate (min 1).

    A single-image dataset serves as both sides (the overfit use case).
    """
    n = len(paths)
    if n == 1:
        return [0], [0]
    n_val = max(1, int(n * VAL_FRACTION))
    return list(range(n - n_val)), list(range(n - n_val, n))


# ---------------------------------------------------------------------------
# optimizer

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 5e-4
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "l1"
    crop: int = 64
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.learning_rate < 0 or self.batch_size < 1 or self.crop < 1:
            raise DataError(f"invalid training config: {self}")
        if self.loss != "l1":
            raise DataError(f"unsupported loss {self.loss!r} (only 'l1' is implemented)")


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / b1c) / (np.sqrt(self.v[k] / b2c) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state(self, tensors: dict[str, np.ndarray], t: int):
        self.t = t
        for k in self.m:
            self.m[k] = tensors[f"m.{k}"].astype(np.float32).reshape(self.m[k].shape)
            self.v[k] = tensors[f"v.{k}"].astype(np.float32).reshape(self.v[k].shape)


# ---------------------------------------------------------------------------
# training loop

@dataclass
class EpochRow:
    epoch: int
    train_loss: float
    val_psnr: float
    val_ssim: float
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _augment(x: np.ndarray, y: np.ndarray, crop: int, rng: np.random.Generator,
             enabled: bool = True):
    h, w, _ = x.shape
    if crop > min(h, w):
        raise DataError(f"crop {crop} exceeds image size {h}×{w}")
    if not enabled:
        return x[:crop, :crop], y[:crop, :crop]
    i = int(rng.integers(0, h - crop + 1))
    j = int(rng.integers(0, w - crop + 1))
    x = x[i:i + crop, j:j + crop]
    y = y[i:i + crop, j:j + crop]
    if rng.random() < 0.5:
        x, y = x[:, ::-1], y[:, ::-1]
    if rng.random() < 0.5:
        x, y = x[::-1, :], y[::-1, :]
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def _rng_state_json(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True)


def _restore_rng(state_json: str) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(state_json)
    return rng


def train(
    model: SerpentModel,
    data_dir,
    tcfg: TrainConfig,
    dspec: DegradationSpec,
    out_dir,
    resume: bool = False,
    log_fn=None,
) -> list[EpochRow]:
    """Train to deblur; returns per-epoch rows, writes metrics.jsonl + checkpoints.

    best.ckpt holds the best-validation-PSNR weights plus a config echo;
    last.ckpt additionally carries optimizer moments and RNG state so a
    resumed run continues the exact trajectory of an uninterrupted one.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = list_images(data_dir)
    clean = [load_image(p, model.cfg.in_channels) for p in paths]
    degraded = [degrade(img, dspec, per_image_rng(dspec, i)) for i, img in enumerate(clean)]
    train_idx, val_idx = split_train_val(paths)

    opt = Adam(model.parameters(), tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.adam_eps)
    rng = np.random.default_rng(tcfg.seed)
    start_epoch = 0
    best_psnr = -np.inf
    rows: list[EpochRow] = []

    last_path = out / "last.ckpt"
    if resume:
        if not last_path.exists():
            raise DataError(f"resume requested but {last_path} does not exist")
        tensors, meta = serialization.read_checkpoint(last_path)
        model.load_state({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
        opt.load_state({k[4:]: v for k, v in tensors.items() if k.startswith("opt.")}, meta["adam_t"])
        rng = _restore_rng(meta["rng_state"])
        start_epoch = meta["epoch"] + 1
        best_psnr = meta["best_psnr"]

    log_path = out / "metrics.jsonl"
    mode = "a" if resume else "w"
    with open(log_path, mode) as log:
        for epoch in range(start_epoch, tcfg.epochs):
            t0 = time.perf_counter()
            order = rng.permutation(len(train_idx))
            losses = []
            pending = 0
            opt.zero_grad()
            for pos in order:
                i = train_idx[pos]
                x, y = _augment(degraded[i], clean[i], tcfg.crop, rng, enabled=tcfg.augment)
                pred = model(Tensor(x))
                loss = mean_all(abs_(sub(pred, Tensor(y))))
                lv = loss.item()
                if not np.isfinite(lv):
                    raise TrainingError(f"non-finite loss {lv} at epoch {epoch}, image {paths[i].name}")
                backward(loss)
                losses.append(lv)
                pending += 1
                if pending == tcfg.batch_size:
                    opt.step()
                    opt.zero_grad()
                    pending = 0
            if pending:
                opt.step()
                opt.zero_grad()

            val_psnr, val_ssim = _validate(model, degraded, clean, val_idx)
            row = EpochRow(
                epoch=epoch,
                train_loss=float(np.mean(losses)) if losses else 0.0,
                val_psnr=val_psnr,
                val_ssim=val_ssim,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
            rows.append(row)
            log.write(row.to_json() + "\n")
            log.flush()
            if log_fn is not None:
                log_fn(row)

            if val_psnr > best_psnr:
                best_psnr = val_psnr
                serialization.write_checkpoint(
                    out / "best.ckpt",
                    model.state(),
                    meta={"config": model.config_echo(), "epoch": epoch, "val_psnr": val_psnr},
                )
            state = {f"model.{k}": v for k, v in model.state().items()}
            state.update({f"opt.{k}": v for k, v in opt.state().items()})
            serialization.write_checkpoint(
                last_path,
                state,
                meta={
                    "config": model.config_echo(),
                    "epoch": epoch,
                    "adam_t": opt.t,
                    "rng_state": _rng_state_json(rng),
                    "best_psnr": best_psnr,
                },
            )
    return rows


def _validate(model, degraded, clean, val_idx) -> tuple[float, float]:
    ps, ss = [], []
    for i in val_idx:
        pred = np.clip(model(Tensor(degraded[i])).data, 0.0, 1.0)
        ps.append(psnr(pred, clean[i]))
        ss.append(ssim(pred, clean[i]))
    return float(np.mean(ps)), float(np.mean(ss))


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    per_image: list[dict]
    mean_psnr: float
    mean_ssim: float
    mean_psnr_degraded: float
    mean_ssim_degraded: float
    params: int
    flops: int
    wall_ms: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def evaluate(
    model: SerpentModel,
    data_dir,
    dspec: DegradationSpec,
    dump_dir=None,
) -> EvalReport:
    """Deterministic full-image evaluation with per-image degradation seeds."""
    from .arch import count_flops, count_params

    paths = list_images(data_dir)
    t0 = time.perf_counter()
    rows = []
    for i, p in enumerate(paths):
        target = load_image(p, model.cfg.in_channels)
        deg = degrade(target, dspec, per_image_rng(dspec, i))
        pred = np.clip(model(Tensor(deg)).data, 0.0, 1.0)
        rows.append({
            "name": p.name,
            "psnr": psnr(pred, target),
            "ssim": ssim(pred, target),
            "psnr_degraded": psnr(deg, target),
            "ssim_degraded": ssim(deg, target),
        })
        if dump_dir is not None:
            Path(dump_dir).mkdir(parents=True, exist_ok=True)
            save_image(Path(dump_dir) / p.name, np.concatenate([deg, pred, target], axis=1))
    h, w, _ = load_image(paths[0], model.cfg.in_channels).shape
    return EvalReport(
        per_image=rows,
        mean_psnr=float(np.mean([r["psnr"] for r in rows])),
        mean_ssim=float(np.mean([r["ssim"] for r in rows])),
        mean_psnr_degraded=float(np.mean([r["psnr_degraded"] for r in rows])),
        mean_ssim_degraded=float(np.mean([r["ssim_degraded"] for r in rows])),
        params=count_params(model).total,
        flops=count_flops(model, h, w).total,
        wall_ms=(time.perf_counter() - t0) * 1e3,
    )
