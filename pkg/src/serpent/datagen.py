"""Synthetic structured images for desk-scale restoration experiments.

Flat-shaded shapes over smooth gradients: sharp edges that blurring
destroys and flat regions that noise corrupts, so a deblurring model has
something real to recover. Deterministic per (seed, index).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .harness import save_image


def synth_image(rng: np.random.Generator, size: int = 64, channels: int = 3) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    img = np.empty((size, size, channels))
    for ch in range(channels):
        a, b, c = rng.uniform(0.2, 0.8), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)
        img[:, :, ch] = a + b * xx + c * yy

    for _ in range(int(rng.integers(4, 9))):
        color = rng.uniform(0.0, 1.0, size=channels)
        kind = rng.integers(0, 3)
        if kind == 0:  # rectangle
            h = int(rng.integers(size // 8, size // 2))
            w = int(rng.integers(size // 8, size // 2))
            i = int(rng.integers(0, size - h + 1))
            j = int(rng.integers(0, size - w + 1))
            img[i:i + h, j:j + w, :] = color
        elif kind == 1:  # disk
            r = rng.uniform(size / 12, size / 4)
            ci, cj = rng.uniform(0, size, size=2)
            mask = (yy * size - ci) ** 2 + (xx * size - cj) ** 2 <= r * r
            img[mask] = color
        else:  # stripe band
            width = rng.uniform(size / 16, size / 6)
            angle = rng.uniform(0, np.pi)
            offset = rng.uniform(0, size)
            d = (xx * size) * np.cos(angle) + (yy * size) * np.sin(angle) - offset
            img[np.abs(d) < width / 2] = color

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_dataset(out_dir, count: int, size: int = 64, seed: int = 0, channels: int = 3) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        p = out / f"img_{i:04d}.png"
        save_image(p, synth_image(rng, size=size, channels=channels))
        paths.append(p)
    return paths
