"""End-to-end desk experiment: synth data -> train -> evaluate.

Equivalent to the CLI pipeline in the README, kept as a single runnable
script for quick iteration on hyperparameters.
"""

import argparse
import time
from pathlib import Path

import numpy as np

from serpent.arch import SerpentConfig, SerpentModel, count_params
from serpent.datagen import make_dataset
from serpent.harness import DegradationSpec, TrainConfig, evaluate, train
from serpent.serialization import read_checkpoint


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="runs/desk")
    ap.add_argument("--count", type=int, default=200)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--patch-size", type=int, default=4)
    ap.add_argument("--num-scales", type=int, default=2)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    if not data.is_dir():
        make_dataset(data, args.count, size=args.size, seed=args.seed)
        print(f"generated {args.count} images in {data}")

    cfg = SerpentConfig(patch_size=args.patch_size, num_scales=args.num_scales)
    tcfg = TrainConfig(epochs=args.epochs, crop=min(64, args.size), seed=args.seed)
    dspec = DegradationSpec(seed=args.seed)
    model = SerpentModel(cfg, np.random.default_rng(args.seed))
    print(f"model: {count_params(model).total} params")

    t0 = time.time()
    rows = train(model, data, tcfg, dspec, work / "out",
                 log_fn=lambda r: print(f"epoch {r.epoch}: loss {r.train_loss:.5f}, "
                                        f"val psnr {r.val_psnr:.2f} dB, ssim {r.val_ssim:.4f}"))
    print(f"trained {len(rows)} epochs in {time.time() - t0:.0f} s")

    tensors, meta = read_checkpoint(work / "out" / "best.ckpt")
    model.load_state(tensors)
    report = evaluate(model, data, dspec)
    gain_psnr = report.mean_psnr - report.mean_psnr_degraded
    gain_ssim = report.mean_ssim - report.mean_ssim_degraded
    print(f"eval: psnr {report.mean_psnr:.2f} dB (+{gain_psnr:.2f} over degraded), "
          f"ssim {report.mean_ssim:.4f} (+{gain_ssim:.4f})")


if __name__ == "__main__":
    main()
