"""Command-line entry point.

Exit codes: 0 ok, 1 runtime failure, 2 bad input path/data, 3
config/checkpoint mismatch. Verbosity comes from the SERPENT_VERBOSE
environment variable (0 quiet, 1 normal, 2 debug); everything else is
configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import ssm
from .arch import SerpentModel, count_flops, count_params
from .config import MismatchError, RunConfig, check_echo, describe_keys, load_config
from .harness import (
    DataError,
    degrade,
    evaluate,
    list_images,
    load_image,
    per_image_rng,
    save_image,
    train,
)
from .serialization import CheckpointError, read_checkpoint

log = logging.getLogger("serpent")


def _model_init_rng(seed: int) -> np.random.Generator:
    # separate stream from the training-loop generator
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))


def cmd_train(cfg: RunConfig, resume: bool = False) -> int:
    model = SerpentModel(cfg.model, _model_init_rng(cfg.train.seed))
    rep = count_params(model)
    log.info("training %d-param model on %s -> %s", rep.total, cfg.paths.data_dir, cfg.paths.out_dir)
    rows = train(
        model, cfg.paths.data_dir, cfg.train, cfg.degrade, cfg.paths.out_dir,
        resume=resume,
        log_fn=lambda r: log.info(
            "epoch %d: loss %.5f, val psnr %.2f dB, ssim %.4f (%.0f ms)",
            r.epoch, r.train_loss, r.val_psnr, r.val_ssim, r.wall_ms,
        ),
    )
    if rows:
        best = max(r.val_psnr for r in rows)
        log.info("done: best val psnr %.2f dB; artifacts in %s", best, cfg.paths.out_dir)
    return 0


def cmd_eval(cfg: RunConfig, dump_images: bool = False) -> int:
    ckpt = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else Path(cfg.paths.out_dir) / "best.ckpt"
    if not ckpt.is_file():
        raise DataError(f"checkpoint not found: {ckpt}")
    tensors, meta = read_checkpoint(ckpt)
    check_echo(cfg.model, meta.get("config", {}))
    model = SerpentModel(cfg.model, _model_init_rng(0))
    model.load_state({k.removeprefix("model."): v for k, v in tensors.items() if not k.startswith("opt.")})
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate(
        model, cfg.paths.data_dir, cfg.degrade,
        dump_dir=out / "dumps" if dump_images else None,
    )
    (out / "report.json").write_text(report.to_json() + "\n")
    log.info(
        "eval: psnr %.2f dB (degraded %.2f), ssim %.4f (degraded %.4f) over %d images",
        report.mean_psnr, report.mean_psnr_degraded, report.mean_ssim,
        report.mean_ssim_degraded, len(report.per_image),
    )
    print(report.to_json())
    return 0


def cmd_profile(cfg: RunConfig, resolutions: list[int]) -> int:
    header = f"{'variant':<8}{'P':>3}{'params':>10}{'backbone':>10}"
    for r in resolutions:
        header += f"{f'flops@{r}':>14}{f'attn@{r}':>14}{f'ratio@{r}':>11}"
    print(header)
    for name in ("B", "L", "H"):
        vcfg = dataclasses.replace(cfg.model, patch_size={"B": 4, "L": 2, "H": 1}[name])
        model = SerpentModel(vcfg, _model_init_rng(0))
        rep = count_params(model)
        row = f"{name:<8}{vcfg.patch_size:>3}{rep.total:>10}{rep.backbone:>10}"
        for r in resolutions:
            fl = count_flops(model, r, r)
            row += f"{fl.total:>14}{fl.attention_reference:>14}{fl.attention_ratio:>11.2f}"
        print(row)
    return 0


def cmd_degrade(cfg: RunConfig) -> int:
    out = Path(cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = list_images(cfg.paths.data_dir)
    for i, p in enumerate(paths):
        img = load_image(p, cfg.model.in_channels)
        save_image(out / p.name, degrade(img, cfg.degrade, per_image_rng(cfg.degrade, i)))
    log.info("degraded %d images into %s", len(paths), out)
    return 0


def cmd_bench(cfg: RunConfig, lengths: list[int], chunk_len: int) -> int:
    rng = np.random.default_rng(cfg.train.seed)
    n = 4
    e = 8
    sys_d = ssm.LtiSystem(
        a=-rng.uniform(0.1, 2.0, n), b=rng.standard_normal(n),
        c=rng.standard_normal(n), delta=0.1,
    ).discretize()
    params = ssm.SelectiveParams.init(e, n, rng)
    print(f"{'L':>6}{'lti_rec_ms':>12}{'lti_conv_ms':>13}{'lti_equal':>10}"
          f"{'sel_ms':>10}{'chunk_ms':>10}{'chunk_macs':>12}{'sel_equal':>10}")
    prev_macs = None
    for length in lengths:
        u1 = rng.standard_normal(length)
        t0 = time.perf_counter(); yr = ssm.lti_scan_recurrent(sys_d, u1); t1 = time.perf_counter()
        yc = ssm.lti_scan_convolutional(sys_d, u1); t2 = time.perf_counter()
        lti_eq = np.abs(yr - yc).max() <= 1e-5 * max(np.abs(yr).max(), 1e-12)
        u2 = rng.standard_normal((length, e))
        t3 = time.perf_counter(); ys = ssm.selective_scan(params, u2); t4 = time.perf_counter()
        counter = ssm.OpCounter()
        ych = ssm.selective_scan_chunked(params, u2, min(chunk_len, length), counter)
        t5 = time.perf_counter()
        sel_eq = np.abs(ys - ych).max() <= 1e-5 * max(np.abs(ys).max(), 1e-12)
        ratio = "" if prev_macs is None else f"  (x{counter.macs / prev_macs:.2f})"
        prev_macs = counter.macs
        print(f"{length:>6}{(t1-t0)*1e3:>12.2f}{(t2-t1)*1e3:>13.2f}{str(lti_eq):>10}"
              f"{(t4-t3)*1e3:>10.2f}{(t5-t4)*1e3:>10.2f}{counter.macs:>12}{str(sel_eq):>10}{ratio}")
    return 0


def _add_common(sub):
    sub.add_argument("-c", "--config", default=None, help="TOML config file")
    sub.add_argument("overrides", nargs="*", metavar="key=value",
                     help="dotted config overrides, e.g. train.epochs=5")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="serpent",
        description="Selective state space image restoration at desk scale.",
        epilog=describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="train a model; writes checkpoints + metrics.jsonl")
    _add_common(p)
    p.add_argument("--resume", action="store_true", help="continue from out_dir/last.ckpt")

    p = subs.add_parser("eval", help="evaluate a checkpoint; writes report.json")
    _add_common(p)
    p.add_argument("--dump-images", action="store_true",
                   help="also write input|output|target PNG strips")

    p = subs.add_parser("profile", help="analytic params/FLOPs table for variants B/L/H")
    _add_common(p)
    p.add_argument("--resolutions", default="64,128",
                   help="comma-separated square resolutions (default 64,128)")

    p = subs.add_parser("degrade", help="write degraded copies of a directory of PNGs")
    _add_common(p)

    p = subs.add_parser("bench", help="timing/op-count table across lengths and scan modes")
    _add_common(p)
    p.add_argument("--lengths", default="1,64,128,256,512",
                   help="comma-separated sequence lengths (default 1,64,128,256,512)")
    p.add_argument("--chunk", type=int, default=16, help="chunk length for the chunked scan")
    return parser


def main(argv=None) -> int:
    verbosity = os.environ.get("SERPENT_VERBOSE", "1")
    level = {"0": logging.WARNING, "1": logging.INFO, "2": logging.DEBUG}.get(verbosity, logging.INFO)
    logging.basicConfig(level=level, format="%(message)s")

    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(cfg, dump_images=args.dump_images)
        if args.command == "profile":
            res = [int(r) for r in args.resolutions.split(",") if r]
            return cmd_profile(cfg, res)
        if args.command == "degrade":
            return cmd_degrade(cfg)
        if args.command == "bench":
            lengths = [int(x) for x in args.lengths.split(",") if x]
            return cmd_bench(cfg, lengths, args.chunk)
        raise AssertionError(f"unhandled command {args.command}")
    except MismatchError as exc:
        log.error("mismatch: %s", exc)
        return 3
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        log.error("bad input: %s", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        log.error("error: %s", exc)
        if level == logging.DEBUG:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
