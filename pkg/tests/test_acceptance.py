"""Release criteria, one test per criterion at its stated tolerance.

Run `pytest tests/test_acceptance.py -s` to see one pass line per
criterion (a failed assert is the fail line). Criterion 6 trains a real
model and takes a few minutes single-threaded; everything else is fast.
"""

import json
import time

import numpy as np

from conftest import fd_directional, perturb_params, rel_err
from serpent import ssm
from serpent.arch import SerpentConfig, SerpentModel, count_flops, count_params
from serpent.datagen import make_dataset
from serpent.harness import (
    DegradationSpec,
    TrainConfig,
    degrade,
    evaluate,
    list_images,
    load_image,
    per_image_rng,
    psnr,
    split_train_val,
    ssim,
    train,
)
from serpent.layers import collect_params
from serpent.serialization import read_checkpoint
from serpent.ss2d import DIRECTIONS, VssBlock, reroll, unroll, unroll_order
from serpent.tensor import Tensor, backward, mul, sum_all


def _ok(n: int, msg: str):
    print(f"\nACCEPTANCE {n} PASS: {msg}")


def _unit_direction(rng, tensors):
    dirs = [rng.standard_normal(t.data.shape) for t in tensors]
    norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
    return [d / norm for d in dirs]


def test_criterion_1_lti_mode_equivalence():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    systems = 0
    worst = 0.0
    for n in (1, 2, 4, 8):
        for length in (1, 4, 16, 64):
            for _ in range(4):
                sys = ssm.LtiSystem(
                    a=-rng.uniform(0.05, 3.0, n), b=rng.standard_normal(n),
                    c=rng.standard_normal(n), delta=float(rng.uniform(0.01, 1.0)),
                ).discretize()
                u = rng.standard_normal(length)
                err = rel_err(ssm.lti_scan_recurrent(sys, u),
                              ssm.lti_scan_convolutional(sys, u), floor=1e-12)
                worst = max(worst, err)
                systems += 1
    elapsed = time.perf_counter() - t0
    assert systems >= 50
    assert worst <= 1e-5
    assert elapsed < 10.0
    _ok(1, f"recurrent == convolutional on {systems} systems, worst rel L∞ {worst:.2e}, {elapsed:.2f} s")


def test_criterion_2_selective_consistency():
    rng = np.random.default_rng(1)
    worst_chunk = 0.0
    for length, e, n in ((256, 8, 4), (64, 4, 2), (7, 3, 5)):
        p = ssm.SelectiveParams.init(e, n, rng)
        u = rng.standard_normal((length, e))
        y_seq = ssm.selective_scan(p, u)
        for chunk in (1, 4, 16, length):
            err = rel_err(y_seq, ssm.selective_scan_chunked(p, u, chunk), floor=1e-12)
            worst_chunk = max(worst_chunk, err)
    assert worst_chunk <= 1e-5

    # zeroed projections + bias-only Δ + constant B/C collapse to LTI
    e, n = 6, 4
    a = -np.tile(np.arange(1.0, n + 1.0), (e, 1))
    b_const, c_const = rng.standard_normal(n), rng.standard_normal(n)
    p0 = ssm.SelectiveParams(
        a=a, w_b=np.zeros((e, n)), w_c=np.zeros((e, n)),
        w_delta=np.zeros(e), b_delta=np.full(e, -1.5), b_b=b_const, b_c=c_const,
    )
    u = rng.standard_normal((128, e))
    y = ssm.selective_scan(p0, u)
    delta = float(np.log1p(np.exp(-1.5)))
    worst_lti = 0.0
    for d in range(e):
        sys = ssm.LtiSystem(a=a[d], b=b_const, c=c_const, delta=delta).discretize()
        worst_lti = max(worst_lti, rel_err(y[:, d], ssm.lti_scan_recurrent(sys, u[:, d]), floor=1e-12))
    assert worst_lti <= 1e-6
    _ok(2, f"chunked worst rel {worst_chunk:.2e} (≤1e-5); LTI reduction worst {worst_lti:.2e} (≤1e-6)")


def test_criterion_3_gradient_suite():
    t0 = time.perf_counter()
    worst = 0.0
    checks = 0

    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        block = VssBlock(4, 2, rng)
        perturb_params(block, rng)
        x = Tensor(rng.standard_normal((4, 4, 4)) * 0.5, requires_grad=True)
        weights = Tensor(rng.standard_normal((4, 4, 4)))

        def value():
            return sum_all(mul(block(x), weights))

        backward(value())
        params = list(collect_params(block).values()) + [x]
        dirs = _unit_direction(rng, params)
        num = fd_directional(lambda: value().item(), params, dirs, h=3e-3)
        ana = sum(float((t.grad * d).sum()) for t, d in zip(params, dirs) if t.grad is not None)
        err = abs(num - ana) / max(abs(num), abs(ana), 1.0)
        worst = max(worst, err)
        checks += 1
        assert err <= 2e-3, f"vss seed {seed}: {err:.2e}"

    for seed, (size, patch) in enumerate([(4, 1), (4, 1), (4, 1), (8, 2), (8, 2),
                                          (8, 2), (16, 4), (16, 4), (16, 4), (16, 4)]):
        rng = np.random.default_rng(200 + seed)
        model = SerpentModel(SerpentConfig(patch_size=patch, embed_dim=32, depth=2, num_scales=2), rng)
        perturb_params(model, rng)
        x = Tensor(rng.random((size, size, 3)), requires_grad=True)
        weights = Tensor(rng.standard_normal((size, size, 3)))

        def value():
            return sum_all(mul(model(x), weights))

        backward(value())
        params = list(model.parameters().values()) + [x]
        dirs = _unit_direction(rng, params)
        num = fd_directional(lambda: value().item(), params, dirs, h=3e-3)
        ana = sum(float((t.grad * d).sum()) for t, d in zip(params, dirs) if t.grad is not None)
        err = abs(num - ana) / max(abs(num), abs(ana), 1.0)
        worst = max(worst, err)
        checks += 1
        assert err <= 2e-3, f"serpent seed {seed} ({size}px, P={patch}): {err:.2e}"

    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    _ok(3, f"{checks} FD checks (10 VSS + 10 full-model seeds), worst rel {worst:.2e}, {elapsed:.1f} s")


def test_criterion_4_architecture_invariants():
    rng = np.random.default_rng(2)
    # (a) shape preservation for all variants, desk scales and paper scales
    for p in (1, 2, 4):
        m = SerpentModel(SerpentConfig(patch_size=p, num_scales=2), rng)
        assert m(Tensor(rng.random((32, 32, 3)))).shape == (32, 32, 3)
    m4 = SerpentModel(SerpentConfig.variant("B", num_scales=4), rng)
    assert m4(Tensor(rng.random((64, 64, 3)))).shape == (64, 64, 3)

    # (b) identity at init, bit-exact
    img = Tensor(rng.random((32, 32, 3)))
    out = SerpentModel(SerpentConfig(num_scales=2), rng)(img)
    assert np.array_equal(out.data, img.data)

    # (c) backbone parameter constancy across P at D=32
    backbones = {
        p: count_params(SerpentModel(SerpentConfig(patch_size=p, embed_dim=32, num_scales=4), rng)).backbone
        for p in (1, 2, 4)
    }
    assert len(set(backbones.values())) == 1

    # (d) unroll/reroll bijection for every direction
    for h, w in ((1, 1), (3, 7), (16, 16), (5, 2)):
        x = Tensor(rng.standard_normal((h, w, 3)))
        for d in DIRECTIONS:
            assert sorted(unroll_order(h, w, d)) == list(range(h * w))
            assert np.array_equal(reroll(unroll(x, d), d, h, w).data, x.data)
    _ok(4, f"shapes, exact identity-at-init, backbone {backbones[1]} params for P∈{{1,2,4}}, bijections")


def test_criterion_5_scaling_reproduction():
    rng = np.random.default_rng(3)
    model = SerpentModel(SerpentConfig(patch_size=1, num_scales=2), rng)
    f1 = count_flops(model, 64, 64)
    f2 = count_flops(model, 128, 64)
    scan_ratio = f2.scan / f1.scan
    attn_ratio = f2.attention_reference / f1.attention_reference
    assert 1.9 <= scan_ratio <= 2.1
    assert 3.8 <= attn_ratio <= 4.2

    ratios = [count_flops(model, r, r).attention_ratio for r in (32, 64, 128, 256)]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    _ok(5, f"scan ×{scan_ratio:.2f} vs attention ×{attn_ratio:.2f} at doubled tokens; "
           f"ratio column {ratios[0]:.2f} -> {ratios[-1]:.2f} monotone in resolution")


def test_criterion_6_desk_restoration(tmp_path):
    data = tmp_path / "data"
    make_dataset(data, 200, size=64, seed=0)
    model = SerpentModel(SerpentConfig(patch_size=4, embed_dim=32, depth=2, num_scales=2),
                         np.random.default_rng(0))
    tcfg = TrainConfig(epochs=20, learning_rate=1e-3, crop=64, seed=0)
    dspec = DegradationSpec(kernel_size=9, noise_sigma=0.05, seed=0)

    t0 = time.perf_counter()
    rows = train(model, data, tcfg, dspec, tmp_path / "out")
    elapsed = time.perf_counter() - t0
    assert elapsed < 30 * 60.0

    paths = list_images(data)
    _, val_idx = split_train_val(paths)
    base_psnr, base_ssim = [], []
    for i in val_idx:
        clean = load_image(paths[i], 3)
        deg = degrade(clean, dspec, per_image_rng(dspec, i))
        base_psnr.append(psnr(deg, clean))
        base_ssim.append(ssim(deg, clean))
    base_psnr, base_ssim = float(np.mean(base_psnr)), float(np.mean(base_ssim))

    best = max(rows, key=lambda r: r.val_psnr)
    gain_psnr = best.val_psnr - base_psnr
    gain_ssim = best.val_ssim - base_ssim
    assert gain_psnr >= 1.0, f"val PSNR gain {gain_psnr:.2f} dB < 1.0"
    assert gain_ssim >= 0.02, f"val SSIM gain {gain_ssim:.4f} < 0.02"
    _ok(6, f"val psnr {best.val_psnr:.2f} dB (degraded {base_psnr:.2f}, +{gain_psnr:.2f}); "
           f"ssim {best.val_ssim:.4f} (+{gain_ssim:.4f}); {elapsed / 60.0:.1f} min")


def test_criterion_7_determinism(tmp_path):
    data = tmp_path / "data"
    make_dataset(data, 8, size=32, seed=9)
    dspec = DegradationSpec(seed=0)
    tcfg = TrainConfig(epochs=2, crop=32, seed=0)

    logs, ckpts, reports = [], [], []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        model = SerpentModel(SerpentConfig(num_scales=2), np.random.default_rng(7))
        train(model, data, tcfg, dspec, out)
        tensors, _ = read_checkpoint(out / "best.ckpt")
        model.load_state(tensors)
        report = evaluate(model, data, dspec)
        logs.append([
            {k: v for k, v in json.loads(line).items() if k != "wall_ms"}
            for line in (out / "metrics.jsonl").read_text().splitlines()
        ])
        ckpts.append(((out / "best.ckpt").read_bytes(), (out / "last.ckpt").read_bytes()))
        r = json.loads(report.to_json())
        r.pop("wall_ms")
        reports.append(r)

    assert logs[0] == logs[1]
    assert ckpts[0][0] == ckpts[1][0]
    assert ckpts[0][1] == ckpts[1][1]
    assert reports[0] == reports[1]
    _ok(7, "two train+eval runs: identical metric logs, byte-identical checkpoints, identical reports")
