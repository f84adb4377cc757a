"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The desk-scale training runs (criteria 5, 6, 8, 9) take roughly twenty
minutes on a single CPU core and are marked ``slow``.
"""
import csv
import io
import math
import time

import numpy as np
import pytest
import torch

from cycmunet.checkpoint import load_checkpoint
from cycmunet.cli import main as cli_main
from cycmunet.config import ModelConfig, Schedule, TrainOptions
from cycmunet.core_ops import deform_conv2d
from cycmunet.data import degrade_bicubic, make_sample, synth_triplets
from cycmunet.fti import FTINet
from cycmunet.losses import charbonnier, total_loss
from cycmunet.metrics import interp_error, ssim
from cycmunet.model import CycMuNet, count_parameters
from cycmunet.projection import FeatureTriplet, MutualCycle, UpProjectionUnit
from cycmunet.trainer import bicubic_average_baseline, evaluate, evaluate_predictions, train

from oracles import (bicubic_down_ref, deform_conv_ref, finite_difference, ie_ref, max_relative_error, ssim_ref,
                     to_uint8_ref)

CASES = 20


# ---------------------------------------------------------------------------
# 1. primitive oracles

def test_criterion_1_primitive_oracles(criterion):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = {"deform": 0.0, "bicubic": 0.0, "ssim": 0.0, "ie": 0.0}
    for _ in range(CASES):
        c, o, g = 2, 2, int(rng.integers(1, 3))
        h, w = (int(v) for v in rng.integers(3, 7, size=2))
        x = rng.normal(size=(c, h, w))
        wt = rng.normal(size=(o, c, 3, 3)) / 6
        b = rng.normal(size=o)
        off = rng.uniform(-2, 2, size=(2 * 9 * g, h, w))
        mask = rng.uniform(size=(9 * g, h, w))
        got = deform_conv2d(*(torch.tensor(a, dtype=torch.float32)[None] for a in (x,)),
                            torch.tensor(wt, dtype=torch.float32), torch.tensor(b, dtype=torch.float32),
                            torch.tensor(off, dtype=torch.float32)[None], torch.tensor(mask, dtype=torch.float32)[None],
                            padding=1)[0].double().numpy()
        worst["deform"] = max(worst["deform"], np.abs(got - deform_conv_ref(x, wt, b, off, mask)).max())

        scale = int(rng.choice([2, 4]))
        img = rng.uniform(size=(8 * scale // 2, 8 * scale // 2))
        got = degrade_bicubic(img[None], scale)[0]
        worst["bicubic"] = max(worst["bicubic"], np.abs(got - bicubic_down_ref(img, scale)).max())

        a, b2 = rng.uniform(size=(3, 16, 16)), rng.uniform(size=(3, 16, 16))
        qa, qb = to_uint8_ref(a), to_uint8_ref(b2)
        lum = lambda q: 0.299 * q[0] + 0.587 * q[1] + 0.114 * q[2]
        worst["ssim"] = max(worst["ssim"], abs(ssim(a, b2) - ssim_ref(lum(qa), lum(qb))))
        worst["ie"] = max(worst["ie"], abs(interp_error(a, b2) - ie_ref(a, b2)))
    limits = {"deform": 1e-5, "bicubic": 1e-5, "ssim": 1e-6, "ie": 1e-9}
    elapsed = time.perf_counter() - t0
    ok = all(worst[k] < limits[k] for k in limits) and elapsed < 60
    detail = ", ".join(f"{k} {worst[k]:.2e}<{limits[k]:.0e}" for k in limits)
    assert criterion(1, ok, f"{CASES} cases each; {detail}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. gradient suite

def _randomize_offset_heads(est, seed=0, std=0.3):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for h in list(est.head_fwd) + list(est.head_bwd) + [est.mod_fwd, est.mod_bwd]:
            h.weight.copy_(torch.randn(h.weight.shape, generator=gen) * std / h.weight[0].numel() ** 0.5)
            h.bias.copy_(torch.randn(h.bias.shape, generator=gen) * std)


def _grad_errors(build, inputs):
    """(double error, single error) of analytic vs central-difference gradients w.r.t. ``inputs``.

    ``build(dtype)`` returns a scalar-valued function of the input tensors.
    """
    fn64 = build(torch.float64)
    leaves = [t.detach().clone().requires_grad_() for t in inputs]
    fn64(*leaves).backward()
    numeric = finite_difference(lambda: fn64(*inputs), inputs, step=1e-4)
    err64 = max_relative_error([t.grad for t in leaves], numeric)
    fn32 = build(torch.float32)
    leaves32 = [t.detach().float().requires_grad_() for t in inputs]
    fn32(*leaves32).backward()
    err32 = max_relative_error([t.grad.double() for t in leaves32], numeric)
    return err64, err32


def test_criterion_2_gradient_suite(criterion):
    t0 = time.perf_counter()
    gen = torch.Generator().manual_seed(7)
    results = {}

    diff = torch.randn(4, 4, generator=gen, dtype=torch.float64)
    results["charbonnier"] = _grad_errors(lambda dt: (lambda d: charbonnier(d)), [diff])

    x = torch.randn(1, 2, 5, 5, generator=gen, dtype=torch.float64)
    wt = torch.randn(2, 2, 3, 3, generator=gen, dtype=torch.float64)
    mag = torch.rand(1, 18, 5, 5, generator=gen, dtype=torch.float64) * 0.6 + 0.2
    off = mag * torch.where(torch.rand(1, 18, 5, 5, generator=gen) < 0.5, -1.0, 1.0).double()
    mask = torch.rand(1, 9, 5, 5, generator=gen, dtype=torch.float64)
    results["deformable"] = _grad_errors(
        lambda dt: (lambda a, w_, o_, m_: deform_conv2d(a, w_, None, o_, m_, padding=1).sum()), [x, wt, off, mask])

    torch.manual_seed(0)
    fti = FTINet(ModelConfig(base_channels=8, deform_groups=2, pyramid_levels=2))
    _randomize_offset_heads(fti.offsets)
    f0, f1 = torch.randn(2, 1, 8, 16, 16, generator=gen, dtype=torch.float64)
    proj = torch.randn(1, 8, 16, 16, generator=gen, dtype=torch.float64)
    results["fti_16x16"] = _grad_errors(
        lambda dt: (lambda a, b: (fti.to(dt)(a, b) * proj.to(dt)).sum()), [f0, f1])

    torch.manual_seed(0)
    cycle = MutualCycle(4, 2)
    l0 = list(torch.randn(3, 1, 4, 8, 8, generator=gen, dtype=torch.float64))
    weights = torch.randn(2, 3, 1, 4, 16, 16, generator=gen, dtype=torch.float64)

    def cycle_fn(dt):
        net = cycle.to(dt)

        def fn(*frames):
            hr, _, _ = net(FeatureTriplet(*frames))
            return sum((f * weights[m, i].to(dt)).sum() for m, rep in enumerate(hr) for i, f in enumerate(rep.frames))
        return fn
    results["cycle_2unit_8x8"] = _grad_errors(cycle_fn, l0)

    elapsed = time.perf_counter() - t0
    ok = all(e64 < 1e-4 and e32 < 1e-3 for e64, e32 in results.values()) and elapsed < 300
    detail = ", ".join(f"{k} {e64:.1e}/{e32:.1e}" for k, (e64, e32) in results.items())
    assert criterion(2, ok, f"double/single rel. error: {detail}; {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. projection identities

def _identities_hold(m, seed):
    torch.manual_seed(seed)
    cycle = MutualCycle(4, m)
    gen = torch.Generator().manual_seed(seed)
    l0 = FeatureTriplet(*torch.randn(3, 1, 4, 8, 8, generator=gen))
    same = lambda a, b: all(torch.equal(x, y) for x, y in zip(a.frames, b.frames))
    with torch.no_grad():
        _, lr_reps, trace = cycle(l0)
        for upu, rec, l_in in zip(cycle.ups, trace.upu, lr_reps):
            if not (same(rec.e, upu.down(rec.u).minus(l_in)) and same(rec.h, upu.up1(rec.e).plus(rec.u))):
                return False
        for dpu, rec, up_rec in zip(cycle.downs, trace.dpu, trace.upu):
            if not (same(rec.e, dpu.up(rec.d).minus(up_rec.h)) and same(rec.l, dpu.down1(rec.e).plus(rec.d))):
                return False
    return len(trace.upu) == m and len(trace.dpu) == m - 1


def _handcrafted_inverse():
    upu = UpProjectionUnit(1)
    with torch.no_grad():
        for p in upu.parameters():
            p.zero_()
        upu.up0.proj.weight.fill_(1.0)
        upu.down.proj.weight[0, 0, 1, 1] = 1.0
        upu.up1.proj.weight.fill_(0.5)
        l = FeatureTriplet(*(torch.full((1, 1, 8, 8), v) for v in (0.2, 0.9, -1.3)))
        h, rec = upu(l)
    e_zero = all(torch.count_nonzero(e) == 0 for e in rec.e.frames)
    h_is_u = all(torch.equal(a, b) for a, b in zip(h.frames, rec.u.frames))
    return e_zero and h_is_u


def test_criterion_3_projection_identities(criterion):
    per_m = {m: all(_identities_hold(m, s) for s in range(3)) for m in (1, 2, 6)}
    inverse = _handcrafted_inverse()
    ok = all(per_m.values()) and inverse
    detail = ", ".join(f"M={m} {'exact' if v else 'broken'}" for m, v in per_m.items())
    assert criterion(3, ok, f"trace identities {detail}; handcrafted inverse e==0, h==u: {inverse}")


# ---------------------------------------------------------------------------
# 4. shape matrix and loss constant

def test_criterion_4_shapes_and_loss_constant(criterion):
    torch.manual_seed(0)
    lr0, lr1 = torch.rand(2, 1, 3, 32, 32)
    bad = []
    with torch.no_grad():
        for scale in (2, 4, 8):
            for m in (2, 6):
                out = CycMuNet(ModelConfig(scale=scale, num_units=m))(lr0, lr1)
                hr_ok = all(f.shape == (1, 3, 32 * scale, 32 * scale) for f in (out.h0, out.ht, out.h1))
                if not (hr_ok and out.lt.shape == (1, 3, 32, 32)):
                    bad.append((scale, m))
    gts = [torch.rand(1, 3, 8, 8, dtype=torch.float64) for _ in range(4)]
    loss = total_loss(gts, gts).item()
    # exact in real arithmetic; float64 summation of the four terms may round by an ulp
    ulps = abs(loss - 3e-3) / math.ulp(3e-3)
    ok = not bad and ulps <= 4
    assert criterion(4, ok, f"6 (scale, M) combinations, bad={bad}; perfect-output loss {loss!r} "
                            f"({ulps:.0f} ulp from 3e-3)")


# ---------------------------------------------------------------------------
# 5 and 9. overfit run

OVERFIT_CONFIG = ModelConfig(base_channels=16, num_units=2, scale=2)
OVERFIT_SCHEDULE = Schedule(base_lr=5e-3, total_epochs=1, decay_every=1)
OVERFIT_OPTIONS = TrainOptions(batch_size=1, patch=16, steps_per_epoch=500, augment=False)


def _overfit_sample():
    return make_sample(next(synth_triplets(1, (32, 32), np.random.default_rng(0))), 2)


def _overfit(**kw):
    return train(OVERFIT_CONFIG, [_overfit_sample()], OVERFIT_SCHEDULE, seed=0, options=OVERFIT_OPTIONS, **kw)


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("overfit")
    t0 = time.perf_counter()
    state, history = _overfit(out_dir=out)
    return state, history, out, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_overfit(criterion, overfit_run, capsys):
    _, history, out, elapsed = overfit_run
    ratio = history.losses[0] / history.losses[-1]
    # score the saved checkpoint through the command line, on the training triplet
    capsys.readouterr()
    code = cli_main(["eval", "--ckpt", str(out / "last"), "--data", "synth:1", "--lr-size", "16", "--seed", "0",
                     "--report", "csv"])
    row = next(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    psnr_ht = float(row["ST-VSR_psnr"])
    ok = code == 0 and ratio >= 100 and psnr_ht >= 40 and elapsed < 600
    assert criterion(5, ok, f"loss {history.losses[0]:.4f} -> {history.losses[-1]:.4f} ({ratio:.1f}x, need 100x); "
                            f"PSNR(H_t) {psnr_ht:.2f} dB (need 40); {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_9_determinism(criterion, overfit_run, tmp_path):
    _, first, _, _ = overfit_run
    _, second = _overfit()
    bitwise = first.losses == second.losses
    k = 250
    _overfit(out_dir=tmp_path, max_steps=k)
    resumed, tail = train(OVERFIT_CONFIG, [_overfit_sample()], state=load_checkpoint(tmp_path / "last"),
                          max_steps=k + 1)
    resume_exact = tail.losses == [first.losses[k]]
    ok = bitwise and resume_exact
    assert criterion(9, ok, f"two 500-step runs bitwise equal: {bitwise}; "
                            f"resume at step {k} reproduces step {k + 1}: {resume_exact}")


# ---------------------------------------------------------------------------
# 6 and 8. desk-scale training

DESK_CONFIG = ModelConfig(base_channels=32, num_units=4, scale=4)
DESK_STEPS = 2000
DESK_SCHEDULE = Schedule(base_lr=1e-3, total_epochs=1, decay_every=1)
DESK_OPTIONS = TrainOptions(batch_size=4, patch=16, steps_per_epoch=DESK_STEPS, augment=True)


@pytest.fixture(scope="module")
def desk_data():
    rng = np.random.default_rng(11)
    triplets = list(synth_triplets(232, (128, 128), rng))
    samples = [make_sample(t, 4) for t in triplets]
    return samples[:200], samples[200:]


@pytest.fixture(scope="module")
def desk_runs(desk_data):
    train_set, val_set = desk_data
    runs = {}
    for variant in ("d", "a"):
        t0 = time.perf_counter()
        state, _ = train(DESK_CONFIG.replace(variant=variant), train_set, DESK_SCHEDULE, seed=0,
                         options=DESK_OPTIONS)
        runs[variant] = (evaluate(state.model, val_set).aggregate["ST-VSR"]["psnr"], time.perf_counter() - t0)
    return runs


@pytest.mark.slow
def test_criterion_6_learning_signal(criterion, desk_data, desk_runs):
    _, val_set = desk_data
    _, baseline = evaluate_predictions(bicubic_average_baseline(val_set), val_set)
    base = baseline["ST-VSR"]["psnr"]
    model, elapsed = desk_runs["d"]
    ok = model - base >= 1.0 and elapsed < 3600
    assert criterion(6, ok, f"val PSNR(H_t) {model:.2f} dB vs bicubic+average {base:.2f} dB "
                            f"(margin {model - base:+.2f}, need +1.00); {DESK_STEPS} steps in {elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_8_ablation_direction(criterion, desk_runs):
    d, a = desk_runs["d"][0], desk_runs["a"][0]
    ok = d >= a - 0.1
    assert criterion(8, ok, f"model (d) {d:.2f} dB vs model (a) {a:.2f} dB (need d >= a - 0.1)")


# ---------------------------------------------------------------------------
# 7. parameter budget

def test_criterion_7_parameter_budget(criterion):
    counts = {m: count_parameters(CycMuNet(ModelConfig(num_units=m))) for m in (2, 4, 6, 8, 10)}
    full = counts[6]
    in_band = abs(full - 11.1e6) <= 0.25 * 11.1e6
    increasing = all(counts[a] < counts[b] for a, b in zip(sorted(counts), sorted(counts)[1:]))
    sweep = ", ".join(f"M={m}: {n / 1e6:.2f}M" for m, n in counts.items())
    assert criterion(7, in_band and increasing, f"full config {full / 1e6:.2f}M (band 8.33-13.88M); sweep {sweep}")
