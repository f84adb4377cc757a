import filecmp
import math
from types import SimpleNamespace

import numpy as np
import pytest
import torch

from cycmunet.checkpoint import load_checkpoint, read_manifest, save_checkpoint
from cycmunet.config import ModelConfig, Schedule, TrainOptions
from cycmunet.data import make_sample, synth_triplets
from cycmunet.errors import ConfigError, NonFiniteError
from cycmunet.model import CycMuNet, count_deformable_ops, count_parameters
from cycmunet.trainer import (LOG_FIELDS, TrainState, ablate, adamax_step, bicubic_average_baseline, comparison_csv,
                              draw_batch, evaluate, evaluate_predictions, lr_at, train, train_step)

from oracles import adamax_ref

TINY = ModelConfig(base_channels=8, num_units=1, scale=2, deform_groups=2, num_fe_resblocks=1,
                   num_fusion_resblocks=1)
OPTS = TrainOptions(batch_size=2, patch=8, steps_per_epoch=3, augment=True)


@pytest.fixture(scope="module")
def samples():
    return [make_sample(t, 2) for t in synth_triplets(4, (32, 32), np.random.default_rng(0))]


def _scalar_state(theta=0.0, m=0.0, u=0.0):
    p = torch.tensor([theta], dtype=torch.float64)
    return SimpleNamespace(params={"w": p}, exp_avg={"w": torch.tensor([m], dtype=torch.float64)},
                           exp_inf={"w": torch.tensor([u], dtype=torch.float64)}, step=0)


# AdaMax

def test_adamax_zero_gradient_leaves_parameters():
    st = _scalar_state(theta=0.3, u=0.5)
    adamax_step(st, {"w": torch.zeros(1, dtype=torch.float64)}, 1e-3)
    assert st.params["w"].item() == 0.3
    assert st.exp_inf["w"].item() == pytest.approx(0.5 * 0.999, rel=1e-15)


def test_adamax_first_moment_decays_on_zero_gradient():
    st = _scalar_state(m=0.5, u=1.0)
    adamax_step(st, {"w": torch.zeros(1, dtype=torch.float64)}, 1e-3)
    assert st.exp_avg["w"].item() == pytest.approx(0.45, rel=1e-15)


def test_adamax_first_step():
    st = _scalar_state()
    adamax_step(st, {"w": torch.ones(1, dtype=torch.float64)}, 1.0)
    assert st.params["w"].item() == pytest.approx(-1 / (1 + 1e-8), abs=1e-12)
    assert st.step == 1


def test_adamax_matches_scalar_oracle():
    grads = [0.7, -0.2, 1.5, 0.01, -3.0]
    st = _scalar_state(theta=0.25)
    got = []
    for g in grads:
        adamax_step(st, {"w": torch.tensor([g], dtype=torch.float64)}, 2e-3)
        got.append(st.params["w"].item())
    for a, b in zip(got, adamax_ref(0.25, grads, 2e-3)):
        assert abs(a - b) < 1e-12


def test_adamax_rejects_nan_with_name():
    st = _scalar_state()
    with pytest.raises(NonFiniteError, match="'w'"):
        adamax_step(st, {"w": torch.tensor([math.nan], dtype=torch.float64)}, 1e-3)


# schedule

def test_lr_schedule_values():
    s = Schedule()
    assert lr_at(s, 0) == pytest.approx(4e-4, rel=1e-12)
    assert lr_at(s, 20) == pytest.approx(4e-5, rel=1e-12)
    assert lr_at(s, 69) == pytest.approx(4e-7, rel=1e-12)
    values = [lr_at(s, e) for e in range(70)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert len(set(values)) == 4


def test_schedule_validation():
    with pytest.raises(ConfigError):
        Schedule(decay_factor=1.5)
    with pytest.raises(ConfigError):
        Schedule(base_lr=0.0)


# training loop

def test_training_is_deterministic(samples):
    sched = Schedule(base_lr=1e-3, total_epochs=2)
    _, a = train(TINY, samples, sched, seed=3, options=OPTS)
    _, b = train(TINY, samples, sched, seed=3, options=OPTS)
    assert len(a.losses) == 6
    assert a.losses == b.losses


def test_resume_reproduces_next_step(samples, tmp_path):
    sched = Schedule(base_lr=1e-3, total_epochs=3)
    _, full = train(TINY, samples, sched, seed=1, options=OPTS)
    # stop mid-epoch, reload and carry on
    train(TINY, samples, sched, seed=1, options=OPTS, out_dir=tmp_path, max_steps=4)
    state = load_checkpoint(tmp_path / "last")
    assert state.step == 4 and state.epoch == 1
    _, rest = train(TINY, samples, state=state, max_steps=5)
    assert rest.losses == [full.losses[4]]


def test_checkpoint_round_trip_is_byte_identical(samples, tmp_path):
    state, _ = train(TINY, samples, Schedule(total_epochs=1), seed=0, options=OPTS)
    save_checkpoint(state, tmp_path / "a")
    save_checkpoint(load_checkpoint(tmp_path / "a"), tmp_path / "b")
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")
    files = ["manifest.json"] + [e["file"] for e in read_manifest(tmp_path / "a")["tensors"]]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    assert not mismatch and not errors and len(match) == len(files)
    assert not cmp.left_only and not cmp.right_only


def test_manifest_records_config_and_seed(samples, tmp_path):
    state, _ = train(TINY, samples, Schedule(total_epochs=1), seed=7, options=OPTS)
    save_checkpoint(state, tmp_path / "ck")
    manifest = read_manifest(tmp_path / "ck")
    assert manifest["seed"] == 7
    assert manifest["config"]["base_channels"] == 8
    shapes = {e["name"]: tuple(e["shape"]) for e in manifest["tensors"] if e["group"] == "params"}
    assert shapes == {n: tuple(p.shape) for n, p in state.params.items()}


def test_bad_checkpoint_is_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_checkpoint(tmp_path)


def test_epoch_outputs(samples, tmp_path):
    opts = TrainOptions(batch_size=2, patch=8, steps_per_epoch=2)
    state, log = train(TINY, samples, Schedule(total_epochs=2), seed=0, options=opts,
                       val_samples=samples[:2], out_dir=tmp_path)
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == ",".join(LOG_FIELDS)
    assert len(lines) == 3
    assert (tmp_path / "last" / "manifest.json").exists()
    assert (tmp_path / "best" / "manifest.json").exists()
    assert state.best_psnr == max(r["psnr_ht"] for r in log.epochs)


def test_nan_aborts_and_keeps_last_checkpoint(samples, tmp_path):
    opts = TrainOptions(batch_size=2, patch=8, steps_per_epoch=2)
    state, _ = train(TINY, samples, Schedule(total_epochs=1), seed=0, options=opts, out_dir=tmp_path)
    with torch.no_grad():
        state.model.recon_hr.conv_last.bias.fill_(math.nan)
    state.schedule = Schedule(total_epochs=2)
    with pytest.raises(NonFiniteError):
        train(TINY, samples, state=state, out_dir=tmp_path)
    assert read_manifest(tmp_path / "last")["step"] == 2


def test_rejects_bad_inputs(samples):
    with pytest.raises(ConfigError):
        train(TINY, [], Schedule(total_epochs=1))
    with pytest.raises(ConfigError):
        train(TINY.replace(scale=4), samples, Schedule(total_epochs=1))


def test_every_parameter_receives_gradient(samples):
    torch.manual_seed(0)
    cfg = ModelConfig(base_channels=8, num_units=2, scale=2, deform_groups=2)
    state = TrainState.fresh(cfg, seed=0, options=TrainOptions(batch_size=2, patch=8))
    seen = {n: False for n in state.params}
    for _ in range(10):
        _, grads = train_step(state, draw_batch(samples, state.options, state.rng), 1e-4)
        for n, g in grads.items():
            seen[n] |= bool(torch.count_nonzero(g))
    dead = [n for n, ok in seen.items() if not ok]
    assert not dead, dead


# evaluation

def test_ground_truth_scores_perfectly(samples):
    preds = [(s.lr_gt_mid, s.hr_gt[0], s.hr_gt[1], s.hr_gt[2]) for s in samples]
    _, agg = evaluate_predictions(preds, samples)
    for group in agg.values():
        assert group["psnr"] == math.inf and group["ssim"] == pytest.approx(1.0, abs=1e-12)
        assert group["ie"] == 0.0


def test_aggregate_is_mean_of_frames(samples):
    torch.manual_seed(0)
    report = evaluate(CycMuNet(TINY), samples, scale=2, dataset="synth")
    for group, values in report.aggregate.items():
        for k, v in values.items():
            assert abs(v - np.mean([f[group][k] for f in report.per_frame])) < 1e-9
    row = report.row
    assert (row["dataset"], row["scale"], row["M"]) == ("synth", 2, 1)
    assert row["params"] == count_parameters(CycMuNet(TINY))


def test_evaluate_scale_mismatch(samples):
    with pytest.raises(ConfigError):
        evaluate(CycMuNet(TINY), samples, scale=4)
    with pytest.raises(ConfigError):
        evaluate(CycMuNet(TINY.replace(scale=4)), samples)


def test_bicubic_baseline_shapes(samples):
    lt, h0, ht, h1 = bicubic_average_baseline(samples[:1])[0]
    assert lt.shape == (3, 16, 16) and h0.shape == ht.shape == h1.shape == (3, 32, 32)


# ablations

def test_variant_structure():
    full = ModelConfig()
    assert count_deformable_ops(CycMuNet(full.replace(variant="a"))) == 0
    assert count_deformable_ops(CycMuNet(full.replace(variant="b"))) == 2
    c = count_parameters(CycMuNet(full.replace(variant="c")))
    d = count_parameters(CycMuNet(full))
    assert abs(c - d) / d <= 0.10


def test_ablate_rows_and_csv(samples):
    rows = [ablate(v, TINY, samples, samples[:2], Schedule(total_epochs=1), OPTS, max_steps=1) for v in "ad"]
    assert [r["variant"] for r in rows] == ["a", "d"]
    assert rows[0]["deformable_ops"] == 0 and rows[1]["deformable_ops"] == 2
    text = comparison_csv(rows)
    assert text.splitlines()[0].startswith("variant,M,params,deformable_ops,final_loss,ST-VSR_psnr")
    assert len(text.splitlines()) == 3
    with pytest.raises(ConfigError):
        ablate("e", TINY, samples, samples)
