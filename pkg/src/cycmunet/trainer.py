"""AdaMax training loop, evaluation protocols and the ablation harness."""
import csv
import io
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .config import LossWeights, Schedule, TrainOptions
from .data import augment, make_batch, upscale_bicubic
from .errors import ConfigError, NonFiniteError
from .losses import total_loss
from .metrics import GROUPS, interp_error, psnr, ssim
from .model import CycMuNet, count_deformable_ops, count_parameters

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8

LOG_FIELDS = ("epoch", "step", "loss", "psnr_ht", "ssim_ht", "ie_ht", "psnr_h0", "psnr_lt", "lr")


@dataclass
class TrainState:
    model: CycMuNet
    exp_avg: dict
    exp_inf: dict
    seed: int = 0
    step: int = 0
    epoch: int = 0
    schedule: Schedule = field(default_factory=Schedule)
    options: TrainOptions = field(default_factory=TrainOptions)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    rng: np.random.Generator = None
    best_psnr: Optional[float] = None

    @classmethod
    def fresh(cls, config, seed=0, schedule=None, options=None, loss_weights=None):
        torch.manual_seed(seed)
        model = CycMuNet(config)
        params = dict(model.named_parameters())
        return cls(
            model=model,
            exp_avg={n: torch.zeros_like(p) for n, p in params.items()},
            exp_inf={n: torch.zeros_like(p) for n, p in params.items()},
            seed=seed,
            schedule=schedule or Schedule(),
            options=options or TrainOptions(),
            loss_weights=loss_weights or LossWeights(),
            rng=np.random.default_rng(seed),
        )

    @property
    def config(self):
        return self.model.config

    @property
    def params(self):
        return dict(self.model.named_parameters())


def adamax_step(state, grads, lr):
    """One AdaMax update of every parameter in ``state`` (in place).

    m <- b1 m + (1 - b1) g;  u <- max(b2 u, |g|);  theta <- theta - lr / (1 - b1^t) * m / (u + eps)
    """
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in parameter {name!r} at step {state.step + 1}")
    t = state.step + 1
    step_size = lr / (1 - BETA1 ** t)
    with torch.no_grad():
        for name, p in state.params.items():
            g = grads[name]
            m = state.exp_avg[name]
            u = state.exp_inf[name]
            m.mul_(BETA1).add_(g, alpha=1 - BETA1)
            torch.maximum(u.mul_(BETA2), g.abs(), out=u)
            p.sub_(step_size * m / (u + EPS))
    state.step = t
    return state


def lr_at(schedule, epoch):
    return schedule.base_lr * schedule.decay_factor ** (epoch // schedule.decay_every)


def draw_batch(samples, options, rng):
    n = min(options.batch_size, len(samples))
    idx = rng.choice(len(samples), size=n, replace=False)
    chosen = [samples[i] for i in idx]
    if options.augment:
        chosen = [augment(s, rng) for s in chosen]
    patch = min(options.patch, *chosen[0].lr_gt_mid.shape[-2:])
    return make_batch(chosen, patch, rng)


def train_step(state, batch, lr):
    """Forward, loss, backward and AdaMax update; returns (loss, grads)."""
    model = state.model
    model.train()
    model.zero_grad(set_to_none=True)
    out = model(batch.lr0, batch.lr1)
    loss = total_loss(out.frames, batch.targets, state.loss_weights)
    if not torch.isfinite(loss):
        raise NonFiniteError(f"loss became {loss.item()} at step {state.step + 1}")
    loss.backward()
    grads = {n: (p.grad if p.grad is not None else torch.zeros_like(p))
             for n, p in model.named_parameters()}
    adamax_step(state, grads, lr)
    return loss.item(), grads


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)     # one entry per step
    epochs: list = field(default_factory=list)     # one dict per epoch, LOG_FIELDS


def _write_log(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row.get(k)) for k in LOG_FIELDS})


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "inf" if math.isinf(v) else repr(v)
    return v


def train(config, train_samples, schedule=None, seed=0, options=None, val_samples=None,
          out_dir=None, max_steps=None, state=None, loss_weights=None):
    """Run the optimisation loop.

    Each epoch is ``options.steps_per_epoch`` steps (default: one pass over the
    samples).  After every epoch the validation split, if any, is evaluated
    and, with ``out_dir`` set, ``metrics.csv``, ``last/`` and ``best/``
    checkpoints are written.  ``max_steps`` stops early (a ``last/``
    checkpoint is saved at that point).  Pass ``state`` to resume.

    Returns ``(state, TrainLog)``.
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    if state is None:
        state = TrainState.fresh(config, seed, schedule, options, loss_weights)
    if train_samples[0].scale != state.config.scale:
        raise ConfigError(f"data scale {train_samples[0].scale} != model scale {state.config.scale}")
    schedule, options = state.schedule, state.options
    steps_per_epoch = options.steps_per_epoch or math.ceil(len(train_samples) / options.batch_size)
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    history = TrainLog()

    while state.epoch < schedule.total_epochs:
        lr = lr_at(schedule, state.epoch)
        done_in_epoch = state.step - state.epoch * steps_per_epoch
        epoch_losses = []
        for _ in range(done_in_epoch, steps_per_epoch):
            if max_steps is not None and state.step >= max_steps:
                if out_dir:
                    save_checkpoint(state, out_dir / "last")
                return state, history
            batch = draw_batch(train_samples, options, state.rng)
            loss, _ = train_step(state, batch, lr)
            history.losses.append(loss)
            epoch_losses.append(loss)
        state.epoch += 1
        row = {"epoch": state.epoch, "step": state.step, "lr": lr,
               "loss": float(np.mean(epoch_losses)) if epoch_losses else None}
        if val_samples and state.epoch % options.val_every == 0:
            report = evaluate(state.model, val_samples)
            agg = report.aggregate
            row.update(psnr_ht=agg["ST-VSR"]["psnr"], ssim_ht=agg["ST-VSR"]["ssim"], ie_ht=agg["ST-VSR"]["ie"],
                       psnr_h0=agg["S-VSR"]["psnr"], psnr_lt=agg["T-VSR"]["psnr"])
        history.epochs.append(row)
        log.info("epoch %d step %d loss %s psnr_ht %s", state.epoch, state.step, row["loss"], row.get("psnr_ht"))
        if out_dir:
            _write_log(out_dir / "metrics.csv", history.epochs)
            save_checkpoint(state, out_dir / "last")
            score = row.get("psnr_ht")
            if score is not None and (state.best_psnr is None or score > state.best_psnr):
                state.best_psnr = score
                save_checkpoint(state, out_dir / "best")
    return state, history


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    per_frame: list       # one {group: {psnr, ssim, ie}} per sample
    aggregate: dict       # {group: {psnr, ssim, ie}} means over samples
    row: dict             # aggregate plus dataset / scale / M / params


def frame_metrics(pred, gt, ssim_channel="y", psnr_channel="rgb"):
    return {"psnr": psnr(pred, gt, psnr_channel), "ssim": ssim(pred, gt, ssim_channel),
            "ie": interp_error(pred, gt)}


def evaluate_predictions(predictions, samples, **metric_kw):
    """Score (L_t, H_0, H_t, H_1) predictions against samples.

    ST-VSR compares H_t, S-VSR compares H_0 and T-VSR compares L_t.
    """
    per_frame = []
    for (lt, h0, ht, _), s in zip(predictions, samples):
        per_frame.append({
            "ST-VSR": frame_metrics(ht, s.hr_gt[1], **metric_kw),
            "S-VSR": frame_metrics(h0, s.hr_gt[0], **metric_kw),
            "T-VSR": frame_metrics(lt, s.lr_gt_mid, **metric_kw),
        })
    aggregate = {g: {k: float(np.mean([f[g][k] for f in per_frame])) for k in ("psnr", "ssim", "ie")}
                 for g in GROUPS}
    return per_frame, aggregate


def predict(model, samples, batch_size=4):
    """Run the model on full frames; returns a list of numpy (L_t, H_0, H_t, H_1)."""
    model.eval()
    preds = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i:i + batch_size]
            lr0 = torch.from_numpy(np.stack([s.lr_inputs[0] for s in chunk])).float()
            lr1 = torch.from_numpy(np.stack([s.lr_inputs[1] for s in chunk])).float()
            out = model(lr0, lr1)
            frames = [f.numpy() for f in out.frames]
            preds.extend(tuple(f[j] for f in frames) for j in range(len(chunk)))
    return preds


def evaluate(model, samples, scale=None, dataset="", **metric_kw):
    if isinstance(model, TrainState):
        model = model.model
    cfg = model.config
    if scale is not None and scale != cfg.scale:
        raise ConfigError(f"evaluation scale {scale} != checkpoint scale {cfg.scale}")
    for s in samples:
        if s.scale != cfg.scale:
            raise ConfigError(f"sample scale {s.scale} != checkpoint scale {cfg.scale}")
    per_frame, aggregate = evaluate_predictions(predict(model, samples), samples, **metric_kw)
    row = {"dataset": dataset, "scale": cfg.scale, "M": cfg.num_units,
           "params": count_parameters(model), **aggregate}
    return EvalReport(per_frame, aggregate, row)


def bicubic_average_baseline(samples):
    """Bicubic-upscale each input; the middle frame is the average of the two."""
    preds = []
    for s in samples:
        up0 = upscale_bicubic(s.lr_inputs[0], s.scale)
        up1 = upscale_bicubic(s.lr_inputs[1], s.scale)
        lt = (s.lr_inputs[0] + s.lr_inputs[1]) / 2
        preds.append((lt, up0, (up0 + up1) / 2, up1))
    return preds


# ---------------------------------------------------------------------------
# ablations

def ablate(variant, config, train_samples, val_samples, schedule=None, options=None,
           seed=0, max_steps=None, dataset="synthetic", loss_weights=None):
    """Train one ablation graph under the given budget and score it on ``val_samples``."""
    if variant not in ("a", "b", "c", "d"):
        raise ConfigError(f"unknown ablation variant {variant!r}")
    cfg = config.replace(variant=variant)
    state, history = train(cfg, train_samples, schedule, seed, options, max_steps=max_steps,
                           loss_weights=loss_weights)
    report = evaluate(state.model, val_samples, dataset=dataset)
    return {"variant": variant, **report.row,
            "deformable_ops": count_deformable_ops(state.model),
            "final_loss": history.losses[-1] if history.losses else None}


def sweep_units(units, config, train_samples, val_samples, **kw):
    rows = []
    for m in units:
        row = ablate(config.variant, config.replace(num_units=m), train_samples, val_samples, **kw)
        rows.append(row)
    return rows


ABLATION_FIELDS = ("variant", "M", "params", "deformable_ops", "final_loss")


def comparison_csv(rows):
    buf = io.StringIO()
    fieldnames = list(ABLATION_FIELDS)
    for g in GROUPS:
        fieldnames += [f"{g}_psnr", f"{g}_ssim", f"{g}_ie"]
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        flat = {k: _csv_value(r.get(k)) for k in ABLATION_FIELDS}
        for g in GROUPS:
            for k in ("psnr", "ssim", "ie"):
                flat[f"{g}_{k}"] = _csv_value(r[g][k])
        writer.writerow(flat)
    return buf.getvalue()
