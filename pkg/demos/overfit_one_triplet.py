"""Fit a small network to a single synthetic triplet and watch the loss fall.

Takes a minute or two on one CPU core.  The reconstructed frames are
written next to the ground truth under ``demo_out/`` for a visual check.
"""
from pathlib import Path

import numpy as np

from cycmunet.config import ModelConfig, Schedule, TrainOptions
from cycmunet.data import make_sample, synth_triplets, upscale_bicubic, write_png
from cycmunet.trainer import evaluate, predict, train

out = Path("demo_out")
out.mkdir(exist_ok=True)

sample = make_sample(next(synth_triplets(1, (32, 32), np.random.default_rng(0))), 2)
config = ModelConfig(base_channels=16, num_units=2, scale=2)
state, log = train(config, [sample], Schedule(base_lr=5e-3, total_epochs=1, decay_every=1), seed=0,
                   options=TrainOptions(batch_size=1, patch=16, steps_per_epoch=500, augment=False))

for step in (0, 50, 100, 200, 300, 400, 499):
    print(f"step {step + 1:4d}  loss {log.losses[step]:.4f}")
print(f"reduction: {log.losses[0] / log.losses[-1]:.1f}x")

report = evaluate(state.model, [sample])
for group, values in report.aggregate.items():
    print(f"{group:7s} PSNR {values['psnr']:.2f}  SSIM {values['ssim']:.4f}  IE {values['ie']:.2f}")

lt, h0, ht, h1 = predict(state.model, [sample])[0]
write_png(out / "Ht_pred.png", ht)
write_png(out / "Ht_gt.png", sample.hr_gt[1])
write_png(out / "Ht_bicubic_avg.png", (upscale_bicubic(sample.lr_inputs[0], 2) + upscale_bicubic(sample.lr_inputs[1], 2)) / 2)
print(f"frames written to {out.resolve()}")
