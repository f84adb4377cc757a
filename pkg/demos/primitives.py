"""Tour of the low-level pieces: deformable sampling, bicubic degradation, metrics.

Run with ``python demos/primitives.py``.
"""
import numpy as np
import torch

from cycmunet.core_ops import deform_conv2d
from cycmunet.data import degrade_bicubic, make_sample, synth_triplets, upscale_bicubic
from cycmunet.metrics import interp_error, psnr, ssim

# A deformable conv whose every tap is pushed one pixel to the right behaves
# like a plain conv applied to the image shifted one pixel to the left.
x = torch.arange(36, dtype=torch.float32).view(1, 1, 6, 6)
weight = torch.zeros(1, 1, 3, 3)
weight[0, 0, 1, 1] = 1.0                      # centre tap only: a pure sampler
offset = torch.zeros(1, 18, 6, 6)
offset[:, 1::2] = 1.0                         # dx = +1 for all nine taps
shifted = deform_conv2d(x, weight, offset=offset, padding=1)
print("input row 0:   ", x[0, 0, 0].tolist())
print("sampled row 0: ", shifted[0, 0, 0].tolist(), "(last column falls off the edge -> 0)")

# Half-pixel offsets interpolate bilinearly between neighbours.
offset[:, 1::2] = 0.5
print("dx = 0.5 row 0:", deform_conv2d(x, weight, offset=offset, padding=1)[0, 0, 0].tolist())

# Bicubic degradation keeps flat regions flat and stays within [0, 1].
triplet = next(synth_triplets(1, (64, 64), np.random.default_rng(3)))
sample = make_sample(triplet, 4)
lr = sample.lr_inputs[0]
print(f"\nHR frame {triplet.frames[0].shape} -> LR frame {lr.shape}, range [{lr.min():.3f}, {lr.max():.3f}]")
flat = np.full((3, 16, 16), 0.42)
print("constant image survives degradation:", np.allclose(degrade_bicubic(flat, 4), 0.42))

# Scores of the naive baseline: bicubic upscaling of frame 0.
up = upscale_bicubic(lr, 4)
gt = sample.hr_gt[0]
print(f"bicubic x4 on frame 0: PSNR {psnr(up, gt):.2f} dB, SSIM {ssim(up, gt):.4f}, IE {interp_error(up, gt):.2f}")
