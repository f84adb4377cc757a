import torch

from .config import LossWeights
from .errors import ConfigError


def charbonnier(diff, omega=1e-3):
    """Mean of sqrt(x^2 + omega^2) over all elements."""
    return torch.sqrt(diff * diff + omega * omega).mean()


def total_loss(outputs, targets, weights=None):
    """Weighted Charbonnier over (L_t, H_t, H_0, H_1).

    ``outputs`` and ``targets`` are both ordered (L_t, H_0, H_t, H_1).
    """
    weights = weights or LossWeights()
    lt, h0, ht, h1 = outputs
    lt_gt, h0_gt, ht_gt, h1_gt = targets
    for name, a, b in (("L_t", lt, lt_gt), ("H_0", h0, h0_gt), ("H_t", ht, ht_gt), ("H_1", h1, h1_gt)):
        if a.shape != b.shape:
            raise ConfigError(f"{name}: output {tuple(a.shape)} vs target {tuple(b.shape)}")
    w = weights.omega
    return (weights.lambda_lt * charbonnier(lt - lt_gt, w)
            + weights.lambda_ht * charbonnier(ht - ht_gt, w)
            + weights.lambda_h0 * charbonnier(h0 - h0_gt, w)
            + weights.lambda_h1 * charbonnier(h1 - h1_gt, w))
