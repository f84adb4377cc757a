"""End-to-end network: FE -> interpolation -> projection cycle -> reconstruction."""
from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from .config import ModelConfig
from .errors import ConfigError
from .fti import FeatureExtractor, FTINet, FusionInterpolator
from .projection import FeatureTriplet, MutualCycle, PlainCycle, ProjectionTrace
from .reconstruction import HRReconstructor, LRReconstructor


class Outputs(NamedTuple):
    lt: torch.Tensor
    h0: torch.Tensor
    ht: torch.Tensor
    h1: torch.Tensor
    trace: Optional[ProjectionTrace] = None
    hr_reps: Optional[list] = None
    lr_reps: Optional[list] = None

    @property
    def frames(self):
        """(L_t, H_0, H_t, H_1), the order used by the loss."""
        return self.lt, self.h0, self.ht, self.h1


class CycMuNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        config = config or ModelConfig()
        self.config = config
        c, m = config.base_channels, config.num_units
        self.extractor = FeatureExtractor(c, config.num_fe_resblocks)
        if config.variant == "a":
            self.interpolator = FusionInterpolator(config)
        else:
            self.interpolator = FTINet(config)

        if config.variant == "d":
            self.cycle = MutualCycle(c, m, config.num_fusion_resblocks)
            self.recon_hr = HRReconstructor(m, c, config.scale, rep_scale=2)
            self.recon_lr = LRReconstructor(m, c)
        elif config.variant == "c":
            self.cycle = PlainCycle(c, m, config.num_fusion_resblocks)
            self.recon_hr = HRReconstructor(m, c, config.scale, rep_scale=1)
            self.recon_lr = LRReconstructor(m, c)
        else:
            self.cycle = None
            self.recon_hr = HRReconstructor(1, c, config.scale, rep_scale=1)
            self.recon_lr = LRReconstructor(1, c)

    def check_inputs(self, lr0, lr1):
        if lr0.shape != lr1.shape:
            raise ConfigError(f"input frames differ in shape: {tuple(lr0.shape)} vs {tuple(lr1.shape)}")
        if lr0.dim() != 4 or lr0.shape[1] != 3:
            raise ConfigError(f"expected (N, 3, H, W) inputs, got {tuple(lr0.shape)}")
        mult = self.config.size_multiple
        h, w = lr0.shape[-2:]
        if h % mult or w % mult:
            raise ConfigError(f"input size {h}x{w} must be divisible by {mult}")

    def forward(self, lr0, lr1, keep_reps=False):
        self.check_inputs(lr0, lr1)
        n = lr0.shape[0]
        feats = self.extractor(torch.cat((lr0, lr1), dim=0))
        feat0, feat1 = feats[:n], feats[n:]
        mid = self.interpolator(feat0, feat1)
        l0 = FeatureTriplet(feat0, mid, feat1, level="LR")
        if self.cycle is None:
            hr_reps, lr_reps, trace = [l0], [l0], None
        else:
            hr_reps, lr_reps, trace = self.cycle(l0)
        h0, ht, h1 = self.recon_hr(hr_reps)
        lt = self.recon_lr(lr_reps)
        if keep_reps:
            return Outputs(lt, h0, ht, h1, trace, hr_reps, lr_reps)
        return Outputs(lt, h0, ht, h1, trace)


def count_parameters(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)


def count_deformable_ops(module):
    from .core_ops import DeformConv2d
    return sum(isinstance(m, DeformConv2d) for m in module.modules())
