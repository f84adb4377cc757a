"""Feature extraction and feature temporal interpolation (FTI-Net).

The interpolator estimates forward (frame 0 -> t) and backward (frame 1 -> t)
deformable offsets coarse to fine, samples both frames with deformable
convolution and blends the two results with per-pixel softmax weights.
"""
from typing import NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core_ops import DeformConv2d, warp
from .errors import ConfigError


def lrelu(x):
    return F.leaky_relu(x, 0.1)


def conv3x3(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride, 1)


def scale_init_(module, scale=0.1):
    """Kaiming init shrunk by ``scale``; keeps deep residual stacks near identity at start."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, a=0.1)
            m.weight.data.mul_(scale)
            nn.init.zeros_(m.bias)


class ResidualBlock(nn.Module):
    """conv-lrelu-conv with identity skip, no normalisation."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)
        scale_init_(self)

    def forward(self, x):
        return x + self.conv2(lrelu(self.conv1(x)))


class FeatureExtractor(nn.Module):
    def __init__(self, channels=64, num_blocks=5, in_channels=3):
        super().__init__()
        self.conv_first = conv3x3(in_channels, channels)
        self.blocks = nn.Sequential(*(ResidualBlock(channels) for _ in range(num_blocks)))

    def forward(self, x):
        return self.blocks(lrelu(self.conv_first(x)))


class OffsetField(NamedTuple):
    offsets: torch.Tensor                  # (N, 2*K*G, H, W), (dy, dx) per tap and group
    modulation: Optional[torch.Tensor]     # (N, K*G, H, W) in [0, 1], or None


def mean_flow(offsets):
    """Average (dy, dx) over all taps and groups -> (N, 2, H, W)."""
    n, c, h, w = offsets.shape
    return offsets.view(n, c // 2, 2, h, w).mean(dim=1)


class OffsetEstimator(nn.Module):
    """Coarse-to-fine bidirectional offset estimation over a feature pyramid.

    At every level the two frames are pre-warped with the mean of the offsets
    carried up from the coarser level, a small conv stack looks at the pair,
    and zero-initialised heads add residual offsets.
    """

    def __init__(self, channels=64, levels=3, taps=9, groups=8, use_modulation=True):
        super().__init__()
        self.levels = levels
        self.out_offsets = 2 * taps * groups
        self.down = nn.ModuleList(
            nn.Sequential(conv3x3(channels, channels, 2), nn.LeakyReLU(0.1),
                          conv3x3(channels, channels), nn.LeakyReLU(0.1))
            for _ in range(levels - 1))
        self.trunk = nn.ModuleList(
            nn.Sequential(conv3x3(2 * channels, channels), nn.LeakyReLU(0.1),
                          conv3x3(channels, channels), nn.LeakyReLU(0.1))
            for _ in range(levels))
        self.head_fwd = nn.ModuleList(conv3x3(channels, self.out_offsets) for _ in range(levels))
        self.head_bwd = nn.ModuleList(conv3x3(channels, self.out_offsets) for _ in range(levels))
        heads = list(self.head_fwd) + list(self.head_bwd)
        if use_modulation:
            self.mod_fwd = conv3x3(channels, taps * groups)
            self.mod_bwd = conv3x3(channels, taps * groups)
            heads += [self.mod_fwd, self.mod_bwd]
        else:
            self.mod_fwd = self.mod_bwd = None
        for head in heads:
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    def pyramid(self, feat):
        levels = [feat]
        for down in self.down:
            levels.append(down(levels[-1]))
        return levels

    def forward(self, feat0, feat1):
        if feat0.shape != feat1.shape:
            raise ConfigError(f"feature shapes differ: {tuple(feat0.shape)} vs {tuple(feat1.shape)}")
        h, w = feat0.shape[-2:]
        mult = 2 ** (self.levels - 1)
        if h % mult or w % mult:
            raise ConfigError(f"feature size {h}x{w} must be divisible by {mult} for {self.levels} levels")
        pyr0, pyr1 = self.pyramid(feat0), self.pyramid(feat1)
        off_f = off_b = None
        for k in reversed(range(self.levels)):
            f0, f1 = pyr0[k], pyr1[k]
            if off_f is None:
                off_f = f0.new_zeros(f0.shape[0], self.out_offsets, *f0.shape[-2:])
                off_b = torch.zeros_like(off_f)
            else:
                off_f = 2 * F.interpolate(off_f, scale_factor=2, mode="bilinear", align_corners=False)
                off_b = 2 * F.interpolate(off_b, scale_factor=2, mode="bilinear", align_corners=False)
                f0 = warp(f0, mean_flow(off_f))
                f1 = warp(f1, mean_flow(off_b))
            feat = self.trunk[k](torch.cat((f0, f1), dim=1))
            off_f = off_f + self.head_fwd[k](feat)
            off_b = off_b + self.head_bwd[k](feat)
        mod_f = mod_b = None
        if self.mod_fwd is not None:
            mod_f = torch.sigmoid(self.mod_fwd(feat))
            mod_b = torch.sigmoid(self.mod_bwd(feat))
        return OffsetField(off_f, mod_f), OffsetField(off_b, mod_b)


def blend(phi_f, phi_b, logit_f, logit_b):
    """Per-pixel two-way softmax blend; returns (blended, (sigma_f, sigma_b))."""
    weights = torch.softmax(torch.cat((logit_f, logit_b), dim=1), dim=1)
    sf, sb = weights[:, :1], weights[:, 1:]
    return sf * phi_f + sb * phi_b, (sf, sb)


class FeatureInterpolator(nn.Module):
    def __init__(self, channels=64, groups=8, kernel_size=3):
        super().__init__()
        self.dcn_fwd = DeformConv2d(channels, channels, kernel_size, kernel_size // 2, groups)
        self.dcn_bwd = DeformConv2d(channels, channels, kernel_size, kernel_size // 2, groups)
        self.weight_fwd = conv3x3(2 * channels, 1)
        self.weight_bwd = conv3x3(2 * channels, 1)

    def forward(self, feat0, feat1, field_fwd, field_bwd, return_weights=False):
        phi_f = self.dcn_fwd(feat0, field_fwd.offsets, field_fwd.modulation)
        phi_b = self.dcn_bwd(feat1, field_bwd.offsets, field_bwd.modulation)
        both = torch.cat((phi_f, phi_b), dim=1)
        out, weights = blend(phi_f, phi_b, self.weight_fwd(both), self.weight_bwd(both))
        return (out, weights) if return_weights else out


class FTINet(nn.Module):
    """Deformable feature interpolation: (feat0, feat1) -> initial middle features."""

    def __init__(self, config):
        super().__init__()
        c = config.base_channels
        self.offsets = OffsetEstimator(c, config.pyramid_levels, config.taps,
                                       config.deform_groups, config.use_modulation)
        self.interp = FeatureInterpolator(c, config.deform_groups, config.kernel_size)

    def forward(self, feat0, feat1):
        fwd, bwd = self.offsets(feat0, feat1)
        return self.interp(feat0, feat1, fwd, bwd)


class FusionInterpolator(nn.Module):
    """Motion-free interpolation (ablation model a): convolve the concatenated pair."""

    def __init__(self, config):
        super().__init__()
        c = config.base_channels
        self.fuse = conv3x3(2 * c, c)
        self.blocks = nn.Sequential(ResidualBlock(c), ResidualBlock(c))

    def forward(self, feat0, feat1):
        return self.blocks(lrelu(self.fuse(torch.cat((feat0, feat1), dim=1))))
