"""Up/down projection units and the cycle that alternates them.

An up-projection unit maps an LR triplet ``l`` to HR:

    u = UP_0(l)
    e = DN(u) - l
    h = UP_1(e) + u

and a down-projection unit mirrors it, HR to LR:

    d = DN_0(h)
    e_hr = UP(d) - h
    l = DN_1(e_hr) + d

Each scale module mixes the three time indices with fusion resblocks so the
middle frame and the two key frames inform each other at both resolutions.
"""
from typing import NamedTuple

import torch
import torch.nn as nn

from .core_ops import bilinear_upsample
from .errors import ConfigError
from .fti import lrelu, scale_init_


class FeatureTriplet(NamedTuple):
    f0: torch.Tensor
    ft: torch.Tensor
    f1: torch.Tensor
    level: str = "LR"

    @property
    def frames(self):
        return (self.f0, self.ft, self.f1)

    @property
    def shape(self):
        return tuple(self.f0.shape)

    def stacked(self):
        """Frames concatenated along the batch axis, (3N, C, H, W)."""
        return torch.cat(self.frames, dim=0)

    @classmethod
    def from_stacked(cls, x, level):
        return cls(*x.chunk(3, dim=0), level=level)

    def plus(self, other):
        return FeatureTriplet(*(a + b for a, b in zip(self.frames, other.frames)), level=self.level)

    def minus(self, other):
        return FeatureTriplet(*(a - b for a, b in zip(self.frames, other.frames)), level=self.level)


def _check(triplet, level):
    if triplet.level != level:
        raise ConfigError(f"expected a {level} triplet, got {triplet.level}")
    if not (triplet.f0.shape == triplet.ft.shape == triplet.f1.shape):
        raise ConfigError("triplet frames must share one shape")


class FusionResBlock(nn.Module):
    """Concat the triplet, mix it with a 1x1 conv, refine each frame, add back."""

    def __init__(self, channels):
        super().__init__()
        self.fuse = nn.Conv2d(3 * channels, 3 * channels, 1)
        self.frame_convs = nn.ModuleList(nn.Conv2d(channels, channels, 3, 1, 1) for _ in range(3))
        scale_init_(self)

    def forward(self, triplet):
        mixed = lrelu(self.fuse(torch.cat(triplet.frames, dim=1)))
        parts = mixed.chunk(3, dim=1)
        out = [f + conv(p) for f, conv, p in zip(triplet.frames, self.frame_convs, parts)]
        return FeatureTriplet(*out, level=triplet.level)


class ScaleUp(nn.Module):
    """Fusion resblocks at LR, then bilinear x2 and a shared 1x1 conv per frame."""

    def __init__(self, channels, num_blocks=2):
        super().__init__()
        self.blocks = nn.ModuleList(FusionResBlock(channels) for _ in range(num_blocks))
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, triplet):
        _check(triplet, "LR")
        for block in self.blocks:
            triplet = block(triplet)
        x = self.proj(bilinear_upsample(triplet.stacked(), 2))
        return FeatureTriplet.from_stacked(x, "HR")


class ScaleDown(nn.Module):
    """Shared 4x4 stride-2 conv per frame, then fusion resblocks at LR."""

    def __init__(self, channels, num_blocks=2):
        super().__init__()
        self.proj = nn.Conv2d(channels, channels, 4, 2, 1)
        self.blocks = nn.ModuleList(FusionResBlock(channels) for _ in range(num_blocks))

    def forward(self, triplet):
        _check(triplet, "HR")
        h, w = triplet.shape[-2:]
        if h % 2 or w % 2:
            raise ConfigError(f"scale_down needs even spatial dims, got {h}x{w}")
        triplet = FeatureTriplet.from_stacked(self.proj(triplet.stacked()), "LR")
        for block in self.blocks:
            triplet = block(triplet)
        return triplet


class UPURecord(NamedTuple):
    u: FeatureTriplet
    e: FeatureTriplet
    h: FeatureTriplet


class DPURecord(NamedTuple):
    d: FeatureTriplet
    e: FeatureTriplet
    l: FeatureTriplet


class ProjectionTrace(NamedTuple):
    upu: list
    dpu: list


class UpProjectionUnit(nn.Module):
    def __init__(self, channels, num_blocks=2):
        super().__init__()
        self.up0 = ScaleUp(channels, num_blocks)
        self.down = ScaleDown(channels, num_blocks)
        self.up1 = ScaleUp(channels, num_blocks)

    def forward(self, l):
        _check(l, "LR")
        u = self.up0(l)
        e = self.down(u).minus(l)
        h = self.up1(e).plus(u)
        return h, UPURecord(u, e, h)


class DownProjectionUnit(nn.Module):
    def __init__(self, channels, num_blocks=2):
        super().__init__()
        self.down0 = ScaleDown(channels, num_blocks)
        self.up = ScaleUp(channels, num_blocks)
        self.down1 = ScaleDown(channels, num_blocks)

    def forward(self, h):
        _check(h, "HR")
        d = self.down0(h)
        e = self.up(d).minus(h)
        l = self.down1(e).plus(d)
        return l, DPURecord(d, e, l)


class MutualCycle(nn.Module):
    """UPU_1, DPU_1, UPU_2, ..., DPU_{M-1}, UPU_M with independent weights per unit.

    Returns the M HR triplets, the M LR triplets (the input plus every DPU
    output) and the full trace.
    """

    def __init__(self, channels, num_units, num_blocks=2):
        super().__init__()
        if num_units < 1:
            raise ConfigError(f"need at least one projection unit, got {num_units}")
        self.ups = nn.ModuleList(UpProjectionUnit(channels, num_blocks) for _ in range(num_units))
        self.downs = nn.ModuleList(DownProjectionUnit(channels, num_blocks) for _ in range(num_units - 1))

    def forward(self, l0):
        trace = ProjectionTrace([], [])
        hr_reps, lr_reps = [], [l0]
        l = l0
        for m, upu in enumerate(self.ups):
            h, rec = upu(l)
            hr_reps.append(h)
            trace.upu.append(rec)
            if m < len(self.downs):
                l, rec = self.downs[m](h)
                lr_reps.append(l)
                trace.dpu.append(rec)
        return hr_reps, lr_reps, trace


class _FusionStack(nn.Module):
    def __init__(self, channels, num_blocks):
        super().__init__()
        self.blocks = nn.ModuleList(FusionResBlock(channels) for _ in range(num_blocks))

    def forward(self, triplet):
        for block in self.blocks:
            triplet = block(triplet)
        return triplet


class PlainProjectionUnit(nn.Module):
    """Same residual arithmetic as a projection unit, but every module stays at LR.

    Used by ablation model (c).
    """

    def __init__(self, channels, num_blocks=2):
        super().__init__()
        self.first = _FusionStack(channels, num_blocks)
        self.back = _FusionStack(channels, num_blocks)
        self.correct = _FusionStack(channels, num_blocks)

    def forward(self, x):
        u = self.first(x)
        e = self.back(u).minus(x)
        out = self.correct(e).plus(u)
        return out, UPURecord(u, e, out)


class PlainCycle(nn.Module):
    """2M-1 plain units in the positions the projection units would occupy."""

    def __init__(self, channels, num_units, num_blocks=2):
        super().__init__()
        if num_units < 1:
            raise ConfigError(f"need at least one projection unit, got {num_units}")
        self.ups = nn.ModuleList(PlainProjectionUnit(channels, num_blocks) for _ in range(num_units))
        self.downs = nn.ModuleList(PlainProjectionUnit(channels, num_blocks) for _ in range(num_units - 1))

    def forward(self, l0):
        trace = ProjectionTrace([], [])
        hr_reps, lr_reps = [], [l0]
        x = l0
        for m, unit in enumerate(self.ups):
            x, rec = unit(x)
            hr_reps.append(x)
            trace.upu.append(rec)
            if m < len(self.downs):
                x, rec = self.downs[m](x)
                lr_reps.append(x)
                trace.dpu.append(DPURecord(*rec))
        return hr_reps, lr_reps, trace
