"""Reconstruction heads: concatenated representations -> RGB frames."""
import math

import torch
import torch.nn as nn

from .core_ops import pixel_shuffle
from .errors import ConfigError
from .fti import conv3x3, lrelu, scale_init_
from .projection import FeatureTriplet


def _check_reps(reps):
    if not reps:
        raise ConfigError("need at least one representation")
    shape = reps[0].shape
    for rep in reps:
        if rep.shape != shape:
            raise ConfigError(f"representation shapes differ: {shape} vs {rep.shape}")


class HRReconstructor(nn.Module):
    """Fuse M triplets at ``rep_scale`` x LR into RGB frames at ``scale`` x LR.

    Per time index the M maps are concatenated and squeezed to C channels;
    each remaining factor of two is a conv to 4C followed by pixel shuffle.
    The head is shared across the three time indices.
    """

    def __init__(self, num_reps, channels, scale, rep_scale=2):
        super().__init__()
        if scale % rep_scale or (scale // rep_scale) & (scale // rep_scale - 1):
            raise ConfigError(f"cannot reach scale {scale} from representations at {rep_scale}x")
        self.num_reps = num_reps
        self.fuse = conv3x3(num_reps * channels, channels)
        stages = int(math.log2(scale // rep_scale))
        self.up_convs = nn.ModuleList(conv3x3(channels, 4 * channels) for _ in range(stages))
        self.conv_last = conv3x3(channels, 3)
        # full-gain init: this head is not a residual branch
        scale_init_(self, 1.0)

    def forward(self, reps):
        _check_reps(reps)
        if len(reps) != self.num_reps:
            raise ConfigError(f"expected {self.num_reps} representations, got {len(reps)}")
        # time index becomes part of the batch so all three frames share one pass
        x = torch.cat([torch.cat([rep.frames[i] for rep in reps], dim=1) for i in range(3)], dim=0)
        x = lrelu(self.fuse(x))
        for conv in self.up_convs:
            x = lrelu(pixel_shuffle(conv(x), 2))
        return tuple(self.conv_last(x).chunk(3, dim=0))


class LRReconstructor(nn.Module):
    """Concatenate the M middle-frame maps -> conv to C -> conv to RGB."""

    def __init__(self, num_reps, channels):
        super().__init__()
        self.num_reps = num_reps
        self.fuse = conv3x3(num_reps * channels, channels)
        self.conv_last = conv3x3(channels, 3)
        scale_init_(self, 1.0)

    def forward(self, reps):
        _check_reps(reps)
        if len(reps) != self.num_reps:
            raise ConfigError(f"expected {self.num_reps} representations, got {len(reps)}")
        x = torch.cat([rep.ft for rep in reps], dim=1)
        return self.conv_last(lrelu(self.fuse(x)))
