"""Differentiable sampling primitives shared by the interpolation and projection networks.

All functions accept either a single map ``(C, H, W)`` or a batch ``(N, C, H, W)``
and are pure: identical inputs give bitwise identical outputs.  Sampling uses
zero padding, so neighbours that fall outside the map contribute nothing.
"""
import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError


def _as_batch(x):
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() != 4:
        raise ConfigError(f"expected a (C, H, W) or (N, C, H, W) tensor, got shape {tuple(x.shape)}")
    return x, False


def _pixel_grid(py, px, height, width):
    # grid_sample with align_corners=False maps pixel centre i to (2i + 1) / size - 1,
    # which stays well defined for size 1.
    gx = (2.0 * px + 1.0) / width - 1.0
    gy = (2.0 * py + 1.0) / height - 1.0
    return torch.stack((gx, gy), dim=-1)


def sample_at(input, py, px):
    """Bilinearly sample ``input`` (N, C, H, W) at pixel coordinates ``py``/``px``.

    ``py`` and ``px`` have shape (N, Hs, Ws); the result is (N, C, Hs, Ws).
    """
    height, width = input.shape[-2:]
    grid = _pixel_grid(py, px, height, width).to(input.dtype)
    return F.grid_sample(input, grid, mode="bilinear", padding_mode="zeros", align_corners=False)


def bilinear_sample(src, y, x, channel=None):
    """Read ``src`` (C, H, W) at the real-valued location ``(y, x)``.

    Out-of-range corners count as zero.  ``y``/``x`` may be Python floats or
    tensors of any (matching) shape.  With ``channel`` given, only that channel
    is returned.
    """
    if src.dim() != 3:
        raise ConfigError(f"bilinear_sample expects a (C, H, W) map, got {tuple(src.shape)}")
    y = torch.as_tensor(y, dtype=src.dtype)
    x = torch.as_tensor(x, dtype=src.dtype)
    y, x = torch.broadcast_tensors(y, x)
    shape = y.shape
    out = sample_at(src.unsqueeze(0), y.reshape(1, 1, -1), x.reshape(1, 1, -1))
    out = out.reshape(src.shape[0], *shape)
    return out if channel is None else out[channel]


def warp(feat, flow):
    """Sample ``feat`` at ``p + flow(p)``; ``flow`` is (N, 2, H, W) holding (dy, dx)."""
    n, _, h, w = feat.shape
    ys = torch.arange(h, dtype=feat.dtype, device=feat.device).view(1, h, 1)
    xs = torch.arange(w, dtype=feat.dtype, device=feat.device).view(1, 1, w)
    return sample_at(feat, ys + flow[:, 0], xs + flow[:, 1])


def deform_conv2d(input, weight, bias=None, offset=None, mask=None, stride=1, padding=0, dilation=1):
    """Deformable (optionally modulated) 2D cross-correlation.

    Args:
        input: (N, C_in, H, W) or (C_in, H, W).
        weight: (C_out, C_in, kh, kw).
        bias: optional (C_out,).
        offset: (N, 2*G*K, H_out, W_out) with K = kh*kw taps and G deformable
            groups.  Channel ``2*(g*K + k)`` holds dy and ``2*(g*K + k) + 1``
            holds dx for tap k of group g.  ``None`` means all zeros.
        mask: optional (N, G*K, H_out, W_out) modulation multiplying each
            sampled value.

    Returns:
        (N, C_out, H_out, W_out), or (C_out, H_out, W_out) for unbatched input.
    """
    input, squeeze = _as_batch(input)
    n, c_in, h, w = input.shape
    c_out, c_w, kh, kw = weight.shape
    if c_w != c_in:
        raise ConfigError(f"weight expects {c_w} input channels, input has {c_in}")
    taps = kh * kw
    h_out = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    w_out = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ConfigError("kernel larger than padded input")

    if offset is None:
        offset = input.new_zeros(n, 2 * taps, h_out, w_out)
    elif offset.dim() == 3:
        offset = offset.unsqueeze(0)
    if offset.shape[0] != n or offset.shape[-2:] != (h_out, w_out):
        raise ConfigError(
            f"offset shape {tuple(offset.shape)} does not match output grid ({n}, *, {h_out}, {w_out})")
    if offset.shape[1] % (2 * taps):
        raise ConfigError(f"offset channels {offset.shape[1]} not a multiple of 2*K={2 * taps}")
    groups = offset.shape[1] // (2 * taps)
    if c_in % groups:
        raise ConfigError(f"{groups} deformable groups do not divide {c_in} input channels")
    if mask is not None:
        if mask.dim() == 3:
            mask = mask.unsqueeze(0)
        if mask.shape != (n, groups * taps, h_out, w_out):
            raise ConfigError(f"mask shape {tuple(mask.shape)} != {(n, groups * taps, h_out, w_out)}")

    ky, kx = torch.meshgrid(
        torch.arange(kh, dtype=input.dtype) * dilation,
        torch.arange(kw, dtype=input.dtype) * dilation, indexing="ij")
    oy = torch.arange(h_out, dtype=input.dtype) * stride - padding
    ox = torch.arange(w_out, dtype=input.dtype) * stride - padding
    base_y = ky.reshape(taps, 1, 1) + oy.view(1, h_out, 1)
    base_x = kx.reshape(taps, 1, 1) + ox.view(1, 1, w_out)

    off = offset.view(n, groups, taps, 2, h_out, w_out)
    py = (base_y + off[:, :, :, 0]).reshape(n * groups, taps * h_out, w_out)
    px = (base_x + off[:, :, :, 1]).reshape(n * groups, taps * h_out, w_out)

    cg = c_in // groups
    sampled = sample_at(input.reshape(n * groups, cg, h, w), py, px)
    sampled = sampled.view(n, groups, cg, taps, h_out, w_out)
    if mask is not None:
        sampled = sampled * mask.view(n, groups, 1, taps, h_out, w_out)

    cols = sampled.reshape(n, c_in * taps, h_out * w_out)
    out = torch.matmul(weight.reshape(c_out, c_in * taps), cols).view(n, c_out, h_out, w_out)
    if bias is not None:
        out = out + bias.view(1, c_out, 1, 1)
    return out[0] if squeeze else out


def pixel_shuffle(input, r):
    """Rearrange (.., C*r*r, H, W) into (.., C, H*r, W*r)."""
    if input.shape[-3] % (r * r):
        raise ConfigError(f"{input.shape[-3]} channels not divisible by r^2={r * r}")
    return F.pixel_shuffle(input, r)


def pixel_unshuffle(input, r):
    """Inverse of :func:`pixel_shuffle`."""
    if input.shape[-2] % r or input.shape[-1] % r:
        raise ConfigError(f"spatial dims {tuple(input.shape[-2:])} not divisible by {r}")
    return F.pixel_unshuffle(input, r)


def bilinear_upsample(input, factor):
    """Upsample by an integer factor with half-pixel centres (align_corners=False)."""
    if factor < 1:
        raise ConfigError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return input
    x, squeeze = _as_batch(input)
    out = F.interpolate(x, scale_factor=factor, mode="bilinear", align_corners=False)
    return out[0] if squeeze else out


class DeformConv2d(nn.Module):
    """Holds the weights of a deformable convolution; offsets come from the caller."""

    def __init__(self, in_channels, out_channels, kernel_size=3, padding=1, deform_groups=1):
        super().__init__()
        if in_channels % deform_groups:
            raise ConfigError(f"deform_groups={deform_groups} must divide in_channels={in_channels}")
        self.padding = padding
        self.deform_groups = deform_groups
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size, kernel_size))
        self.bias = nn.Parameter(torch.empty(out_channels))
        self.reset_parameters()

    def reset_parameters(self):
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        bound = 1 / math.sqrt(self.weight[0].numel())
        nn.init.uniform_(self.bias, -bound, bound)

    def forward(self, x, offset, mask=None):
        return deform_conv2d(x, self.weight, self.bias, offset, mask, padding=self.padding)
