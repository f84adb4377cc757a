"""PSNR, SSIM and interpolation error on 8-bit quantised frames, plus report writers.

Frames are (C, H, W) arrays or tensors with values nominally in [0, 1].
Both images are clamped and rounded onto the 8-bit grid before comparison.
"""
import csv
import io
import math

import numpy as np
from scipy.signal import convolve2d

from .errors import ConfigError

BT601 = np.array([0.299, 0.587, 0.114])


def _to_numpy(x):
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def to_uint8_values(x):
    """Clamp to [0, 1], round half up to 8-bit, return float64 values in 0..255."""
    return np.floor(np.clip(_to_numpy(x), 0.0, 1.0) * 255.0 + 0.5)


def _pair(a, b):
    a, b = to_uint8_values(a), to_uint8_values(b)
    if a.shape != b.shape:
        raise ConfigError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def luminance(x255):
    """BT.601 luma of (3, H, W) values in 0..255 (no offset, full range)."""
    return np.tensordot(BT601, x255, axes=(0, 0))


def psnr(a, b, channel="rgb"):
    """PSNR in dB; returns ``math.inf`` for identical images."""
    a, b = _pair(a, b)
    if channel == "y":
        a, b = luminance(a), luminance(b)
    elif channel != "rgb":
        raise ConfigError(f"channel must be 'rgb' or 'y', got {channel!r}")
    mse = np.mean((a / 255.0 - b / 255.0) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size=11, sigma=1.5):
    r = size // 2
    g = np.exp(-((np.arange(size) - r) ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _ssim_plane(a, b, window, data_range=255.0):
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    # convolve2d flips the kernel; the Gaussian window is symmetric
    filt = lambda x: convolve2d(x, window, mode="valid")
    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a, b, channel="y", window_size=11, sigma=1.5):
    """Gaussian-window SSIM (K1=0.01, K2=0.03, L=255) averaged over valid windows.

    ``channel='y'`` evaluates BT.601 luma; ``'rgb'`` averages the per-channel SSIM.
    """
    a, b = _pair(a, b)
    if a.shape[-1] < window_size or a.shape[-2] < window_size:
        raise ConfigError(f"image {a.shape[-2:]} smaller than the {window_size}x{window_size} window")
    window = _gaussian_window(window_size, sigma)
    if channel == "y":
        return _ssim_plane(luminance(a), luminance(b), window)
    if channel == "rgb":
        return float(np.mean([_ssim_plane(pa, pb, window) for pa, pb in zip(a, b)]))
    raise ConfigError(f"channel must be 'y' or 'rgb', got {channel!r}")


def interp_error(a, b):
    """RMSE in 0..255 units per channel, averaged over channels."""
    a, b = _pair(a, b)
    per_channel = np.sqrt(np.mean((a - b) ** 2, axis=(-2, -1)))
    return float(np.mean(per_channel))


# ---------------------------------------------------------------------------
# reports

GROUPS = ("ST-VSR", "S-VSR", "T-VSR")


def format_table(rows, group_metrics=("psnr", "ssim", "ie")):
    """Aligned-column text with a PSNR/SSIM/IE triple per evaluation group."""
    head1 = ["dataset", "scale", "M", "params(M)"]
    head2 = ["", "", "", ""]
    for g in GROUPS:
        head1 += [g, "", ""]
        head2 += ["PSNR", "SSIM", "IE"]
    body = []
    for r in rows:
        line = [str(r["dataset"]), str(r["scale"]), str(r["M"]), f"{r['params'] / 1e6:.2f}"]
        for g in GROUPS:
            line += [_fmt(r[g][k], 3 if k != "ssim" else 4) for k in group_metrics]
        body.append(line)
    table = [head1, head2] + body
    widths = [max(len(row[i]) for row in table) for i in range(len(head1))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(row, widths)).rstrip() for row in table) + "\n"


def _fmt(v, digits):
    return "inf" if math.isinf(v) else f"{v:.{digits}f}"


def report_csv(rows):
    buf = io.StringIO()
    fieldnames = ["dataset", "scale", "M", "params"]
    for g in GROUPS:
        fieldnames += [f"{g}_psnr", f"{g}_ssim", f"{g}_ie"]
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        flat = {k: r[k] for k in ("dataset", "scale", "M", "params")}
        for g in GROUPS:
            for k in ("psnr", "ssim", "ie"):
                flat[f"{g}_{k}"] = _fmt(r[g][k], 6)
        writer.writerow(flat)
    return buf.getvalue()
