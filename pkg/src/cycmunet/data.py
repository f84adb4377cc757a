"""Triplet datasets, bicubic degradation, augmentation and batching.

Frames live as float32 numpy arrays of shape (3, H, W) with values in [0, 1].
Only batches are converted to torch tensors.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, TripletLoadError

log = logging.getLogger(__name__)

FRAME_NAMES = ("im1.png", "im2.png", "im3.png")


# ---------------------------------------------------------------------------
# containers

@dataclass(frozen=True)
class Triplet:
    frames: tuple
    source_id: str = ""

    def __post_init__(self):
        if len(self.frames) != 3:
            raise ConfigError(f"a triplet needs 3 frames, got {len(self.frames)}")
        shapes = {f.shape for f in self.frames}
        if len(shapes) != 1:
            raise ConfigError(f"triplet frames differ in shape: {sorted(shapes)}")
        for f in self.frames:
            f.setflags(write=False)


@dataclass(frozen=True)
class TrainSample:
    lr_inputs: tuple          # (L_0, L_1)
    lr_gt_mid: np.ndarray     # L_t ground truth
    hr_gt: tuple              # (H_0, H_t, H_1) ground truth
    scale: int

    def __post_init__(self):
        h, w = self.lr_gt_mid.shape[-2:]
        for f in self.hr_gt:
            if f.shape[-2:] != (h * self.scale, w * self.scale):
                raise ConfigError(
                    f"HR frame {f.shape[-2:]} is not {self.scale}x the LR frame {(h, w)}")


@dataclass
class Batch:
    lr0: torch.Tensor
    lr1: torch.Tensor
    lr_mid: torch.Tensor
    hr0: torch.Tensor
    hrt: torch.Tensor
    hr1: torch.Tensor
    crops: list = field(default_factory=list)

    @property
    def targets(self):
        return self.lr_mid, self.hr0, self.hrt, self.hr1


# ---------------------------------------------------------------------------
# bicubic resampling

def cubic(t, a=-0.5):
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2) * t3 - (a + 3) * t2 + 1
    far = a * t3 - 5 * a * t2 + 8 * a * t - 4 * a
    return np.where(t <= 1, near, np.where(t < 2, far, 0.0))


def resample_matrix(n_in, n_out, a=-0.5):
    """(n_out, n_in) bicubic weights; kernel widened by the factor when shrinking.

    Taps falling off the edge are dropped and the rest renormalised, so every
    row sums to one.
    """
    scale = n_in / n_out
    width = max(scale, 1.0)
    centres = (np.arange(n_out) + 0.5) * scale
    pos = np.arange(n_in) + 0.5
    w = cubic((pos[None, :] - centres[:, None]) / width, a)
    return w / w.sum(axis=1, keepdims=True)


def resize_bicubic(img, out_h, out_w):
    """Separable bicubic resize of a (..., H, W) array, computed in float64."""
    h, w = img.shape[-2:]
    ry = resample_matrix(h, out_h)
    rx = resample_matrix(w, out_w)
    return np.einsum("ih,...hw,jw->...ij", ry, np.asarray(img, dtype=np.float64), rx)


def degrade_bicubic(frame, scale):
    """Antialiased bicubic downscale by an integer factor, clamped to [0, 1]."""
    h, w = frame.shape[-2:]
    if scale < 1 or h % scale or w % scale:
        raise ConfigError(f"frame {h}x{w} not divisible by scale {scale}")
    out = resize_bicubic(frame, h // scale, w // scale)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def upscale_bicubic(frame, scale):
    h, w = frame.shape[-2:]
    return resize_bicubic(frame, h * scale, w * scale).astype(np.float32)


def make_sample(triplet, scale):
    hr = tuple(np.asarray(f, dtype=np.float32) for f in triplet.frames)
    lr = tuple(degrade_bicubic(f, scale) for f in hr)
    return TrainSample(lr_inputs=(lr[0], lr[2]), lr_gt_mid=lr[1], hr_gt=hr, scale=scale)


# ---------------------------------------------------------------------------
# PNG I/O

def read_png(path):
    """8-bit PNG -> float32 (3, H, W) in [0, 1]; grayscale is replicated to RGB."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def quantize(frame):
    """Clamp to [0, 1] and round half up onto the 8-bit grid."""
    return np.floor(np.clip(np.asarray(frame, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(path, frame):
    q = quantize(frame)
    if q.ndim == 3:
        q = q[0] if q.shape[0] == 1 else q.transpose(1, 2, 0)
    Image.fromarray(q).save(path)


# ---------------------------------------------------------------------------
# Vimeo-style directory layout

def read_split_list(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


def load_vimeo_triplets(root_dir, split_list, strict=False):
    """Yield triplets from ``root/sequences/<seq>/<clip>/im{1,2,3}.png``.

    Clips are visited in split-list order.  A broken clip raises
    :class:`TripletLoadError` when ``strict``; otherwise it is logged and skipped.
    """
    root = Path(root_dir)
    for entry in read_split_list(split_list):
        clip = root / "sequences" / entry
        try:
            frames = []
            for name in FRAME_NAMES:
                path = clip / name
                if not path.is_file():
                    raise TripletLoadError(path, "missing frame")
                try:
                    frames.append(read_png(path))
                except OSError as exc:
                    raise TripletLoadError(path, f"cannot decode ({exc})") from exc
            if len({f.shape for f in frames}) != 1:
                raise TripletLoadError(clip, "frames differ in size")
            extra = sorted(p.name for p in clip.glob("im*.png") if p.name not in FRAME_NAMES)
            if extra:
                raise TripletLoadError(clip, f"expected 3 frames, found extra {extra}")
        except TripletLoadError as err:
            if strict:
                raise
            log.warning("skipping triplet: %s", err)
            continue
        yield Triplet(tuple(frames), entry)


def write_vimeo_triplets(root_dir, triplets, list_name="tri_testlist.txt", sequence="synth"):
    """Write triplets in the Vimeo layout and return the split-list path."""
    root = Path(root_dir)
    entries = []
    for i, tri in enumerate(triplets):
        entry = f"{sequence}/{i:04d}"
        clip = root / "sequences" / entry
        clip.mkdir(parents=True, exist_ok=True)
        for name, frame in zip(FRAME_NAMES, tri.frames):
            write_png(clip / name, frame)
        entries.append(entry)
    split = root / list_name
    split.write_text("".join(e + "\n" for e in entries), encoding="utf-8")
    return split


# ---------------------------------------------------------------------------
# augmentation

def apply_augmentation(sample, hflip=False, vflip=False, reverse=False):
    def flip(f):
        if hflip:
            f = f[..., ::-1]
        if vflip:
            f = f[..., ::-1, :]
        return np.ascontiguousarray(f)

    lr0, lr1 = (flip(f) for f in sample.lr_inputs)
    h0, ht, h1 = (flip(f) for f in sample.hr_gt)
    mid = flip(sample.lr_gt_mid)
    if reverse:
        lr0, lr1 = lr1, lr0
        h0, h1 = h1, h0
    return TrainSample((lr0, lr1), mid, (h0, ht, h1), sample.scale)


def augment(sample, rng):
    """Horizontal flip, vertical flip and temporal reversal, each with probability 1/2."""
    hflip, vflip, reverse = (rng.random(3) < 0.5).tolist()
    return apply_augmentation(sample, hflip, vflip, reverse)


# ---------------------------------------------------------------------------
# synthetic moving-shape triplets

def _ramp(d):
    # one-pixel linear edge: coverage of a pixel whose centre is d inside the boundary
    return np.clip(d + 0.5, 0.0, 1.0)


@dataclass(frozen=True)
class Disc:
    cy: float
    cx: float
    radius: float
    color: tuple

    def moved(self, dy, dx):
        return Disc(self.cy + dy, self.cx + dx, self.radius, self.color)

    def paint(self, ys, xs):
        alpha = _ramp(self.radius - np.hypot(ys - self.cy, xs - self.cx))
        return alpha, np.asarray(self.color, dtype=np.float64)[:, None, None]


@dataclass(frozen=True)
class Rect:
    cy: float
    cx: float
    half_h: float
    half_w: float
    color: tuple

    def moved(self, dy, dx):
        return Rect(self.cy + dy, self.cx + dx, self.half_h, self.half_w, self.color)

    def paint(self, ys, xs):
        alpha = _ramp(self.half_h - np.abs(ys - self.cy)) * _ramp(self.half_w - np.abs(xs - self.cx))
        return alpha, np.asarray(self.color, dtype=np.float64)[:, None, None]


@dataclass(frozen=True)
class Grating:
    """Rectangular patch filled with a sinusoid that travels with the patch."""
    cy: float
    cx: float
    half_h: float
    half_w: float
    period: float
    angle: float
    color_a: tuple
    color_b: tuple

    def moved(self, dy, dx):
        return Grating(self.cy + dy, self.cx + dx, self.half_h, self.half_w,
                       self.period, self.angle, self.color_a, self.color_b)

    def paint(self, ys, xs):
        alpha = _ramp(self.half_h - np.abs(ys - self.cy)) * _ramp(self.half_w - np.abs(xs - self.cx))
        u = (ys - self.cy) * math.cos(self.angle) + (xs - self.cx) * math.sin(self.angle)
        mix = 0.5 + 0.5 * np.sin(2 * math.pi * u / self.period)
        a = np.asarray(self.color_a, dtype=np.float64)[:, None, None]
        b = np.asarray(self.color_b, dtype=np.float64)[:, None, None]
        return alpha, a * mix + b * (1 - mix)


@dataclass(frozen=True)
class Scene:
    size: tuple
    background: tuple          # (top-left colour, bottom-right colour), static
    shapes: tuple
    velocity: tuple            # (vy, vx) in pixels per frame interval

    def render(self, tau):
        """Render the scene at time ``tau`` in [0, 1]; shapes sit at p0 + tau * v."""
        h, w = self.size
        ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
        ramp = (ys / max(h - 1, 1) + xs / max(w - 1, 1)) / 2
        c0 = np.asarray(self.background[0], dtype=np.float64)[:, None, None]
        c1 = np.asarray(self.background[1], dtype=np.float64)[:, None, None]
        img = c0 * (1 - ramp) + c1 * ramp
        dy, dx = tau * self.velocity[0], tau * self.velocity[1]
        for shape in self.shapes:
            alpha, color = shape.moved(dy, dx).paint(ys, xs)
            img = img * (1 - alpha) + color * alpha
        return np.clip(img, 0.0, 1.0).astype(np.float32)

    def triplet(self, source_id=""):
        return Triplet((self.render(0.0), self.render(0.5), self.render(1.0)), source_id)


def random_scene(rng, size, max_speed=4.0, n_shapes=(3, 7)):
    h, w = size
    color = lambda: tuple(rng.uniform(0.0, 1.0, 3).tolist())
    speed = rng.uniform(0.0, max_speed)
    heading = rng.uniform(0.0, 2 * math.pi)
    velocity = (speed * math.sin(heading), speed * math.cos(heading))
    shapes = []
    for _ in range(int(rng.integers(n_shapes[0], n_shapes[1] + 1))):
        kind = rng.integers(3)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        extent = min(h, w)
        if kind == 0:
            shapes.append(Disc(cy, cx, rng.uniform(0.06, 0.2) * extent, color()))
        elif kind == 1:
            shapes.append(Rect(cy, cx, rng.uniform(0.05, 0.2) * extent, rng.uniform(0.05, 0.2) * extent, color()))
        else:
            shapes.append(Grating(cy, cx, rng.uniform(0.1, 0.25) * extent, rng.uniform(0.1, 0.25) * extent,
                                  rng.uniform(4.0, 12.0), rng.uniform(0, math.pi), color(), color()))
    return Scene((h, w), (color(), color()), tuple(shapes), velocity)


def synth_triplets(count, size, rng, materialize=None):
    """Yield ``count`` synthetic triplets of moving anti-aliased shapes.

    The middle frame is rendered at half displacement, so the motion ground
    truth is exact.  With ``materialize`` set to a directory the triplets are
    also written there in the Vimeo layout.
    """
    h, w = size
    if h < 32 or w < 32 or h % 8 or w % 8:
        raise ConfigError(f"synthetic frames must be >= 32 and divisible by 8, got {size}")
    triplets = [random_scene(rng, size).triplet(f"synth/{i:04d}") for i in range(count)]
    if materialize is not None:
        write_vimeo_triplets(materialize, triplets)
    yield from triplets


# ---------------------------------------------------------------------------
# batching

def make_batch(samples, patch, rng):
    """Stack samples into tensors with co-located random crops.

    ``patch`` is the LR crop size (None keeps full frames); the HR crop is
    ``patch * scale`` at the matching position.
    """
    if not samples:
        raise ConfigError("cannot batch zero samples")
    scale = samples[0].scale
    h, w = samples[0].lr_gt_mid.shape[-2:]
    if patch is None:
        patch = min(h, w)
    if patch > h or patch > w or patch < 1:
        raise ConfigError(f"patch {patch} does not fit LR frames {h}x{w}")
    fields = {k: [] for k in ("lr0", "lr1", "lr_mid", "hr0", "hrt", "hr1")}
    crops = []
    for s in samples:
        if s.scale != scale or s.lr_gt_mid.shape[-2:] != (h, w):
            raise ConfigError("all samples in a batch must share scale and size")
        y = int(rng.integers(0, h - patch + 1))
        x = int(rng.integers(0, w - patch + 1))
        crops.append((y, x))
        lr = np.s_[..., y:y + patch, x:x + patch]
        hr = np.s_[..., y * scale:(y + patch) * scale, x * scale:(x + patch) * scale]
        fields["lr0"].append(s.lr_inputs[0][lr])
        fields["lr1"].append(s.lr_inputs[1][lr])
        fields["lr_mid"].append(s.lr_gt_mid[lr])
        for key, f in zip(("hr0", "hrt", "hr1"), s.hr_gt):
            fields[key].append(f[hr])
    tensors = {k: torch.from_numpy(np.ascontiguousarray(np.stack(v))).float() for k, v in fields.items()}
    return Batch(crops=crops, **tensors)
