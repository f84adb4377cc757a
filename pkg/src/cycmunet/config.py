"""Hyperparameter containers and the flat ``key = value`` config-file format."""
import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

VARIANTS = ("a", "b", "c", "d")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``variant`` selects the ablation graph: (a) fused interpolation without
    offsets and a pixel-shuffle head, (b) deformable interpolation with the
    same head, (c) deformable interpolation plus constant-resolution projection
    units, (d) the full up/down projection cycle.
    """
    base_channels: int = 64
    num_units: int = 6
    scale: int = 4
    pyramid_levels: int = 3
    deform_groups: int = 8
    kernel_size: int = 3
    use_modulation: bool = True
    num_fusion_resblocks: int = 2
    num_fe_resblocks: int = 5
    variant: str = "d"

    def __post_init__(self):
        if self.base_channels < 1:
            raise ConfigError("base_channels must be positive")
        if self.num_units < 1:
            raise ConfigError(f"num_units must be >= 1, got {self.num_units}")
        if self.scale not in (2, 4, 8):
            raise ConfigError(f"scale must be 2, 4 or 8, got {self.scale}")
        if self.pyramid_levels < 1:
            raise ConfigError("pyramid_levels must be >= 1")
        if self.deform_groups < 1 or self.base_channels % self.deform_groups:
            raise ConfigError(
                f"deform_groups={self.deform_groups} must divide base_channels={self.base_channels}")
        if self.kernel_size % 2 == 0:
            raise ConfigError("kernel_size must be odd")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def taps(self):
        return self.kernel_size * self.kernel_size

    @property
    def size_multiple(self):
        """LR inputs must have height and width divisible by this."""
        return 2 ** (self.pyramid_levels - 1)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 4e-4
    decay_factor: float = 0.1
    decay_every: int = 20
    total_epochs: int = 70

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError("base_lr must be positive")
        if not 0 < self.decay_factor < 1:
            raise ConfigError("decay_factor must lie in (0, 1)")
        if self.decay_every < 1 or self.total_epochs < 1:
            raise ConfigError("decay_every and total_epochs must be >= 1")


@dataclass(frozen=True)
class LossWeights:
    omega: float = 1e-3
    lambda_lt: float = 1.0
    lambda_ht: float = 1.0
    lambda_h0: float = 0.5
    lambda_h1: float = 0.5

    def __post_init__(self):
        if min(dataclasses.astuple(self)) <= 0:
            raise ConfigError("loss constants must all be positive")


@dataclass(frozen=True)
class TrainOptions:
    batch_size: int = 10
    patch: int = 64
    steps_per_epoch: int = 0     # 0: one pass over the training samples
    augment: bool = True
    val_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patch < 1:
            raise ConfigError("patch must be >= 1")


def _coerce(raw, typ, key):
    try:
        if typ in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


SECTIONS = (ModelConfig, Schedule, LossWeights, TrainOptions)
_FIELD_TYPES = {f.name: f.type for cls in SECTIONS for f in fields(cls)}


def parse_config_text(text):
    """Parse ``key = value`` lines ('#' starts a comment) into typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(raw, _FIELD_TYPES[key], key)
    return values


def load_config_file(path):
    try:
        return parse_config_text(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def build_sections(values):
    """Split a flat key/value mapping into (ModelConfig, Schedule, LossWeights, TrainOptions)."""
    out = []
    for cls in SECTIONS:
        names = {f.name for f in fields(cls)}
        out.append(cls(**{k: v for k, v in values.items() if k in names}))
    return tuple(out)


def format_config(*sections):
    lines = []
    for section in sections:
        for f in fields(section):
            lines.append(f"{f.name} = {getattr(section, f.name)}")
    return "\n".join(lines) + "\n"
