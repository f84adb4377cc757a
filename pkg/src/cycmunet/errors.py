class ConfigError(ValueError):
    """Raised for inconsistent shapes, sizes or hyperparameters."""


class TripletLoadError(OSError):
    """A triplet on disk could not be decoded; ``path`` names the offending file."""

    def __init__(self, path, reason=""):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}" if reason else self.path)


class NonFiniteError(RuntimeError):
    """Loss or gradient became NaN/Inf during training."""
