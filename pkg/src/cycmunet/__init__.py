"""Space-time video super-resolution with deformable feature interpolation and a projection cycle."""
from .config import LossWeights, ModelConfig, Schedule, TrainOptions
from .errors import ConfigError, NonFiniteError, TripletLoadError
from .model import CycMuNet, Outputs, count_parameters

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CycMuNet", "LossWeights", "ModelConfig", "NonFiniteError", "Outputs", "Schedule",
    "TrainOptions", "TripletLoadError", "count_parameters",
]
