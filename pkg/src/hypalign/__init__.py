"""Lorentz-model hyperbolic alignment of paired feature sequences."""

from .aggregation import ModalityScale, RootEmbedding, aggregate
from .config import RunConfig, SynthSpec, TrainConfig
from .encoder import FeatureSequence
from .errors import (ConfigError, FormatError, HypalignError, NumericError,
                     SaturationError, UsageError)
from .geometry import (Curvature, LorentzPoint, TangentVector, exp_map,
                       exp_map_origin, exterior_angle, half_aperture, lift,
                       lorentz_distance, origin)
from .losses import BatchPairing, LossConfig
from .model import HyperbolicAligner

__all__ = [
    "ModalityScale", "RootEmbedding", "aggregate",
    "RunConfig", "SynthSpec", "TrainConfig",
    "FeatureSequence",
    "ConfigError", "FormatError", "HypalignError", "NumericError",
    "SaturationError", "UsageError",
    "Curvature", "LorentzPoint", "TangentVector", "exp_map", "exp_map_origin",
    "exterior_angle", "half_aperture", "lift", "lorentz_distance", "origin",
    "BatchPairing", "LossConfig",
    "HyperbolicAligner",
]

__version__ = "0.1.0"
