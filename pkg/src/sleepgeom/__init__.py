"""EEG sleep staging from synchrosqueezed spectral features, diffusion geometry and an HMM."""

from .errors import (
    DataError,
    DegeneratePointCloudError,
    DisconnectedGraphError,
    EDFError,
    HypnogramError,
    NumericalError,
    SilentEpochError,
    SleepGeomError,
)
from .ingest import SleepStage
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DataError",
    "DegeneratePointCloudError",
    "DisconnectedGraphError",
    "EDFError",
    "HypnogramError",
    "NumericalError",
    "SilentEpochError",
    "SleepGeomError",
    "SleepStage",
]
