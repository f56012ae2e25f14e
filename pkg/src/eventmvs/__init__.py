"""Event-camera multi-view stereo by space sweep, with a fixed-point datapath
and an analytic accelerator performance model."""

from .config import RunConfig, load_config
from .event_io import Calibration, Events, ParseError, TrajectorySample, ValidationError
from .sweep import RunResult, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Calibration",
    "Events",
    "ParseError",
    "RunConfig",
    "RunResult",
    "TrajectorySample",
    "ValidationError",
    "load_config",
    "run_pipeline",
]
