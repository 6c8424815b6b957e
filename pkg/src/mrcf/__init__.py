"""Multi-resolution correlation-filter tracking with a learned response decoder."""

__version__ = "0.1.0"

from .config import TrackerConfig, load_config, parse_config_text
from .tracker import init_tracker, run_sequence, track_step

__all__ = [
    "__version__",
    "TrackerConfig",
    "load_config",
    "parse_config_text",
    "init_tracker",
    "track_step",
    "run_sequence",
]
