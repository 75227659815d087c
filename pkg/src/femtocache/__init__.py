"""Energy-aware femto-caching with rateless broadcast and mortal-arm bandits."""

from .config import ScenarioConfig, VideoExperimentConfig, load_config
from .simulator import compute_metrics, run_baseline_suite, run_scenario, run_video_experiment

__version__ = "0.1.0"

__all__ = [
    "ScenarioConfig",
    "VideoExperimentConfig",
    "load_config",
    "run_scenario",
    "run_baseline_suite",
    "run_video_experiment",
    "compute_metrics",
]
