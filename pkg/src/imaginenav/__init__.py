"""Imagination-guided object navigation on a deterministic grid world."""

from .metrics import run_ablation, spl, success_rate
from .navloop import Components, EpisodeConfig, EpisodeResult, run_episode
from .world import GridWorld, Pose, WorldParams, generate_world

__version__ = "0.1.0"

__all__ = [
    "Components",
    "EpisodeConfig",
    "EpisodeResult",
    "GridWorld",
    "Pose",
    "WorldParams",
    "generate_world",
    "run_ablation",
    "run_episode",
    "spl",
    "success_rate",
]
