"""Adversarial safety-critical driving scenario generation."""

from .behaviors import BehaviorSpec, IntentLabel, builtin_library, infer_endpoint
from .engine import (
    EgoPolicy,
    EpisodeResult,
    RefinementConfig,
    generate_episode,
    raw_baseline,
    rollout,
    run_campaign,
)
from .membank import MemoryBank
from .metrics import CollisionConfig, kl_divergence, min_ttc
from .scene import Scenario, load_scenario, save_scenario
from .synthetic import synth_scenario

__version__ = "0.1.0"

__all__ = [
    "BehaviorSpec",
    "CollisionConfig",
    "EgoPolicy",
    "EpisodeResult",
    "IntentLabel",
    "MemoryBank",
    "RefinementConfig",
    "Scenario",
    "builtin_library",
    "generate_episode",
    "infer_endpoint",
    "kl_divergence",
    "load_scenario",
    "min_ttc",
    "raw_baseline",
    "rollout",
    "run_campaign",
    "save_scenario",
    "synth_scenario",
    "__version__",
]
