"""Deterministic GUI simulator used as a test environment and by the scripted oracles."""

from .engine import SimEnv, SimObservation, SimState, apply, check_goal, observe, reset
from .world import WorldSpec, WorldValidationError, load_world

__all__ = [
    "SimEnv", "SimObservation", "SimState", "WorldSpec", "WorldValidationError",
    "apply", "check_goal", "load_world", "observe", "reset",
]
