"""Record a GUI demonstration, compile it into instructions, and replay it with checks."""

from .model import (
    ActionClass,
    Demonstration,
    GroundedCommand,
    InputEvent,
    InstructionList,
    InstructionStep,
    Observation,
    Outcome,
    RunLog,
    chain_success_probability,
    parse_instruction_file,
    serialize_instruction_file,
)
from .orchestrator import Backends, RunConfig, RunResult, emit_trace, run_task

__version__ = "0.1.0"

__all__ = [
    "ActionClass", "Backends", "Demonstration", "GroundedCommand", "InputEvent", "InstructionList",
    "InstructionStep", "Observation", "Outcome", "RunConfig", "RunLog", "RunResult",
    "chain_success_probability", "emit_trace", "parse_instruction_file", "run_task",
    "serialize_instruction_file",
]
