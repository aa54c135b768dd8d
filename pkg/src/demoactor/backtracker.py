"""Bounded recovery back to a step's checkpoint after a failed attempt."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Callable

from .backends import ImagePart, TextGenBackend, TextPart
from .executor import CompileError, EnvironmentDriver, MAX_PRIMITIVES_PER_COMMAND, compile_command, execute
from .grounder import GroundingInterface, ground, to_command
from .model import (
    ActionClass,
    GroundedCommand,
    InstructionFileError,
    ModelError,
    Observation,
    parse_instruction_file,
)

logger = logging.getLogger(__name__)

MEMORY_HEADER = "Previous recovery attempts (JSON):"
RECOVERED = "recovered"
GAVE_UP = "gave_up"


class RecoveryPlanError(RuntimeError):
    pass


class MemoryFull(ModelError):
    pass


@dataclass(frozen=True)
class RecoveryConfig:
    max_recovery_attempts: int = 3
    max_recovery_steps_per_attempt: int = 5

    def __post_init__(self) -> None:
        if self.max_recovery_attempts < 1 or self.max_recovery_steps_per_attempt < 1:
            raise ModelError("recovery caps must be >= 1")

    @property
    def primitive_bound(self) -> int:
        return self.max_recovery_attempts * self.max_recovery_steps_per_attempt * MAX_PRIMITIVES_PER_COMMAND


@dataclass(frozen=True)
class Checkpoint:
    step_index: int
    obs: Observation


class AttemptMemory:
    """Append-only record of recovery attempts, plus free-form notes."""

    def __init__(self, cap: int = 16) -> None:
        if cap < 1:
            raise ModelError("memory cap must be >= 1")
        self.cap = cap
        self._records: list[dict[str, Any]] = []
        self.notes: list[str] = []

    def add(self, record: dict[str, Any]) -> None:
        if len(self._records) >= self.cap:
            raise MemoryFull(f"attempt memory is capped at {self.cap}")
        self._records.append(dict(record))

    def note(self, text: str) -> None:
        self.notes.append(text)

    @property
    def records(self) -> tuple[dict[str, Any], ...]:
        return tuple(dict(r) for r in self._records)

    def __len__(self) -> int:
        return len(self._records)

    def to_json(self) -> str:
        return json.dumps({"records": self._records, "notes": self.notes}, ensure_ascii=False)


def load_prompt(name: str) -> str:
    return resources.files("demoactor").joinpath("prompts", name).read_text(encoding="utf-8")


def digests_match(current: Observation, target: Observation) -> bool:
    return current.digest == target.digest


def plan_recovery(
    current: Observation,
    target: Checkpoint,
    memory: AttemptMemory,
    planner: TextGenBackend,
    grounder: GroundingInterface,
    config: RecoveryConfig = RecoveryConfig(),
) -> list[GroundedCommand]:
    """Ask the planner for a way back and ground its steps on the current screen.

    Only the steps that can be grounded on ``current`` are kept; later steps
    usually refer to screens that are not visible yet and are re-planned by the
    next attempt.
    """
    if current.digest == target.obs.digest:
        return []
    return _plan(current, target, memory, planner, grounder, config)[1]


def _plan(current, target, memory, planner, grounder, config) -> tuple[list[str], list[GroundedCommand]]:
    parts = [
        TextPart(load_prompt("recovery_v1.txt")),
        ImagePart(current, "current"),
        ImagePart(target.obs, "target"),
        TextPart(MEMORY_HEADER + memory.to_json()),
    ]
    try:
        reply = planner.generate(parts)
    except Exception as exc:
        raise RecoveryPlanError(f"planner failed: {exc}") from exc
    if not reply.strip():
        raise RecoveryPlanError("planner returned no plan")
    try:
        steps = list(parse_instruction_file(reply, task_id="recovery"))
    except InstructionFileError as exc:
        raise RecoveryPlanError(f"unparseable plan: {exc}") from exc
    cap = config.max_recovery_steps_per_attempt
    if len(steps) > cap:
        memory.note(f"plan of {len(steps)} steps truncated to {cap}")
        steps = steps[:cap]

    commands: list[GroundedCommand] = []
    for k, step in enumerate(steps):
        try:
            tgt = ground(step, current, grounder) if step.action_class is ActionClass.POINTER else None
            commands.append(to_command(step, tgt, target.step_index))
        except Exception as exc:
            if k == 0:
                raise RecoveryPlanError(f"first plan step could not be grounded: {exc}") from exc
            memory.note(f"plan cut at step {k}: {exc}")
            break
    return [s.action_text for s in steps], commands


@dataclass
class RecoveryResult:
    status: str
    attempts: int
    commands: list[GroundedCommand] = field(default_factory=list)
    primitives: int = 0
    planner_calls: int = 0

    @property
    def recovered(self) -> bool:
        return self.status == RECOVERED


def run_recovery(
    driver: EnvironmentDriver,
    checkpoint: Checkpoint,
    memory: AttemptMemory,
    planner: TextGenBackend,
    grounder: GroundingInterface,
    config: RecoveryConfig = RecoveryConfig(),
    matches: Callable[[Observation, Observation], bool] = digests_match,
) -> RecoveryResult:
    """Plan, execute one command at a time, and stop as soon as the state matches."""
    current = driver.capture()
    if matches(current, checkpoint.obs):
        return RecoveryResult(RECOVERED, attempts=0)
    result = RecoveryResult(GAVE_UP, attempts=0)
    for attempt in range(1, config.max_recovery_attempts + 1):
        result.attempts = attempt
        record: dict[str, Any] = {"attempt": attempt, "from_digest": current.digest,
                                  "plan": [], "results": [], "error": None}
        result.planner_calls += 1
        try:
            record["plan"], plan = _plan(current, checkpoint, memory, planner, grounder, config)
        except RecoveryPlanError as exc:
            record["error"] = str(exc)
            memory.add(record)
            continue
        matched = False
        for cmd in plan:
            try:
                script = compile_command(cmd)
            except CompileError as exc:
                record["error"] = str(exc)
                break
            report = execute(script, driver)
            result.primitives += report.primitives_applied
            result.commands.append(cmd)
            if not report.ok:
                record["results"].append("execution failed")
                record["error"] = report.failed_primitive[1]
                break
            current = driver.capture()
            matched = matches(current, checkpoint.obs)
            record["results"].append("matched" if matched else "diverged")
            if matched:
                break
        memory.add(record)
        if matched:
            result.status = RECOVERED
            return result
        current = driver.capture()
    return result

