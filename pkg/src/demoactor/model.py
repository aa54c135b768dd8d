"""Shared domain types, the instruction-file format, and small pure utilities."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, NamedTuple

import numpy as np


class ModelError(ValueError):
    """Base class for domain validation failures."""


class DomainError(ModelError):
    pass


class InstructionFileError(ModelError):
    pass


class InstructionParseError(InstructionFileError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class InstructionSchemaError(InstructionFileError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyInstructionsError(InstructionFileError):
    pass


class RunLogInvariantError(ModelError):
    pass


class Point(NamedTuple):
    x: int
    y: int

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x < width and 0 <= self.y < height


def as_point(value: Any) -> Point | None:
    if value is None:
        return None
    x, y = value
    return Point(int(x), int(y))


class EventKind(str, Enum):
    LEFT_CLICK = "left_click"
    RIGHT_CLICK = "right_click"
    DOUBLE_CLICK = "double_click"
    DRAG = "drag"
    KEY_PRESS = "key_press"
    TEXT_BURST = "text_burst"
    SCROLL = "scroll"

    @property
    def is_pointer(self) -> bool:
        return self not in (EventKind.KEY_PRESS, EventKind.TEXT_BURST)


class ActionClass(str, Enum):
    POINTER = "pointer"
    TEXT_INPUT = "text_input"
    KEY_PRESS = "key_press"


class Verification(str, Enum):
    YES = "yes"
    NO = "no"
    SKIPPED = "skipped"


class Outcome(str, Enum):
    SUCCESS = "success"
    FAILED = "failed"
    BUDGET_EXHAUSTED = "budget_exhausted"


# ---------------------------------------------------------------------------
# Events and observations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InputEvent:
    kind: EventKind
    timestamp: int
    position: Point | None = None
    end_position: Point | None = None
    key: str | None = None
    text: str | None = None
    scroll_delta: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EventKind(self.kind))
        object.__setattr__(self, "position", as_point(self.position))
        object.__setattr__(self, "end_position", as_point(self.end_position))
        if self.timestamp < 0:
            raise ModelError(f"negative timestamp {self.timestamp}")
        if self.kind.is_pointer:
            if self.position is None:
                raise ModelError(f"{self.kind.value} event needs a position")
        elif self.position is not None or self.end_position is not None:
            raise ModelError(f"{self.kind.value} event must not carry a position")
        if (self.kind is EventKind.DRAG) != (self.end_position is not None):
            raise ModelError("end_position is required for drag and only for drag")
        if self.kind is EventKind.KEY_PRESS and not self.key:
            raise ModelError("key_press event needs a key")
        if self.kind is EventKind.TEXT_BURST and self.text is None:
            raise ModelError("text_burst event needs text")

    def within(self, width: int, height: int) -> bool:
        points = [p for p in (self.position, self.end_position) if p is not None]
        return all(p.within(width, height) for p in points)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "timestamp": self.timestamp}
        if self.position is not None:
            out["position"] = list(self.position)
        if self.end_position is not None:
            out["end_position"] = list(self.end_position)
        if self.key is not None:
            out["key"] = self.key
        if self.text is not None:
            out["text"] = self.text
        if self.scroll_delta:
            out["scroll_delta"] = self.scroll_delta
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> InputEvent:
        return cls(
            kind=EventKind(data["kind"]),
            timestamp=int(data["timestamp"]),
            position=as_point(data.get("position")),
            end_position=as_point(data.get("end_position")),
            key=data.get("key"),
            text=data.get("text"),
            scroll_delta=int(data.get("scroll_delta", 0)),
        )


def pixel_digest(pixels: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(f"{pixels.shape[1]}x{pixels.shape[0]}:".encode())
    h.update(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class Observation:
    """A screenshot. Identity is the pixel digest; the raster rides along uncompared."""

    image_ref: str
    width: int
    height: int
    timestamp: int
    digest: str
    pixels: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ModelError("observation dimensions must be positive")

    @classmethod
    def from_pixels(
        cls, pixels: np.ndarray, timestamp: int, digest: str | None = None
    ) -> Observation:
        arr = np.array(pixels, dtype=np.uint8, copy=True)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ModelError(f"expected an HxWx3 raster, got shape {arr.shape}")
        arr.setflags(write=False)
        digest = digest or pixel_digest(arr)
        return cls(
            image_ref=f"sha256:{digest}",
            width=int(arr.shape[1]),
            height=int(arr.shape[0]),
            timestamp=int(timestamp),
            digest=digest,
            pixels=arr,
        )

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height


@dataclass(frozen=True)
class DemoStep:
    obs_before: Observation
    event: InputEvent
    obs_after: Observation

    def __post_init__(self) -> None:
        if not (self.obs_before.timestamp <= self.event.timestamp < self.obs_after.timestamp):
            raise ModelError(
                "demo step ordering violated: "
                f"{self.obs_before.timestamp} <= {self.event.timestamp} < {self.obs_after.timestamp}"
            )


@dataclass(frozen=True)
class Demonstration:
    steps: tuple[DemoStep, ...]
    screen_size: tuple[int, int]
    session_id: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        object.__setattr__(self, "screen_size", tuple(self.screen_size))
        w, h = self.screen_size
        last = -1
        for i, step in enumerate(self.steps):
            for obs in (step.obs_before, step.obs_after):
                if obs.size != (w, h):
                    raise ModelError(f"step {i}: observation size {obs.size} != screen {w}x{h}")
            if not step.event.within(w, h):
                raise ModelError(f"step {i}: event position outside the screen")
            if step.event.timestamp <= last:
                raise ModelError(f"step {i}: timestamps must strictly increase")
            last = step.event.timestamp

    def __len__(self) -> int:
        return len(self.steps)


# ---------------------------------------------------------------------------
# Instructions
# ---------------------------------------------------------------------------

TYPE_PREFIX = "TYPE "
PRESS_PREFIX = "PRESS "


def classify_action(action_text: str) -> ActionClass:
    if action_text.startswith(TYPE_PREFIX):
        return ActionClass.TEXT_INPUT
    if action_text.startswith(PRESS_PREFIX):
        return ActionClass.KEY_PRESS
    return ActionClass.POINTER


def _unquote(rest: str) -> str:
    if len(rest) >= 2 and rest[0] == rest[-1] and rest[0] in "'\"":
        return rest[1:-1]
    return rest


def extract_payload(action_text: str) -> str | None:
    """Literal text of a TYPE line or key token of a PRESS line; None for pointer steps."""
    cls = classify_action(action_text)
    if cls is ActionClass.TEXT_INPUT:
        return _unquote(action_text[len(TYPE_PREFIX):])
    if cls is ActionClass.KEY_PRESS:
        return _unquote(action_text[len(PRESS_PREFIX):].strip())
    return None


def type_action_text(text: str) -> str:
    return f"{TYPE_PREFIX}'{text}'"


def press_action_text(key: str) -> str:
    return f"{PRESS_PREFIX}{key}"


@dataclass(frozen=True)
class InstructionStep:
    action_text: str
    action_class: ActionClass
    payload: str | None = None
    # demo-time coordinates; a grounding hint only, never persisted in the file
    source_point: Point | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "action_class", ActionClass(self.action_class))
        object.__setattr__(self, "source_point", as_point(self.source_point))
        if not self.action_text or not self.action_text.strip():
            raise ModelError("action_text must be non-empty")
        if self.action_class is ActionClass.POINTER:
            if self.payload is not None:
                raise ModelError("pointer steps carry no payload")
        elif self.payload is None:
            raise ModelError(f"{self.action_class.value} step needs a payload")

    @classmethod
    def from_text(cls, action_text: str, source_point: Point | None = None) -> InstructionStep:
        return cls(
            action_text=action_text,
            action_class=classify_action(action_text),
            payload=extract_payload(action_text),
            source_point=source_point,
        )


@dataclass(frozen=True)
class InstructionList:
    task_id: str
    steps: tuple[InstructionStep, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "steps", tuple(self.steps))
        if not self.steps:
            raise EmptyInstructionsError("instruction list is empty")

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, index: int) -> InstructionStep:
        return self.steps[index]


def parse_instruction_file(data: bytes | str, task_id: str = "task") -> InstructionList:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    steps: list[InstructionStep] = []
    # records end at "\n" only; U+0085 and U+2028 may appear raw inside strings
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InstructionParseError(lineno, f"malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict) or "action" not in obj:
            raise InstructionSchemaError(lineno, 'missing "action" key')
        action = obj["action"]
        if not isinstance(action, str) or not action.strip():
            raise InstructionSchemaError(lineno, '"action" must be a non-empty string')
        steps.append(InstructionStep.from_text(action))
    if not steps:
        raise EmptyInstructionsError("instruction file contains no steps")
    return InstructionList(task_id=task_id, steps=tuple(steps))


def serialize_instruction_file(instructions: InstructionList) -> bytes:
    lines = [
        json.dumps({"action": step.action_text}, ensure_ascii=False) + "\n"
        for step in instructions.steps
    ]
    return "".join(lines).encode("utf-8")


# ---------------------------------------------------------------------------
# Probability utility
# ---------------------------------------------------------------------------


def chain_success_probability(probs: Iterable[float]) -> float:
    """Probability that every one of a chain of independent steps succeeds."""
    values = [float(p) for p in probs]
    for i, p in enumerate(values):
        if not (0.0 <= p <= 1.0):  # also rejects NaN
            raise DomainError(f"probability at index {i} outside [0, 1]: {p!r}")
    return math.prod(values)


# ---------------------------------------------------------------------------
# Grounded commands and run logs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GroundedCommand:
    kind: EventKind
    origin_step: int
    target: Point | None = None
    payload: str | None = None
    end: Point | None = None
    scroll_delta: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", EventKind(self.kind))
        object.__setattr__(self, "target", as_point(self.target))
        object.__setattr__(self, "end", as_point(self.end))
        if self.kind in (EventKind.LEFT_CLICK, EventKind.RIGHT_CLICK,
                         EventKind.DOUBLE_CLICK, EventKind.DRAG) and self.target is None:
            raise ModelError(f"{self.kind.value} command needs a target")
        if not self.kind.is_pointer and self.payload is None:
            raise ModelError(f"{self.kind.value} command needs a payload")

    def within(self, width: int, height: int) -> bool:
        return all(p.within(width, height) for p in (self.target, self.end) if p is not None)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "origin_step": self.origin_step}
        if self.target is not None:
            out["target"] = list(self.target)
        if self.end is not None:
            out["end"] = list(self.end)
        if self.payload is not None:
            out["payload"] = self.payload
        if self.scroll_delta:
            out["scroll_delta"] = self.scroll_delta
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GroundedCommand:
        return cls(
            kind=EventKind(data["kind"]),
            origin_step=int(data["origin_step"]),
            target=as_point(data.get("target")),
            payload=data.get("payload"),
            end=as_point(data.get("end")),
            scroll_delta=int(data.get("scroll_delta", 0)),
        )


SKIPPED_GROUNDING = "skipped-grounding"


class ErrorClass(str, Enum):
    GROUNDING = "grounding"
    EXECUTION = "execution"
    VERIFICATION = "verification"
    BACKTRACKING = "backtracking"
    BUDGET = "budget"


@dataclass(frozen=True)
class AttemptRecord:
    """One pass of ground, execute, verify for a step, plus any recovery that followed."""

    attempt: int
    command: GroundedCommand | None
    verification: Verification
    rationale: str = ""
    error_class: ErrorClass | None = None
    failure_reason: str | None = None
    backend_failure: bool = False
    recovery_commands: tuple[GroundedCommand, ...] = ()
    recovery_status: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "attempt": self.attempt,
            "command": self.command.to_dict() if self.command else SKIPPED_GROUNDING,
            "verification": self.verification.value,
            "rationale": self.rationale,
            "error_class": self.error_class.value if self.error_class else None,
            "failure_reason": self.failure_reason,
            "backend_failure": self.backend_failure,
            "recovery_commands": [c.to_dict() for c in self.recovery_commands],
            "recovery_status": self.recovery_status,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AttemptRecord:
        cmd = data.get("command")
        return cls(
            attempt=int(data["attempt"]),
            command=None if cmd in (None, SKIPPED_GROUNDING) else GroundedCommand.from_dict(cmd),
            verification=Verification(data["verification"]),
            rationale=data.get("rationale", ""),
            error_class=ErrorClass(data["error_class"]) if data.get("error_class") else None,
            failure_reason=data.get("failure_reason"),
            backend_failure=bool(data.get("backend_failure", False)),
            recovery_commands=tuple(
                GroundedCommand.from_dict(c) for c in data.get("recovery_commands", [])
            ),
            recovery_status=data.get("recovery_status"),
        )


@dataclass(frozen=True)
class StepRecord:
    step_index: int
    action_text: str
    action_class: ActionClass
    verification: Verification
    attempts: tuple[AttemptRecord, ...] = ()
    retries_used: int = 0
    backtrack_attempts: int = 0
    failure_reason: str | None = None
    error_class: ErrorClass | None = None
    memory: tuple[dict[str, Any], ...] = ()

    @property
    def attempted_command(self) -> GroundedCommand | str:
        if self.attempts and self.attempts[-1].command is not None:
            return self.attempts[-1].command
        return SKIPPED_GROUNDING

    @property
    def executed_cleanly(self) -> bool:
        return any(a.command is not None and a.error_class is None for a in self.attempts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "step_index": self.step_index,
            "action_text": self.action_text,
            "action_class": self.action_class.value,
            "verification": self.verification.value,
            "retries_used": self.retries_used,
            "backtrack_attempts": self.backtrack_attempts,
            "failure_reason": self.failure_reason,
            "error_class": self.error_class.value if self.error_class else None,
            "attempts": [a.to_dict() for a in self.attempts],
            "memory": list(self.memory),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> StepRecord:
        return cls(
            step_index=int(data["step_index"]),
            action_text=data["action_text"],
            action_class=ActionClass(data["action_class"]),
            verification=Verification(data["verification"]),
            attempts=tuple(AttemptRecord.from_dict(a) for a in data.get("attempts", [])),
            retries_used=int(data.get("retries_used", 0)),
            backtrack_attempts=int(data.get("backtrack_attempts", 0)),
            failure_reason=data.get("failure_reason"),
            error_class=ErrorClass(data["error_class"]) if data.get("error_class") else None,
            memory=tuple(data.get("memory", [])),
        )


@dataclass(frozen=True)
class RunTotals:
    steps_executed: int = 0
    model_calls: int = 0
    wall_time_ms: float = 0.0
    primitives: int = 0


RUNLOG_SCHEMA = "demoactor.runlog/1"


@dataclass(frozen=True)
class RunLog:
    task_id: str
    records: tuple[StepRecord, ...]
    outcome: Outcome
    totals: RunTotals = RunTotals()

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": RUNLOG_SCHEMA,
            "task_id": self.task_id,
            "outcome": self.outcome.value,
            "totals": {
                "steps_executed": self.totals.steps_executed,
                "model_calls": self.totals.model_calls,
                "wall_time_ms": self.totals.wall_time_ms,
                "primitives": self.totals.primitives,
            },
            "records": [r.to_dict() for r in self.records],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RunLog:
        if data.get("schema") != RUNLOG_SCHEMA:
            raise ModelError(f"unsupported run log schema {data.get('schema')!r}")
        return cls(
            task_id=data["task_id"],
            records=tuple(StepRecord.from_dict(r) for r in data["records"]),
            outcome=Outcome(data["outcome"]),
            totals=RunTotals(**data.get("totals", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> RunLog:
        return cls.from_dict(json.loads(text))

    def commands(self) -> list[GroundedCommand]:
        """Every command the run executed, in execution order (attempts and recoveries)."""
        out: list[GroundedCommand] = []
        for record in self.records:
            for attempt in record.attempts:
                if attempt.command is not None and attempt.error_class is not ErrorClass.BUDGET:
                    out.append(attempt.command)
                out.extend(attempt.recovery_commands)
        return out


def check_run_log(log: RunLog) -> None:
    """Raise RunLogInvariantError if outcome and per-step verdicts disagree."""
    indices = [r.step_index for r in log.records]
    if indices != sorted(set(indices)):
        raise RunLogInvariantError(f"step indices must strictly increase: {indices}")
    all_pass = all(r.verification in (Verification.YES, Verification.SKIPPED) for r in log.records)
    if (log.outcome is Outcome.SUCCESS) != all_pass:
        raise RunLogInvariantError(
            f"outcome {log.outcome.value} inconsistent with verdicts "
            f"{[r.verification.value for r in log.records]}"
        )
    for r in log.records:
        if r.verification is Verification.SKIPPED and r.action_class is ActionClass.POINTER:
            raise RunLogInvariantError(f"step {r.step_index}: pointer step cannot skip verification")
        if (r.action_class is not ActionClass.POINTER and r.executed_cleanly
                and r.verification is not Verification.SKIPPED):
            raise RunLogInvariantError(
                f"step {r.step_index}: executed {r.action_class.value} step must skip verification"
            )
