"""Compile grounded commands into driver primitives and run them."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Protocol, Sequence, Union

from .model import EventKind, GroundedCommand, ModelError, Observation, Point, as_point

logger = logging.getLogger(__name__)

MAX_WAIT_MS = 5000


class CompileError(ModelError):
    pass


class DriverError(RuntimeError):
    """A driver could not apply a primitive."""


@dataclass(frozen=True)
class MoveTo:
    point: Point

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", as_point(self.point))


@dataclass(frozen=True)
class ButtonDown:
    button: str = "left"


@dataclass(frozen=True)
class ButtonUp:
    button: str = "left"


@dataclass(frozen=True)
class Click:
    point: Point
    button: str = "left"
    count: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", as_point(self.point))


@dataclass(frozen=True)
class KeyDown:
    key: str


@dataclass(frozen=True)
class KeyUp:
    key: str


@dataclass(frozen=True)
class TypeText:
    text: str


@dataclass(frozen=True)
class Scroll:
    delta: int


@dataclass(frozen=True)
class Wait:
    ms: int

    def __post_init__(self) -> None:
        if not 0 <= self.ms <= MAX_WAIT_MS:
            raise ModelError(f"wait must be within [0, {MAX_WAIT_MS}] ms, got {self.ms}")


Primitive = Union[MoveTo, ButtonDown, ButtonUp, Click, KeyDown, KeyUp, TypeText, Scroll, Wait]

# drag expands to the longest script
MAX_PRIMITIVES_PER_COMMAND = 4


def primitive_points(p: Primitive) -> tuple[Point, ...]:
    if isinstance(p, (MoveTo, Click)):
        return (p.point,)
    return ()


class EnvironmentDriver(Protocol):
    """Something that can take primitives and produce screenshots.

    ``apply`` raises DriverError when a primitive cannot be applied. A capture
    taken after ``apply`` returns must reflect every applied primitive.
    """

    def apply(self, primitive: Primitive) -> None: ...

    def capture(self) -> Observation: ...

    def screen_size(self) -> tuple[int, int]: ...


def compile_command(cmd: GroundedCommand) -> list[Primitive]:
    kind = cmd.kind
    if kind in (EventKind.LEFT_CLICK, EventKind.RIGHT_CLICK, EventKind.DOUBLE_CLICK):
        if cmd.target is None:
            raise CompileError(f"{kind.value} without a target")
        button = "right" if kind is EventKind.RIGHT_CLICK else "left"
        count = 2 if kind is EventKind.DOUBLE_CLICK else 1
        return [MoveTo(cmd.target), Click(cmd.target, button, count)]
    if kind is EventKind.DRAG:
        if cmd.target is None or cmd.end is None:
            raise CompileError("drag needs a start and an end point")
        return [MoveTo(cmd.target), ButtonDown("left"), MoveTo(cmd.end), ButtonUp("left")]
    if kind is EventKind.TEXT_BURST:
        return [TypeText(cmd.payload or "")]
    if kind is EventKind.KEY_PRESS:
        if not cmd.payload:
            raise CompileError("key_press without a key")
        return [KeyDown(cmd.payload), KeyUp(cmd.payload)]
    if kind is EventKind.SCROLL:
        script: list[Primitive] = [MoveTo(cmd.target)] if cmd.target is not None else []
        script.append(Scroll(cmd.scroll_delta))
        return script
    raise CompileError(f"unsupported command kind {kind!r}")


@dataclass(frozen=True)
class ExecutionReport:
    primitives_applied: int
    script_length: int
    failed_primitive: tuple[int, str] | None = None
    duration_ms: float = 0.0

    @property
    def ok(self) -> bool:
        return self.failed_primitive is None


def execute(script: Sequence[Primitive], driver: EnvironmentDriver) -> ExecutionReport:
    """Apply primitives in order, stopping at the first driver failure."""
    start = time.perf_counter()
    applied = 0
    failure = None
    for index, primitive in enumerate(script):
        try:
            driver.apply(primitive)
        except DriverError as exc:
            logger.info("primitive %d (%r) failed: %s", index, primitive, exc)
            failure = (index, str(exc))
            break
        applied += 1
    return ExecutionReport(
        primitives_applied=applied,
        script_length=len(script),
        failed_primitive=failure,
        duration_ms=(time.perf_counter() - start) * 1000.0,
    )


_PRIMITIVE_TYPES = {
    "move_to": MoveTo,
    "button_down": ButtonDown,
    "button_up": ButtonUp,
    "click": Click,
    "key_down": KeyDown,
    "key_up": KeyUp,
    "type_text": TypeText,
    "scroll": Scroll,
    "wait": Wait,
}
_TYPE_NAMES = {cls: name for name, cls in _PRIMITIVE_TYPES.items()}


def primitive_to_dict(p: Primitive) -> dict:
    out = {"type": _TYPE_NAMES[type(p)]}
    for key, value in vars(p).items():
        out[key] = list(value) if isinstance(value, Point) else value
    return out


def primitive_from_dict(data: dict) -> Primitive:
    data = dict(data)
    try:
        cls = _PRIMITIVE_TYPES[data.pop("type")]
    except KeyError as exc:
        raise ModelError(f"unknown primitive type in {data!r}") from exc
    try:
        return cls(**data)
    except TypeError as exc:
        raise ModelError(f"bad {cls.__name__} fields: {exc}") from exc
