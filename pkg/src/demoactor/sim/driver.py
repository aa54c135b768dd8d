"""Driver and capture adapters that put a SimEnv behind the executor/recorder interfaces."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterable

import numpy as np

from ..clock import VirtualClock
from ..executor import (
    ButtonDown,
    ButtonUp,
    Click,
    DriverError,
    KeyDown,
    KeyUp,
    MoveTo,
    Primitive,
    Scroll,
    TypeText,
    primitive_points,
)
from ..model import Demonstration, Observation
from ..recorder import (
    BUTTON_DOWN,
    BUTTON_UP,
    KEY_DOWN,
    KEY_UP,
    MOVE,
    SCROLL,
    RawEvent,
    RecorderConfig,
    ScriptedHooks,
    is_printable,
    start_session,
    stop_session,
)
from .engine import SimEnv

logger = logging.getLogger(__name__)


class SimDriver:
    """EnvironmentDriver over a SimEnv. Pacing and settle time are virtual."""

    def __init__(self, env: SimEnv, clock: VirtualClock | None = None, pacing_ms: int = 50) -> None:
        self.env = env
        self.clock = clock or VirtualClock()
        self.pacing_ms = pacing_ms
        self.primitives_applied = 0

    def apply(self, primitive: Primitive) -> None:
        w, h = self.env.spec.screen_size
        for p in primitive_points(primitive):
            if not p.within(w, h):
                raise DriverError(f"point {tuple(p)} outside the {w}x{h} screen")
        self.env.apply(primitive)
        self.primitives_applied += 1
        self.clock.advance(self.pacing_ms)

    def capture(self) -> Observation:
        obs = self.env.observe()
        return Observation(
            image_ref=f"sha256:{obs.digest}",
            width=int(obs.pixels.shape[1]),
            height=int(obs.pixels.shape[0]),
            timestamp=self.clock.now(),
            digest=obs.digest,
            pixels=obs.pixels,
        )

    def screen_size(self) -> tuple[int, int]:
        return self.env.spec.screen_size

    def settle(self, ms: float) -> None:
        self.clock.advance(ms)


class SimScreenCapture:
    """ScreenCapture for the recorder: returns the env's current render."""

    def __init__(self, env: SimEnv) -> None:
        self.env = env

    def grab(self) -> np.ndarray:
        return self.env.observe().pixels

    def screen_size(self) -> tuple[int, int]:
        return self.env.spec.screen_size


def raw_to_primitive(ev: RawEvent, pressed: dict, drag_threshold: int) -> Primitive | None:
    """What a real OS would deliver to the app for one hook event."""
    if ev.kind == MOVE:
        return MoveTo(ev.position)
    if ev.kind == BUTTON_DOWN:
        pressed[ev.button] = ev.position
        return ButtonDown(ev.button)
    if ev.kind == BUTTON_UP:
        start = pressed.pop(ev.button, ev.position)
        if max(abs(ev.position.x - start.x), abs(ev.position.y - start.y)) > drag_threshold:
            return ButtonUp(ev.button)
        return Click(start, ev.button)
    if ev.kind == KEY_DOWN:
        return TypeText(ev.key) if is_printable(ev.key) else KeyDown(ev.key)
    if ev.kind == KEY_UP:
        return None if is_printable(ev.key) else KeyUp(ev.key)
    if ev.kind == SCROLL:
        return Scroll(ev.delta)
    return None


def record_scripted(
    env: SimEnv,
    raw_events: Iterable[RawEvent],
    config: RecorderConfig,
    session_id: str | None = None,
) -> tuple[Demonstration, Path]:
    """Record a demo by feeding timestamped raw events to a sim-backed session.

    Frames are sampled on the frame_interval grid before each event is
    delivered. A KeyboardInterrupt while feeding stops early; the bundle is
    still finalized from what was captured.
    """
    clock = VirtualClock()
    hooks = ScriptedHooks()
    session = start_session(config, SimScreenCapture(env), hooks, clock=clock,
                            background=False, session_id=session_id)
    next_frame = config.frame_interval
    pressed: dict = {}
    try:
        for ev in raw_events:
            if ev.timestamp is None:
                raise ValueError("scripted raw events need timestamps")
            while next_frame <= ev.timestamp:
                clock.set(next_frame)
                session.sample_frame()
                next_frame += config.frame_interval
            clock.set(ev.timestamp)
            hooks.emit(ev)
            prim = raw_to_primitive(ev, pressed, config.drag_threshold)
            if prim is not None:
                env.apply(prim)
    except KeyboardInterrupt:
        logger.info("recording interrupted; finalizing %s", session.session_id)
    demo = stop_session(session, env.spec.screen_size)
    return demo, session.bundle_path
