"""Record a demonstration as (screenshot before, action, screenshot after) triples.

Raw hook events are queued with timestamps while a sampler keeps a ring of
recent frames. At stop time the queue is coalesced into semantic actions and
each action is paired with the frames around it.
"""

from __future__ import annotations

import bisect
import logging
import tempfile
import threading
import uuid
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .bundle import write_bundle
from .clock import Clock, MonotonicClock
from .model import DemoStep, Demonstration, DomainError, EventKind, InputEvent, ModelError, Observation, Point

logger = logging.getLogger(__name__)


class RecorderConfigError(ModelError):
    pass


class RecorderStartupError(RuntimeError):
    pass


class EmptyDemonstrationError(ModelError):
    pass


@dataclass(frozen=True)
class RecorderConfig:
    frame_interval: int = 100
    double_click_window: int = 400
    text_burst_gap: int = 1000
    settle_delay: int = 300
    drag_threshold: int = 5
    double_click_radius: int = 4
    ring_size: int = 64
    output_dir: Path = field(default_factory=lambda: Path("recordings"))

    def __post_init__(self) -> None:
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        if self.frame_interval < 10:
            raise RecorderConfigError(f"frame_interval must be >= 10 ms, got {self.frame_interval}")
        for name in ("double_click_window", "text_burst_gap", "settle_delay", "ring_size"):
            if getattr(self, name) <= 0:
                raise RecorderConfigError(f"{name} must be positive")
        if self.drag_threshold < 0 or self.double_click_radius < 0:
            raise RecorderConfigError("pixel thresholds must be non-negative")


# ---------------------------------------------------------------------------
# Raw events and coalescing
# ---------------------------------------------------------------------------

KEY_DOWN, KEY_UP = "key_down", "key_up"
BUTTON_DOWN, BUTTON_UP = "button_down", "button_up"
MOVE, SCROLL = "move", "scroll"
RAW_KINDS = (KEY_DOWN, KEY_UP, BUTTON_DOWN, BUTTON_UP, MOVE, SCROLL)

MODIFIER_ORDER = ("ctrl", "alt", "shift", "cmd")
_ALIASES = {
    "control": "ctrl", "ctrl_l": "ctrl", "ctrl_r": "ctrl",
    "alt_l": "alt", "alt_r": "alt", "alt_gr": "alt", "option": "alt",
    "shift_l": "shift", "shift_r": "shift",
    "cmd_l": "cmd", "cmd_r": "cmd", "super": "cmd", "win": "cmd", "meta": "cmd",
    "space": " ",
}


def normalize_key(key: str) -> str:
    if len(key) == 1:
        return key
    low = key.lower()
    return _ALIASES.get(low, low)


def is_printable(key: str) -> bool:
    return len(key) == 1 and key.isprintable()


@dataclass(frozen=True)
class RawEvent:
    kind: str
    timestamp: int | None = None
    position: Point | None = None
    key: str | None = None
    button: str = "left"
    delta: int = 0

    def __post_init__(self) -> None:
        if self.kind not in RAW_KINDS:
            raise ModelError(f"unknown raw event kind {self.kind!r}")
        if self.position is not None:
            object.__setattr__(self, "position", Point(int(self.position[0]), int(self.position[1])))
        if self.kind in (KEY_DOWN, KEY_UP):
            if not self.key:
                raise ModelError(f"{self.kind} needs a key")
            object.__setattr__(self, "key", normalize_key(self.key))
        elif self.position is None:
            raise ModelError(f"{self.kind} needs a position")


Span = tuple[InputEvent, int]


def coalesce_spans(raw: Sequence[RawEvent], config: RecorderConfig) -> list[Span]:
    """Coalesce raw events; each result carries the timestamp its action ended at."""
    out: list[Span] = []
    held: set[str] = set()
    unused_mods: dict[str, int] = {}
    text: list[str] = []
    text_start = text_last = 0
    down: tuple[str, Point, int] | None = None
    down_last: Point | None = None

    def flush_text() -> None:
        nonlocal text
        if text:
            out.append((InputEvent(EventKind.TEXT_BURST, text_start, text="".join(text)), text_last))
            text = []

    def use_mods() -> None:
        unused_mods.clear()

    for ev in raw:
        ts = int(ev.timestamp or 0)
        if ev.kind == KEY_DOWN:
            key = ev.key
            if key in MODIFIER_ORDER:
                held.add(key)
                if down is None:
                    unused_mods.setdefault(key, ts)
                continue
            chord = [m for m in MODIFIER_ORDER if m in held and m != "shift"]
            if is_printable(key) and not chord:
                if text and ts - text_last <= config.text_burst_gap:
                    text.append(key)
                else:
                    flush_text()
                    text, text_start = [key], ts
                text_last = ts
                use_mods()
                continue
            flush_text()
            mods = [m for m in MODIFIER_ORDER if m in held]
            name = "+".join(mods + ([key] if key != " " else ["space"]))
            out.append((InputEvent(EventKind.KEY_PRESS, ts, key=name), ts))
            use_mods()
        elif ev.kind == KEY_UP:
            key = ev.key
            if key in MODIFIER_ORDER:
                held.discard(key)
                began = unused_mods.pop(key, None)
                if began is not None and key != "shift":
                    flush_text()
                    out.append((InputEvent(EventKind.KEY_PRESS, began, key=key), ts))
        elif ev.kind == BUTTON_DOWN:
            flush_text()
            use_mods()
            down, down_last = (ev.button, ev.position, ts), ev.position
        elif ev.kind == MOVE:
            if down is not None:
                down_last = ev.position
        elif ev.kind == BUTTON_UP:
            if down is None or down[0] != ev.button:
                continue
            button, start, t0 = down
            end = ev.position or down_last
            down = None
            if max(abs(end.x - start.x), abs(end.y - start.y)) > config.drag_threshold:
                out.append((InputEvent(EventKind.DRAG, t0, position=start, end_position=end), ts))
                continue
            if button == "right":
                out.append((InputEvent(EventKind.RIGHT_CLICK, t0, position=start), ts))
                continue
            if button != "left":
                logger.debug("dropping %s click at %s", button, start)
                continue
            prev = out[-1][0] if out else None
            if (prev is not None and prev.kind is EventKind.LEFT_CLICK
                    and t0 - prev.timestamp <= config.double_click_window
                    and abs(prev.position.x - start.x) <= config.double_click_radius
                    and abs(prev.position.y - start.y) <= config.double_click_radius):
                out[-1] = (InputEvent(EventKind.DOUBLE_CLICK, prev.timestamp, position=prev.position), ts)
            else:
                out.append((InputEvent(EventKind.LEFT_CLICK, t0, position=start), ts))
        elif ev.kind == SCROLL:
            flush_text()
            use_mods()
            out.append((InputEvent(EventKind.SCROLL, ts, position=ev.position, scroll_delta=ev.delta), ts))
    flush_text()
    if down is not None:
        button, start, t0 = down
        if button in ("left", "right"):
            kind = EventKind.LEFT_CLICK if button == "left" else EventKind.RIGHT_CLICK
            out.append((InputEvent(kind, t0, position=start), t0))
    # a key pressed while a button is held resolves before the click does
    out.sort(key=lambda span: span[0].timestamp)
    return out


def coalesce(raw: Sequence[RawEvent], config: RecorderConfig) -> list[InputEvent]:
    return [ev for ev, _ in coalesce_spans(raw, config)]


def enforce_increasing(spans: Sequence[Span]) -> list[Span]:
    """Nudge equal timestamps forward by 1 ms so steps strictly increase."""
    out: list[Span] = []
    last = -1
    for ev, end in spans:
        if ev.timestamp <= last:
            ev = replace(ev, timestamp=last + 1)
        last = ev.timestamp
        out.append((ev, max(end, ev.timestamp)))
    return out


def pair_frames(frames: Sequence[Observation], spans: Sequence[Span], settle_delay: int) -> list[DemoStep]:
    """Pick the before/after frame for every coalesced action.

    Before: the latest frame at or before the action. After: the latest frame
    within the settle window that does not postdate the next action; if the
    window is empty, the first frame after the action ended.
    """
    frames = sorted(frames, key=lambda f: f.timestamp)
    times = [f.timestamp for f in frames]
    steps = []
    for i, (ev, end) in enumerate(spans):
        k = bisect.bisect_right(times, ev.timestamp) - 1
        if k < 0:
            raise ModelError(f"no frame precedes the action at {ev.timestamp} ms")
        nxt = spans[i + 1][0].timestamp if i + 1 < len(spans) else None
        upper = end + settle_delay if nxt is None else min(end + settle_delay, nxt)
        lo = bisect.bisect_right(times, end)
        hi = bisect.bisect_right(times, upper) - 1
        if hi >= lo:
            after = frames[hi]
        elif lo < len(frames):
            after = frames[lo]
        else:
            raise ModelError(f"no frame follows the action ending at {end} ms")
        steps.append(DemoStep(frames[k], ev, after))
    return steps


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------


class ScreenCapture(Protocol):
    def grab(self) -> np.ndarray: ...


class InputHooks(Protocol):
    def register(self, callback: Callable[[RawEvent], None]) -> None: ...

    def unregister(self) -> None: ...


class ScriptedHooks:
    """Hooks fed by hand; ``emit`` delivers one event to the session."""

    def __init__(self) -> None:
        self._callback: Callable[[RawEvent], None] | None = None

    def register(self, callback: Callable[[RawEvent], None]) -> None:
        self._callback = callback

    def unregister(self) -> None:
        self._callback = None

    def emit(self, event: RawEvent) -> None:
        if self._callback is None:
            raise RuntimeError("hooks are not registered")
        self._callback(event)


class RecordingSession:
    """Handle for a running recording. Create it with start_session()."""

    def __init__(self, config: RecorderConfig, capture: ScreenCapture, hooks: InputHooks,
                 clock: Clock, background: bool, session_id: str) -> None:
        self.config = config
        self.capture = capture
        self.hooks = hooks
        self.clock = clock
        self.background = background
        self.session_id = session_id
        self.bundle_path: Path | None = None
        self._t0 = 0
        self._ring: deque[Observation] = deque(maxlen=config.ring_size)
        self._pinned: dict[int, Observation] = {}
        self._raw: list[RawEvent] = []
        self._last_raw: int | None = None
        self._frame_since_raw = True
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.stopped = False

    def now(self) -> int:
        return self.clock.now() - self._t0

    def _start(self) -> None:
        out = self.config.output_dir
        try:
            out.mkdir(parents=True, exist_ok=True)
            with tempfile.TemporaryFile(dir=out):
                pass
        except OSError as exc:
            raise RecorderStartupError(f"output directory {out} is not writable: {exc}") from exc
        self._t0 = self.clock.now()
        try:
            self.hooks.register(self._on_raw)
        except (PermissionError, OSError) as exc:
            raise RecorderStartupError(f"input hooks were refused: {exc}") from exc
        try:
            self.sample_frame()
        except Exception as exc:
            self.hooks.unregister()
            raise RecorderStartupError(f"screen capture failed: {exc}") from exc
        if self.background:
            self._thread = threading.Thread(target=self._sample_loop, name="frame-sampler", daemon=True)
            self._thread.start()

    def _sample_loop(self) -> None:
        while not self._stop.is_set():
            self.clock.sleep(self.config.frame_interval)
            try:
                self.sample_frame()
            except Exception:  # keep sampling; pairing tolerates gaps
                logger.exception("frame capture failed")

    def sample_frame(self) -> Observation:
        ts = self.now()
        obs = Observation.from_pixels(self.capture.grab(), ts)
        with self._lock:
            self._ring.append(obs)
            if self._last_raw is not None and (
                not self._frame_since_raw or ts <= self._last_raw + self.config.settle_delay
            ):
                self._pinned[id(obs)] = obs
            self._frame_since_raw = True
        return obs

    def _on_raw(self, event: RawEvent) -> None:
        if event.timestamp is None:
            event = replace(event, timestamp=self.now())
        with self._lock:
            if self._raw and event.timestamp < self._raw[-1].timestamp:
                event = replace(event, timestamp=self._raw[-1].timestamp)
            self._raw.append(event)
            self._last_raw = event.timestamp
            self._frame_since_raw = False
            if self._ring:
                latest = self._ring[-1]
                self._pinned[id(latest)] = latest

    @property
    def raw_events(self) -> tuple[RawEvent, ...]:
        with self._lock:
            return tuple(self._raw)

    def frames(self) -> list[Observation]:
        with self._lock:
            seen = {id(f): f for f in self._pinned.values()}
            seen.update({id(f): f for f in self._ring})
        return sorted(seen.values(), key=lambda f: f.timestamp)


def start_session(
    config: RecorderConfig,
    capture: ScreenCapture,
    hooks: InputHooks,
    *,
    clock: Clock | None = None,
    background: bool = True,
    session_id: str | None = None,
) -> RecordingSession:
    session = RecordingSession(config, capture, hooks, clock or MonotonicClock(), background,
                               session_id or uuid.uuid4().hex[:12])
    session._start()
    return session


def stop_session(handle: RecordingSession, screen_size: tuple[int, int] | None = None) -> Demonstration:
    if handle.stopped:
        raise RuntimeError("session already stopped")
    handle.stopped = True
    handle.hooks.unregister()
    raw = handle.raw_events
    if raw:
        # let the last action's effect render before the final frames
        target = raw[-1].timestamp + handle.config.settle_delay
        while handle.now() < target:
            wait = min(handle.config.frame_interval, target - handle.now())
            handle.clock.sleep(wait)
            if not handle.background:
                handle.sample_frame()
    handle._stop.set()
    if handle._thread is not None:
        handle._thread.join()
    final = handle.sample_frame()
    if screen_size is None:
        screen_size = (final.width, final.height)

    spans = enforce_increasing(coalesce_spans(raw, handle.config))
    w, h = screen_size
    kept = []
    for ev, end in spans:
        if ev.within(w, h):
            kept.append((ev, end))
        else:
            logger.warning("dropping %s outside the %dx%d screen", ev.kind.value, w, h)
    if not kept:
        raise EmptyDemonstrationError("no actions were captured")
    steps = pair_frames(handle.frames(), kept, handle.config.settle_delay)
    demo = Demonstration(tuple(steps), (w, h), handle.session_id)
    handle.bundle_path = write_bundle(demo, handle.config.output_dir / handle.session_id)
    return demo


# ---------------------------------------------------------------------------
# Click annotation
# ---------------------------------------------------------------------------

MARKER_COLOR = (255, 0, 255)
MARKER_RADIUS = 8
CROSSHAIR_HALF = 12


def marker_mask(width: int, height: int, point: Point) -> np.ndarray:
    ys, xs = np.ogrid[0:height, 0:width]
    dx, dy = xs - point[0], ys - point[1]
    disc = dx * dx + dy * dy <= MARKER_RADIUS * MARKER_RADIUS
    cross = ((dy == 0) & (np.abs(dx) <= CROSSHAIR_HALF)) | ((dx == 0) & (np.abs(dy) <= CROSSHAIR_HALF))
    return disc | cross


def annotate_click(obs: Observation, point: Point) -> Observation:
    p = Point(int(point[0]), int(point[1]))
    if not p.within(obs.width, obs.height):
        raise DomainError(f"point {tuple(p)} outside {obs.width}x{obs.height}")
    pixels = np.array(obs.pixels, copy=True)
    pixels[marker_mask(obs.width, obs.height, p)] = MARKER_COLOR
    return Observation.from_pixels(pixels, obs.timestamp)


def raw_events_from_dicts(rows: Iterable[dict]) -> list[RawEvent]:
    return [
        RawEvent(
            kind=r["kind"],
            timestamp=r.get("timestamp"),
            position=r.get("position"),
            key=r.get("key"),
            button=r.get("button", "left"),
            delta=int(r.get("delta", 0)),
        )
        for r in rows
    ]
