"""Small worlds and fakes shared by the tests."""

from __future__ import annotations

from demoactor.sim.world import load_world

SAVE_WORLD = {
    "version": 1,
    "name": "save",
    "screen_size": [200, 120],
    "flags": ["saved"],
    "initial_screen": "main",
    "screens": {
        "main": {"title": "Main", "widgets": [
            {"id": "save", "label": "Save", "rect": [10, 10, 60, 40], "on_click": [{"set_flag": "saved"}]},
            {"id": "next", "label": "Next", "rect": [100, 10, 150, 40], "on_click": [{"goto": "second"}]},
        ]},
        "second": {"title": "Second", "widgets": [
            {"id": "back", "label": "Back", "rect": [10, 60, 60, 90], "on_click": [{"goto": "main"}]},
        ]},
    },
    "overlays": {
        "popup": {"title": "Popup", "rect": [80, 50, 190, 110], "widgets": [
            {"id": "close", "label": "Close", "rect": [90, 60, 140, 90], "on_click": [{"close_overlay": True}]},
        ]},
    },
    "goal": {"flag": "saved"},
    "interrupts": [],
}


def save_world(**overrides):
    doc = {**SAVE_WORLD, **overrides}
    return load_world(doc)


SECOND_CLEAR = {"all": [{"screen": "second"}, {"not": {"overlay_open": "popup"}}]}


def with_popup_at(step: int, mode: str = "modal", **overrides):
    """SAVE_WORLD whose pop-up opens after primitive number ``step``."""
    intr = {"overlay": "popup", "trigger": {"at_step": step}, "mode": mode}
    if mode == "modal":
        intr["dismiss_widget"] = "close"
    return save_world(interrupts=[intr], **overrides)


class CountingDriver:
    """Driver over nothing: every primitive is accepted and counted, the screen never changes."""

    def __init__(self, obs, fail_at: int | None = None) -> None:
        self.obs = obs
        self.applied = []
        self.fail_at = fail_at

    def apply(self, primitive) -> None:
        from demoactor.executor import DriverError

        if self.fail_at is not None and len(self.applied) == self.fail_at:
            raise DriverError("scripted failure")
        self.applied.append(primitive)

    def capture(self):
        return self.obs

    def screen_size(self):
        return self.obs.size

    def settle(self, ms) -> None:
        pass


class FrameSource:
    """Screen capture returning a fresh 64x48 frame whose colour counts grabs."""

    def __init__(self, width: int = 64, height: int = 48) -> None:
        self.size = (width, height)
        self.grabs = 0

    def grab(self):
        import numpy as np

        self.grabs += 1
        pixels = np.zeros((self.size[1], self.size[0], 3), dtype=np.uint8)
        pixels[:, :, 0] = self.grabs % 256
        pixels[:, :, 1] = (self.grabs // 256) % 256
        return pixels


def run_schedule(ops, tmp_path, config=None):
    """Drive a foreground recording session through a schedule.

    ``ops`` holds tuples ``("frame", dt)``, ``("click", dt, x, y)`` or
    ``("key", dt, ch)``; ``dt`` is the wait before the op in ms. Returns the
    demonstration and the printable keys typed, in order.
    """
    from demoactor.clock import VirtualClock
    from demoactor.recorder import (
        BUTTON_DOWN,
        BUTTON_UP,
        KEY_DOWN,
        KEY_UP,
        RawEvent,
        RecorderConfig,
        ScriptedHooks,
        is_printable,
        start_session,
        stop_session,
    )

    config = config or RecorderConfig(output_dir=tmp_path)
    clock, hooks = VirtualClock(), ScriptedHooks()
    session = start_session(config, FrameSource(), hooks, clock=clock, background=False, session_id="s")
    typed = []
    for op in ops:
        clock.advance(op[1])
        if op[0] == "frame":
            session.sample_frame()
        elif op[0] == "click":
            p = (op[2], op[3])
            hooks.emit(RawEvent(BUTTON_DOWN, position=p))
            clock.advance(30)
            hooks.emit(RawEvent(BUTTON_UP, position=p))
        else:
            hooks.emit(RawEvent(KEY_DOWN, key=op[2]))
            hooks.emit(RawEvent(KEY_UP, key=op[2]))
            if is_printable(op[2]):
                typed.append(op[2])
    return stop_session(session), "".join(typed)


def schedules():
    """Hypothesis strategy for run_schedule op lists with at least one action."""
    from hypothesis import strategies as st

    dt = st.integers(0, 1500)
    frame = st.tuples(st.just("frame"), dt)
    click = st.tuples(st.just("click"), dt, st.integers(0, 63), st.integers(0, 47))
    key = st.tuples(st.just("key"), dt, st.sampled_from(list("abcXYZ019 .,-") + ["enter", "tab"]))
    ops = st.lists(st.one_of(frame, click, key), max_size=25)
    return ops.filter(lambda xs: any(o[0] != "frame" for o in xs))


def check_schedule_invariants(demo, typed) -> None:
    from demoactor.model import EventKind

    for step in demo.steps:
        assert step.obs_before.timestamp <= step.event.timestamp < step.obs_after.timestamp
    stamps = [s.event.timestamp for s in demo.steps]
    assert stamps == sorted(set(stamps))
    bursts = "".join(s.event.text for s in demo.steps if s.event.kind is EventKind.TEXT_BURST)
    assert bursts == typed


class FakeResponse:
    def __init__(self, status: int = 200, payload=None, text: str | None = None) -> None:
        import json

        self.status_code = status
        self._payload = payload
        self.text = text if text is not None else json.dumps(payload)

    def json(self):
        import json

        return json.loads(self.text)


class FakeSession:
    """Stands in for requests.Session: records posts and replays canned responses."""

    def __init__(self, *responses) -> None:
        self.responses = list(responses)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers, "timeout": timeout})
        reply = self.responses.pop(0)
        if isinstance(reply, BaseException):
            raise reply
        return reply


class ChangingDriver(CountingDriver):
    """Every primitive changes the screen, so no later capture matches an earlier one."""

    def __init__(self, width: int = 64, height: int = 48) -> None:
        super().__init__(None)
        self.source = FrameSource(width, height)
        self.obs = self._frame()

    def _frame(self):
        from demoactor.model import Observation

        return Observation.from_pixels(self.source.grab(), len(self.applied))

    def apply(self, primitive) -> None:
        super().apply(primitive)
        self.obs = self._frame()

    def screen_size(self):
        return self.source.size


class FixedGrounder:
    endpoint = "fixed://"
    timeout = 1.0

    def __init__(self, point=(5, 5)) -> None:
        self.point = point
        self.calls = 0

    def locate(self, text, shot, hint=None):
        from demoactor.grounder import GroundingResponse
        from demoactor.model import as_point

        self.calls += 1
        return GroundingResponse(as_point(self.point))


class ConstantJudge:
    def __init__(self, verdict: bool) -> None:
        self.verdict = verdict
        self.calls = 0

    def judge(self, action_text, before, after):
        from demoactor.verifier import JudgeResult

        self.calls += 1
        return JudgeResult(self.verdict, "constant")


def random_primitives(rng, spec, n: int, widget_bias: float = 0.7):
    """Random primitive script; most clicks aim at some widget centre of the world."""
    from demoactor.executor import ButtonDown, ButtonUp, Click, KeyDown, KeyUp, MoveTo, Scroll, TypeText, Wait

    w, h = spec.screen_size
    centres = [wd.rect.center for layer in (*spec.screens.values(), *spec.overlays.values())
               for wd in layer.widgets]
    out = []
    for _ in range(n):
        if centres and rng.random() < widget_bias:
            p = rng.choice(centres)
        else:
            p = (rng.randrange(w), rng.randrange(h))
        out.append(rng.choice([
            MoveTo(p), Click(p), Click(p), Click(p, "right"), ButtonDown(), ButtonUp(), TypeText("ab"),
            KeyDown("enter"), KeyUp("enter"), Scroll(-1), Wait(10),
        ]))
    return out


def digest_trace(spec, seed: int, script) -> list[str]:
    from demoactor.sim.engine import SimEnv

    env = SimEnv(spec, seed)
    out = [env.observe().digest]
    for p in script:
        env.apply(p)
        out.append(env.observe().digest)
    return out
