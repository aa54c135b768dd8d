"""Scripted stand-ins for the model backends, driven by the simulator's ground truth.

Each oracle maps screenshots back to logical state through the env's digest
registry, so they see exactly what a perfect model would see on screen and
nothing more.
"""

from __future__ import annotations

import json
from collections import Counter
from typing import Sequence

from ..backtracker import MEMORY_HEADER
from ..backends import BackendError, ImagePart, PromptPart, TextPart
from ..executor import Click, MoveTo
from ..grounder import GroundingResponse, pointer_kind
from ..model import EventKind, Observation, Point
from ..verifier import JudgeResult
from .engine import SimEnv, SimState, apply_all, visible_layers, with_core
from .render import SimCore, widget_color
from .world import Layer, Widget, WorldSpec

EVENT_HEADER = "Event:"


def resolve_widget(text: str, layers: Sequence[Layer]) -> tuple[Layer, Widget] | None:
    """Find the widget an instruction talks about.

    The earliest quoted mention of a widget name wins; failing that, the
    earliest case-insensitive unquoted mention. Ties go to the longer name,
    then to the upper layer.
    """
    best = None
    for depth, layer in enumerate(layers):
        for widget in layer.widgets:
            for name in widget.names:
                for q in ("'", '"'):
                    pos = text.find(f"{q}{name}{q}")
                    if pos >= 0:
                        key = (pos, -len(name), -depth)
                        if best is None or key < best[0]:
                            best = (key, layer, widget)
    if best is not None:
        return best[1], best[2]
    lowered = text.lower()
    for depth, layer in enumerate(layers):
        for widget in layer.widgets:
            for name in widget.names:
                pos = lowered.find(name.lower())
                if pos >= 0:
                    key = (pos, -len(name), -depth)
                    if best is None or key < best[0]:
                        best = (key, layer, widget)
    return None if best is None else (best[1], best[2])


def strip_interrupts(core: SimCore, spec: WorldSpec, modes: tuple[str, ...] = ("modal", "transient")) -> SimCore:
    noise = {i.overlay_id for i in spec.interrupts if i.mode in modes}
    return core._replace(overlays=tuple(o for o in core.overlays if o not in noise))


def click_outcome(core: SimCore, point: Point, spec: WorldSpec, button: str = "left") -> SimCore:
    """Logical effect of a compiled click on a clean state, with interrupts off."""
    state = with_core(SimState(screen=core.screen), core)
    script = [MoveTo(point), Click(point, button)]
    return apply_all(state, script, spec, interrupts=False).core


def _core_of(env: SimEnv, obs: Observation) -> SimCore:
    core = env.core_for_digest(obs.digest)
    if core is None:
        raise BackendError(f"screenshot {obs.digest[:12]} was not rendered by this simulator")
    return core


class SimGroundingOracle:
    endpoint = "sim://grounding"
    timeout = 0.0

    def __init__(self, env: SimEnv) -> None:
        self.env = env
        self.calls = 0

    def locate(self, instruction_text: str, screenshot: Observation,
               hint: Point | None = None) -> GroundingResponse:
        self.calls += 1
        core = _core_of(self.env, screenshot)
        found = resolve_widget(instruction_text, visible_layers(core, self.env.spec))
        if found is None:
            return GroundingResponse(None, "no matching widget")
        layer, widget = found
        return GroundingResponse(widget.rect.center, f"{layer.layer_id}/{widget.widget_id}")


class SimStateJudge:
    """Compares the observed state against the click's effect predicted on the before-state.

    The prediction is made with interrupt overlays removed from the before-state,
    since the instruction describes the page under any pop-up. In the after-state
    only transient notifications are ignored: a modal pop-up still covering the
    screen means the expected screen is not usable yet.
    """

    def __init__(self, env: SimEnv) -> None:
        self.env = env
        self.calls = 0

    def judge(self, action_text: str, before: Observation, after: Observation) -> JudgeResult:
        self.calls += 1
        spec = self.env.spec
        raw_before = _core_of(self.env, before)
        b = strip_interrupts(raw_before, spec)
        a = strip_interrupts(_core_of(self.env, after), spec, ("transient",))
        found = resolve_widget(action_text, visible_layers(b, spec))
        if found is None:
            changed = a != strip_interrupts(raw_before, spec, ("transient",))
            return JudgeResult(changed, "target unknown; " + ("state changed" if changed else "no change"))
        layer, widget = found
        button = "right" if pointer_kind(action_text) is EventKind.RIGHT_CLICK else "left"
        expected = click_outcome(b, widget.rect.center, spec, button)
        ok = expected == a
        return JudgeResult(ok, f"{layer.layer_id}/{widget.widget_id}: "
                               + ("expected state reached" if ok else "state differs from expected"))


def recovery_action(widget: Widget) -> str:
    return f"Left click on the '{widget.label}' {widget.role}; this action moves back toward the saved state."


class SimRecoveryPlanner:
    """Plans clicks from the current state back to the checkpoint by iterative deepening.

    Plans already tried from the same starting screenshot (recorded in the
    memory part of the prompt) are avoided when an alternative exists, so
    repeated attempts explore before they repeat.
    """

    model = "sim-planner"
    timeout = 0.0

    def __init__(self, env: SimEnv, max_depth: int = 5) -> None:
        self.env = env
        self.max_depth = max_depth
        self.calls = 0

    def _successors(self, core: SimCore) -> list[tuple[Widget, SimCore]]:
        out = []
        seen = set()
        for layer in reversed(visible_layers(core, self.env.spec)):
            for widget in layer.widgets:
                nxt = click_outcome(core, widget.rect.center, self.env.spec)
                if nxt != core and nxt not in seen:
                    seen.add(nxt)
                    out.append((widget, nxt))
        return out

    def _search(self, start: SimCore, goal: SimCore, tried: set[tuple[str, ...]]) -> list[Widget] | None:
        for depth in range(1, self.max_depth + 1):
            stack: list[tuple[SimCore, list[Widget], frozenset]] = [(start, [], frozenset([start]))]
            while stack:
                core, path, visited = stack.pop()
                if len(path) == depth:
                    continue
                for widget, nxt in reversed(self._successors(core)):
                    if nxt in visited:
                        continue
                    new_path = path + [widget]
                    if nxt == goal:
                        if tuple(recovery_action(w) for w in new_path) not in tried:
                            return new_path
                        continue
                    stack.append((nxt, new_path, visited | {nxt}))
        return None

    def generate(self, parts: Sequence[PromptPart]) -> str:
        self.calls += 1
        images = {p.label: p.observation for p in parts if isinstance(p, ImagePart)}
        if "current" not in images or "target" not in images:
            raise BackendError("planner needs 'current' and 'target' screenshots")
        start = _core_of(self.env, images["current"])
        goal = _core_of(self.env, images["target"])
        start_digest = images["current"].digest
        tried: set[tuple[str, ...]] = set()
        for part in parts:
            if isinstance(part, TextPart) and part.text.startswith(MEMORY_HEADER):
                for rec in json.loads(part.text[len(MEMORY_HEADER):]).get("records", []):
                    if rec.get("from_digest") == start_digest:
                        tried.add(tuple(rec.get("plan", [])))
        path = self._search(start, goal, tried)
        if path is None and tried:
            # interrupts are random, so a plan that failed once may work now
            path = self._search(start, goal, set())
        if path is None:
            return ""
        return "\n".join(json.dumps({"action": recovery_action(w)}, ensure_ascii=False) for w in path)


# ---------------------------------------------------------------------------
# Instruction describer
# ---------------------------------------------------------------------------

_VERBS = {
    EventKind.LEFT_CLICK: "Left click",
    EventKind.RIGHT_CLICK: "Right click",
    EventKind.DOUBLE_CLICK: "Double click",
    EventKind.SCROLL: "Scroll",
    EventKind.DRAG: "Drag",
}

SAMPLE_OFFSETS = ((-10, -10), (10, -10), (-10, 10), (10, 10))


def _area(p: Point, size: tuple[int, int]) -> str:
    w, h = size
    col = ("left", "center", "right")[min(2, p.x * 3 // w)]
    row = ("top", "middle", "bottom")[min(2, p.y * 3 // h)]
    if row == "middle" and col == "center":
        return "center"
    return f"{row} {col}"


class SimDescriber:
    """Instruction generator for simulated demos.

    It looks at the annotated before-screenshot only through its pixels: the
    colours just outside the click marker identify the widget under the click.
    """

    model = "sim-describer"
    timeout = 0.0

    def __init__(self, spec: WorldSpec) -> None:
        self.spec = spec
        self.calls = 0
        self._by_color: dict[tuple[int, int, int], tuple[Layer, Widget]] = {}
        for layer in (*spec.screens.values(), *spec.overlays.values()):
            for widget in layer.widgets:
                self._by_color[widget_color(layer.layer_id, widget.widget_id)] = (layer, widget)

    def _effect_phrase(self, widget: Widget) -> str:
        phrases = []
        for eff in widget.on_click:
            if eff.kind == "goto":
                phrases.append(f"opens the {self.spec.screens[eff.target].title} page")
            elif eff.kind == "open_overlay":
                phrases.append(f"opens the '{self.spec.overlays[eff.target].title}' dialog")
            elif eff.kind == "close_overlay":
                phrases.append("closes the dialog")
            elif eff.kind == "set_flag":
                phrases.append("saves the change")
            elif eff.kind == "append_text":
                phrases.append("fills in the text field")
        if not phrases:
            return "has no further effect"
        return " and ".join(dict.fromkeys(phrases))

    def generate(self, parts: Sequence[PromptPart]) -> str:
        self.calls += 1
        before = next((p.observation for p in parts if isinstance(p, ImagePart) and p.label == "before"), None)
        event = None
        for part in parts:
            if isinstance(part, TextPart) and part.text.startswith(EVENT_HEADER):
                event = json.loads(part.text[len(EVENT_HEADER):])
        if before is None or event is None:
            raise BackendError("describer needs a 'before' screenshot and an event description")
        kind = EventKind(event["kind"])
        p = Point(*event["position"])
        votes: Counter = Counter()
        for dx, dy in SAMPLE_OFFSETS:
            x, y = p.x + dx, p.y + dy
            if 0 <= x < before.width and 0 <= y < before.height:
                rgb = tuple(int(c) for c in before.pixels[y, x])
                if rgb in self._by_color:
                    votes[rgb] += 1
        verb = _VERBS[kind]
        if not votes:
            return f"{verb} on the empty area at {tuple(p)}; this action has no visible effect."
        layer, widget = self._by_color[votes.most_common(1)[0][0]]
        where = _area(widget.rect.center, self.spec.screen_size)
        place = f"in the '{layer.title}' dialog" if layer.is_overlay else f"on the {layer.title} page"
        return (f"{verb} on the '{widget.label}' {widget.role} located at the {where} {place}; "
                f"this action {self._effect_phrase(widget)}.")

