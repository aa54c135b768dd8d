"""Random small worlds, a breadth-first reachability oracle, and instruction lists for paths."""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from typing import Any

from ..model import ActionClass, InstructionList, InstructionStep
from .engine import SimState, evaluate_predicate, reset, with_core
from .oracles import click_outcome
from .render import SimCore
from .world import WorldSpec, load_world

SCREEN_SIZE = (320, 240)


def _label(layer_id: str, index: int) -> str:
    return f"Button {layer_id}-{index}"


def _widget_rect(index: int, overlay: bool) -> list[int]:
    if overlay:
        return [60 + 70 * index, 40, 120 + 70 * index, 72]
    return [20 + 100 * index, 120, 100 + 100 * index, 160]


def generate_world(
    rng: random.Random,
    max_screens: int = 4,
    max_widgets: int = 3,
    overlays: bool = False,
    interrupts: bool = False,
) -> dict:
    """A world document with 1..max_screens screens of 0..max_widgets widgets each."""
    n_screens = rng.randint(1, max_screens)
    screen_ids = [f"s{i}" for i in range(n_screens)]
    overlay_ids = [f"o{i}" for i in range(rng.randint(1, 2))] if overlays else []
    flags = ["goal_flag", "other_flag"]

    def effects(in_overlay: bool) -> list[dict]:
        kinds = ["goto", "goto", "set_flag"]
        if overlay_ids:
            kinds.append("open_overlay")
        if in_overlay:
            kinds += ["close_overlay", "close_overlay"]
        kind = rng.choice(kinds)
        if kind == "goto":
            return [{"goto": rng.choice(screen_ids)}]
        if kind == "set_flag":
            return [{"set_flag": rng.choice(flags)}]
        if kind == "open_overlay":
            return [{"open_overlay": rng.choice(overlay_ids)}]
        return [{"close_overlay": True}]

    def layer(layer_id: str, in_overlay: bool) -> dict:
        count = rng.randint(0, min(max_widgets, 3))
        widgets = [
            {
                "id": f"w{i}",
                "label": _label(layer_id, i),
                "rect": _widget_rect(i, in_overlay),
                "on_click": effects(in_overlay),
            }
            for i in range(count)
        ]
        out: dict[str, Any] = {"title": layer_id.upper(), "widgets": widgets}
        if in_overlay:
            out["rect"] = [40, 20, 280, 90]
        return out

    doc: dict[str, Any] = {
        "version": 1,
        "name": f"generated-{rng.getrandbits(32):08x}",
        "screen_size": list(SCREEN_SIZE),
        "flags": flags,
        "initial_screen": "s0",
        "screens": {sid: layer(sid, False) for sid in screen_ids},
        "overlays": {oid: layer(oid, True) for oid in overlay_ids},
        "goal": _random_goal(rng, screen_ids),
        "interrupts": [],
    }
    if interrupts and overlay_ids:
        doc["interrupts"].append({
            "overlay": overlay_ids[0],
            "trigger": {"probability": rng.choice([0.1, 0.3, 0.5])},
            "mode": "transient",
        })
    return doc


def _random_goal(rng: random.Random, screen_ids: list[str]) -> Any:
    if len(screen_ids) > 1 and rng.random() < 0.6:
        return {"screen": rng.choice(screen_ids[1:])}
    return {"flag": "goal_flag"}


def iter_worlds(seed: int, count: int, **kw) -> list[WorldSpec]:
    rng = random.Random(seed)
    return [load_world(generate_world(rng, **kw)) for _ in range(count)]


# ---------------------------------------------------------------------------
# Reachability
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathStep:
    layer_id: str
    widget_id: str
    label: str


def _clicks(core: SimCore, spec: WorldSpec) -> list[tuple[PathStep, SimCore]]:
    # only the top layer receives clicks
    top = spec.overlays[core.overlays[-1]] if core.overlays else spec.screens[core.screen]
    out = []
    for widget in top.widgets:
        nxt = click_outcome(core, widget.rect.center, spec)
        if nxt != core:
            out.append((PathStep(top.layer_id, widget.widget_id, widget.label), nxt))
    return out


def _goal_met(core: SimCore, spec: WorldSpec) -> bool:
    return evaluate_predicate(spec.goal, with_core(SimState(screen=core.screen), core))


def shortest_path(spec: WorldSpec, start: SimCore | None = None) -> list[PathStep] | None:
    """Breadth-first search over click outcomes; None when the goal is unreachable."""
    start = start or reset(spec).core
    if _goal_met(start, spec):
        return []
    parent: dict[SimCore, tuple[SimCore, PathStep] | None] = {start: None}
    queue = deque([start])
    while queue:
        core = queue.popleft()
        for step, nxt in _clicks(core, spec):
            if nxt in parent:
                continue
            parent[nxt] = (core, step)
            if _goal_met(nxt, spec):
                path = []
                cur = nxt
                while parent[cur] is not None:
                    prev, s = parent[cur]
                    path.append(s)
                    cur = prev
                return path[::-1]
            queue.append(nxt)
    return None


def click_instruction(label: str) -> str:
    return f"Left click on the '{label}' button; this action moves on to the next state."


def instructions_for_path(path: list[PathStep], task_id: str) -> InstructionList:
    steps = tuple(InstructionStep(click_instruction(s.label), ActionClass.POINTER) for s in path)
    return InstructionList(task_id, steps)


def instructions_for_unreachable(spec: WorldSpec, task_id: str) -> InstructionList:
    """A best-effort list for an unreachable goal: click something on the goal's side."""
    goal = spec.goal
    label = "Missing control"
    if isinstance(goal, dict) and "screen" in goal and spec.screens[goal["screen"]].widgets:
        label = spec.screens[goal["screen"]].widgets[0].label
    elif isinstance(goal, dict) and "flag" in goal:
        for layer in (*spec.screens.values(), *spec.overlays.values()):
            for w in layer.widgets:
                if any(e.kind == "set_flag" and e.target == goal["flag"] for e in w.on_click):
                    label = w.label
    return InstructionList(task_id, (InstructionStep(click_instruction(label), ActionClass.POINTER),))
