"""Transition, observation and reward functions of the simulated GUI."""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, replace
from typing import Any, Iterable

import numpy as np

from ..executor import Click, MoveTo, Primitive, TypeText
from ..model import Point, pixel_digest
from .render import SimCore, render
from .world import Layer, WorldSpec


@dataclass(frozen=True)
class SimState:
    screen: str
    overlays: tuple[str, ...] = ()
    flags: frozenset[str] = frozenset()
    fields: tuple[tuple[str, str], ...] = ()
    step: int = 0
    seed: int = 0
    pointer: Point = Point(0, 0)

    @property
    def core(self) -> SimCore:
        return SimCore(self.screen, self.overlays, self.flags, self.fields)

    def field_text(self, field_id: str) -> str:
        return dict(self.fields).get(field_id, "")


@dataclass(frozen=True)
class SimObservation:
    pixels: np.ndarray
    digest: str


def reset(spec: WorldSpec, seed: int = 0) -> SimState:
    return SimState(
        screen=spec.initial_screen,
        fields=tuple((fid, "") for fid in spec.field_ids),
        seed=int(seed),
    )


def with_core(state: SimState, core: SimCore) -> SimState:
    return replace(state, screen=core.screen, overlays=core.overlays, flags=core.flags,
                   fields=core.fields)


def top_layer(state: SimState, spec: WorldSpec) -> Layer:
    if state.overlays:
        return spec.overlays[state.overlays[-1]]
    return spec.screens[state.screen]


def visible_layers(state: SimState | SimCore, spec: WorldSpec) -> list[Layer]:
    """Bottom-to-top list of drawn layers."""
    return [spec.screens[state.screen], *(spec.overlays[o] for o in state.overlays)]


def _uniform(seed: int, step: int, index: int) -> float:
    raw = hashlib.blake2b(f"{seed}:{step}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(raw, "big") / 2.0**64


def _set_field(state: SimState, field_id: str, text: str) -> SimState:
    fields = tuple((fid, (old + text) if fid == field_id else old) for fid, old in state.fields)
    return replace(state, fields=fields)


def _click(state: SimState, point: Point, spec: WorldSpec) -> SimState:
    # topmost layer takes every click; overlays are modal
    widget = top_layer(state, spec).hit(point)
    if widget is None:
        return state
    for eff in widget.on_click:
        if eff.kind == "goto":
            state = replace(state, screen=eff.target)
        elif eff.kind == "open_overlay":
            if eff.target not in state.overlays:
                state = replace(state, overlays=state.overlays + (eff.target,))
        elif eff.kind == "close_overlay":
            state = replace(state, overlays=state.overlays[:-1])
        elif eff.kind == "set_flag":
            state = replace(state, flags=state.flags | {eff.target})
        elif eff.kind == "append_text":
            state = _set_field(state, eff.target, eff.text)
    return state


def _effect_of(state: SimState, primitive: Primitive, spec: WorldSpec) -> SimState:
    if isinstance(primitive, MoveTo):
        return replace(state, pointer=primitive.point)
    if isinstance(primitive, Click):
        state = replace(state, pointer=primitive.point)
        if primitive.button != "left":
            return state
        return _click(state, primitive.point, spec)
    if isinstance(primitive, TypeText):
        tf = top_layer(state, spec).text_field
        if tf is None:
            return state
        return _set_field(state, tf.field_id, primitive.text)
    # drags, keys, scrolls and waits have no declared effects
    return state


def _fire_interrupts(state: SimState, spec: WorldSpec) -> SimState:
    for index, intr in enumerate(spec.interrupts):
        if intr.at_step is not None:
            fire = state.step == intr.at_step
        else:
            fire = _uniform(state.seed, state.step, index) < intr.probability
        if fire and intr.overlay_id not in state.overlays:
            state = replace(state, overlays=state.overlays + (intr.overlay_id,))
    return state


def apply(state: SimState, primitive: Primitive, spec: WorldSpec, *, interrupts: bool = True) -> SimState:
    """One transition. Unknown interactions are no-ops."""
    top = state.overlays[-1] if state.overlays else None
    intr = spec.interrupt_for(top) if top is not None else None
    if intr is not None and intr.mode == "transient":
        new = replace(state, overlays=state.overlays[:-1])
    else:
        new = _effect_of(state, primitive, spec)
    new = replace(new, step=state.step + 1)
    if interrupts:
        new = _fire_interrupts(new, spec)
    return new


def apply_all(state: SimState, primitives: Iterable[Primitive], spec: WorldSpec, **kw) -> SimState:
    for p in primitives:
        state = apply(state, p, spec, **kw)
    return state


def observe(state: SimState, spec: WorldSpec) -> SimObservation:
    pixels = render(spec, state.core)
    return SimObservation(pixels=pixels, digest=pixel_digest(pixels))


def evaluate_predicate(pred: Any, state: SimState) -> bool:
    if pred is True or pred is False:
        return pred
    if "all" in pred:
        return all(evaluate_predicate(p, state) for p in pred["all"])
    if "any" in pred:
        return any(evaluate_predicate(p, state) for p in pred["any"])
    if "not" in pred:
        return not evaluate_predicate(pred["not"], state)
    if "flag" in pred:
        return pred["flag"] in state.flags
    if "screen" in pred:
        return state.screen == pred["screen"]
    if "overlay_open" in pred:
        return pred["overlay_open"] in state.overlays
    if "field" in pred:
        return state.field_text(pred["field"]) == pred["equals"]
    raise ValueError(f"malformed predicate {pred!r}")


def check_goal(state: SimState, spec: WorldSpec) -> bool:
    return evaluate_predicate(spec.goal, state)


class SimEnv:
    """Mutable holder around the pure functions: current state plus a render cache.

    Every rendered image is registered by digest so that scripted oracles can map
    a screenshot back to the logical state it shows.
    """

    def __init__(self, spec: WorldSpec, seed: int = 0) -> None:
        self.spec = spec
        self.state = reset(spec, seed)
        self.applied: list[Primitive] = []
        self._renders: dict[SimCore, SimObservation] = {}
        self._by_digest: dict[str, SimCore] = {}
        self._lock = threading.Lock()

    def reset(self, seed: int = 0) -> SimState:
        self.state = reset(self.spec, seed)
        self.applied.clear()
        return self.state

    def apply(self, primitive: Primitive) -> SimState:
        self.state = apply(self.state, primitive, self.spec)
        self.applied.append(primitive)
        return self.state

    def render_core(self, core: SimCore) -> SimObservation:
        with self._lock:
            cached = self._renders.get(core)
        if cached is not None:
            return cached
        pixels = render(self.spec, core)
        pixels.setflags(write=False)
        obs = SimObservation(pixels=pixels, digest=pixel_digest(pixels))
        with self._lock:
            other = self._by_digest.get(obs.digest)
            if other is not None and other != core:
                raise RuntimeError(f"render collision between {other} and {core}")
            self._renders[core] = obs
            self._by_digest[obs.digest] = core
        return obs

    def observe(self) -> SimObservation:
        return self.render_core(self.state.core)

    def digest_of(self, core: SimCore) -> str:
        return self.render_core(core).digest

    def core_for_digest(self, digest: str) -> SimCore | None:
        with self._lock:
            return self._by_digest.get(digest)

    def check_goal(self) -> bool:
        return check_goal(self.state, self.spec)
