"""Declarative world specs for the simulated GUI, and their loader.

A world file is YAML (JSON is accepted too). Top-level keys::

    version: 1
    name: str
    screen_size: [width, height]
    flags: [name, ...]                  # boolean state, all start false
    screens: {id: layer}                # full-screen pages
    overlays: {id: layer + rect}        # dialogs and pop-ups, drawn over the screen
    initial_screen: id
    goal: predicate
    interrupts: [interrupt, ...]

A layer has ``title``, ``widgets`` and an optional ``field`` (one focusable text
field). A widget is ``{id, label, rect: [x0, y0, x1, y1], on_click: [effect...],
aliases: [str...], role: str}``; rects are half-open. Effects are single-key
mappings: ``{goto: screen}``, ``{open_overlay: overlay}``, ``{close_overlay: true}``,
``{set_flag: name}``, ``{append_text: {field: id, text: str}}``.

Predicates: ``{all: [p...]}``, ``{any: [p...]}``, ``{not: p}``, ``{flag: name}``,
``{screen: id}``, ``{field: id, equals: str}``, ``{overlay_open: id}``, ``true``.

Interrupts: ``{overlay: id, trigger: {at_step: k} | {probability: p},
dismiss_widget: id, mode: modal | transient}``. A modal interrupt stays until
its dismiss widget is clicked; a transient one swallows the next primitive and
closes itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any

import yaml

from ..model import ModelError, Point

SUPPORTED_VERSIONS = (1,)
EFFECT_KINDS = ("goto", "open_overlay", "close_overlay", "set_flag", "append_text")


class WorldValidationError(ModelError):
    pass


@dataclass(frozen=True)
class Rect:
    x0: int
    y0: int
    x1: int
    y1: int

    def contains(self, p: Point) -> bool:
        return self.x0 <= p[0] < self.x1 and self.y0 <= p[1] < self.y1

    @property
    def center(self) -> Point:
        return Point((self.x0 + self.x1) // 2, (self.y0 + self.y1) // 2)

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height


@dataclass(frozen=True)
class Effect:
    kind: str
    target: str | None = None
    text: str = ""


@dataclass(frozen=True)
class Widget:
    widget_id: str
    label: str
    rect: Rect
    on_click: tuple[Effect, ...] = ()
    aliases: tuple[str, ...] = ()
    role: str = "button"

    @property
    def names(self) -> tuple[str, ...]:
        return (self.label, *self.aliases)


@dataclass(frozen=True)
class TextField:
    field_id: str
    rect: Rect


@dataclass(frozen=True)
class Layer:
    layer_id: str
    title: str
    widgets: tuple[Widget, ...]
    rect: Rect
    text_field: TextField | None = None
    is_overlay: bool = False

    def widget(self, widget_id: str) -> Widget | None:
        for w in self.widgets:
            if w.widget_id == widget_id:
                return w
        return None

    def hit(self, p: Point) -> Widget | None:
        for w in reversed(self.widgets):
            if w.rect.contains(p):
                return w
        return None


@dataclass(frozen=True)
class Interrupt:
    overlay_id: str
    dismiss_widget: str | None
    at_step: int | None = None
    probability: float | None = None
    mode: str = "modal"


@dataclass(frozen=True)
class WorldSpec:
    name: str
    screen_size: tuple[int, int]
    screens: dict[str, Layer]
    overlays: dict[str, Layer]
    initial_screen: str
    goal: Any
    flags: tuple[str, ...] = ()
    interrupts: tuple[Interrupt, ...] = ()
    version: int = 1
    field_ids: tuple[str, ...] = field(default=())

    def layer(self, layer_id: str) -> Layer:
        if layer_id in self.screens:
            return self.screens[layer_id]
        return self.overlays[layer_id]

    @property
    def interrupt_overlays(self) -> frozenset[str]:
        return frozenset(i.overlay_id for i in self.interrupts)

    def interrupt_for(self, overlay_id: str) -> Interrupt | None:
        for i in self.interrupts:
            if i.overlay_id == overlay_id:
                return i
        return None

    def without_interrupts(self) -> WorldSpec:
        return replace(self, interrupts=())


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def _rect(raw: Any, where: str) -> Rect:
    try:
        x0, y0, x1, y1 = (int(v) for v in raw)
    except (TypeError, ValueError) as exc:
        raise WorldValidationError(f"{where}: rect must be [x0, y0, x1, y1]") from exc
    return Rect(x0, y0, x1, y1)


def _effect(raw: Any, where: str) -> Effect:
    if not isinstance(raw, dict) or len(raw) != 1:
        raise WorldValidationError(f"{where}: effect must be a single-key mapping, got {raw!r}")
    ((kind, arg),) = raw.items()
    if kind not in EFFECT_KINDS:
        raise WorldValidationError(f"{where}: unknown effect {kind!r}")
    if kind == "close_overlay":
        return Effect(kind)
    if kind == "append_text":
        if not isinstance(arg, dict) or "field" not in arg:
            raise WorldValidationError(f"{where}: append_text needs {{field, text}}")
        return Effect(kind, str(arg["field"]), str(arg.get("text", "")))
    return Effect(kind, str(arg))


def _layer(layer_id: str, raw: dict, size: tuple[int, int], overlay: bool) -> Layer:
    where = f"{'overlay' if overlay else 'screen'} {layer_id!r}"
    if not isinstance(raw, dict):
        raise WorldValidationError(f"{where}: must be a mapping")
    widgets = []
    for i, w in enumerate(raw.get("widgets") or []):
        wid = str(w.get("id", f"w{i}"))
        wwhere = f"{where} widget {wid!r}"
        widgets.append(
            Widget(
                widget_id=wid,
                label=str(w.get("label", wid)),
                rect=_rect(w.get("rect"), wwhere),
                on_click=tuple(_effect(e, wwhere) for e in (w.get("on_click") or [])),
                aliases=tuple(str(a) for a in (w.get("aliases") or [])),
                role=str(w.get("role", "button")),
            )
        )
    ids = [w.widget_id for w in widgets]
    if len(ids) != len(set(ids)):
        raise WorldValidationError(f"{where}: duplicate widget ids")
    text_field = None
    if raw.get("field") is not None:
        f = raw["field"]
        text_field = TextField(str(f["id"]), _rect(f.get("rect"), f"{where} field"))
    if overlay:
        rect = _rect(raw.get("rect"), where)
    else:
        rect = Rect(0, 0, size[0], size[1])
    return Layer(
        layer_id=layer_id,
        title=str(raw.get("title", layer_id)),
        widgets=tuple(widgets),
        rect=rect,
        text_field=text_field,
        is_overlay=overlay,
    )


def _interrupt(raw: Any, i: int) -> Interrupt:
    where = f"interrupt {i}"
    if not isinstance(raw, dict) or "overlay" not in raw:
        raise WorldValidationError(f"{where}: needs an overlay")
    trig = raw.get("trigger") or {}
    at_step = trig.get("at_step")
    prob = trig.get("probability")
    if (at_step is None) == (prob is None):
        raise WorldValidationError(f"{where}: trigger needs exactly one of at_step / probability")
    mode = str(raw.get("mode", "modal"))
    if mode not in ("modal", "transient"):
        raise WorldValidationError(f"{where}: unknown mode {mode!r}")
    return Interrupt(
        overlay_id=str(raw["overlay"]),
        dismiss_widget=None if raw.get("dismiss_widget") is None else str(raw["dismiss_widget"]),
        at_step=None if at_step is None else int(at_step),
        probability=None if prob is None else float(prob),
        mode=mode,
    )


def load_world(data: bytes | str | dict) -> WorldSpec:
    """Parse and eagerly validate a world document."""
    if isinstance(data, dict):
        raw = data
    else:
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise WorldValidationError(f"world document is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise WorldValidationError("world document must be a mapping")

    version = int(raw.get("version", 1))
    if version not in SUPPORTED_VERSIONS:
        raise WorldValidationError(f"unsupported world version {version}")
    try:
        w, h = (int(v) for v in raw["screen_size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WorldValidationError("screen_size must be [width, height]") from exc
    if w <= 0 or h <= 0:
        raise WorldValidationError("screen_size must be positive")
    size = (w, h)

    screens = {str(k): _layer(str(k), v, size, False) for k, v in (raw.get("screens") or {}).items()}
    overlays = {str(k): _layer(str(k), v, size, True) for k, v in (raw.get("overlays") or {}).items()}
    if not screens:
        raise WorldValidationError("world needs at least one screen")
    both = set(screens) & set(overlays)
    if both:
        raise WorldValidationError(f"ids used for both a screen and an overlay: {sorted(both)}")

    spec = WorldSpec(
        name=str(raw.get("name", "world")),
        screen_size=size,
        screens=screens,
        overlays=overlays,
        initial_screen=str(raw.get("initial_screen", next(iter(screens)))),
        goal=raw.get("goal", True),
        flags=tuple(str(f) for f in (raw.get("flags") or [])),
        interrupts=tuple(_interrupt(r, i) for i, r in enumerate(raw.get("interrupts") or [])),
        version=version,
    )
    fields = []
    for layer in (*screens.values(), *overlays.values()):
        if layer.text_field is not None:
            fields.append(layer.text_field.field_id)
    if len(fields) != len(set(fields)):
        raise WorldValidationError("text field ids must be unique across layers")
    spec = replace(spec, field_ids=tuple(fields))
    validate_world(spec)
    return spec


def validate_world(spec: WorldSpec) -> None:
    w, h = spec.screen_size
    if spec.initial_screen not in spec.screens:
        raise WorldValidationError(f"initial_screen {spec.initial_screen!r} is not a screen")
    flags = set(spec.flags)
    fields = set(spec.field_ids)
    for layer in (*spec.screens.values(), *spec.overlays.values()):
        where = f"{'overlay' if layer.is_overlay else 'screen'} {layer.layer_id!r}"
        if not layer.rect.inside(w, h):
            raise WorldValidationError(f"{where}: rect outside the screen")
        if layer.text_field is not None and not layer.text_field.rect.inside(w, h):
            raise WorldValidationError(f"{where}: field rect outside the screen")
        for widget in layer.widgets:
            wwhere = f"{where} widget {widget.widget_id!r}"
            if not widget.rect.inside(w, h):
                raise WorldValidationError(f"{wwhere}: rect outside the screen")
            for eff in widget.on_click:
                if eff.kind == "goto" and eff.target not in spec.screens:
                    raise WorldValidationError(f"{wwhere}: goto unknown screen {eff.target!r}")
                if eff.kind == "open_overlay" and eff.target not in spec.overlays:
                    raise WorldValidationError(f"{wwhere}: open_overlay unknown overlay {eff.target!r}")
                if eff.kind == "set_flag" and eff.target not in flags:
                    raise WorldValidationError(f"{wwhere}: set_flag undeclared flag {eff.target!r}")
                if eff.kind == "append_text" and eff.target not in fields:
                    raise WorldValidationError(f"{wwhere}: append_text unknown field {eff.target!r}")
    for i, intr in enumerate(spec.interrupts):
        where = f"interrupt {i}"
        if intr.overlay_id not in spec.overlays:
            raise WorldValidationError(f"{where}: unknown overlay {intr.overlay_id!r}")
        if intr.mode == "modal":
            if intr.dismiss_widget is None:
                raise WorldValidationError(f"{where}: modal interrupt needs a dismiss_widget")
            if spec.overlays[intr.overlay_id].widget(intr.dismiss_widget) is None:
                raise WorldValidationError(
                    f"{where}: dismiss_widget {intr.dismiss_widget!r} not in overlay {intr.overlay_id!r}"
                )
        if intr.probability is not None and not 0.0 <= intr.probability <= 1.0:
            raise WorldValidationError(f"{where}: probability outside [0, 1]")
        if intr.at_step is not None and intr.at_step < 1:
            raise WorldValidationError(f"{where}: at_step must be >= 1")
    _check_predicate(spec.goal, spec, "goal")
    from .render import strip_capacity

    needed = 1 + len(spec.flags) + len(spec.field_ids) + len(spec.overlays)
    if needed > strip_capacity(w):
        raise WorldValidationError(f"screen too narrow to encode {needed} status cells")


def _check_predicate(pred: Any, spec: WorldSpec, where: str) -> None:
    if pred is True or pred is False:
        return
    if not isinstance(pred, dict) or len(pred) not in (1, 2):
        raise WorldValidationError(f"{where}: malformed predicate {pred!r}")
    if "all" in pred or "any" in pred:
        key = "all" if "all" in pred else "any"
        items = pred[key]
        if not isinstance(items, list):
            raise WorldValidationError(f"{where}: {key} needs a list")
        for j, item in enumerate(items):
            _check_predicate(item, spec, f"{where}.{key}[{j}]")
    elif "not" in pred:
        _check_predicate(pred["not"], spec, f"{where}.not")
    elif "flag" in pred:
        if pred["flag"] not in spec.flags:
            raise WorldValidationError(f"{where}: undeclared flag {pred['flag']!r}")
    elif "screen" in pred:
        if pred["screen"] not in spec.screens:
            raise WorldValidationError(f"{where}: unknown screen {pred['screen']!r}")
    elif "overlay_open" in pred:
        if pred["overlay_open"] not in spec.overlays:
            raise WorldValidationError(f"{where}: unknown overlay {pred['overlay_open']!r}")
    elif "field" in pred:
        if pred["field"] not in spec.field_ids:
            raise WorldValidationError(f"{where}: unknown field {pred['field']!r}")
        if "equals" not in pred:
            raise WorldValidationError(f"{where}: field predicate needs equals")
    else:
        raise WorldValidationError(f"{where}: malformed predicate {pred!r}")
