"""Turn an instruction's target description into a pixel point and a GroundedCommand."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Protocol

import requests

from .backends import BackendError, BackendTimeout, bearer_headers, png_base64
from .model import (
    ActionClass,
    EventKind,
    GroundedCommand,
    InstructionStep,
    ModelError,
    Observation,
    Point,
)

logger = logging.getLogger(__name__)


class GroundingError(RuntimeError):
    pass


class GroundingMiss(GroundingError):
    """The interface found nothing matching the description."""


class GroundingInvalid(GroundingError):
    """The interface answered with a point outside the screenshot."""


class ContractError(ModelError):
    pass


@dataclass(frozen=True)
class GroundingResponse:
    point: Point | None
    raw: str = ""


@dataclass(frozen=True)
class GroundedTarget:
    point: Point
    raw_response: str = ""


class GroundingInterface(Protocol):
    endpoint: str
    timeout: float

    def locate(self, instruction_text: str, screenshot: Observation,
               hint: Point | None = None) -> GroundingResponse: ...


def ground(step: InstructionStep, obs: Observation, g: GroundingInterface) -> GroundedTarget:
    if step.action_class is not ActionClass.POINTER:
        raise ContractError(f"only pointer steps are grounded, got {step.action_class.value}")
    resp = g.locate(step.action_text, obs, step.source_point)
    if resp.point is None:
        raise GroundingMiss(f"no target found for: {step.action_text[:80]}")
    point = Point(int(resp.point[0]), int(resp.point[1]))
    if not point.within(obs.width, obs.height):
        # never clamp: a silently moved click hides the fault
        raise GroundingInvalid(f"point {tuple(point)} outside {obs.width}x{obs.height}")
    return GroundedTarget(point, resp.raw)


def pointer_kind(action_text: str) -> EventKind:
    lead = action_text.lstrip().lower()
    if lead.startswith("double"):
        return EventKind.DOUBLE_CLICK
    if lead.startswith("right"):
        return EventKind.RIGHT_CLICK
    if lead.startswith("scroll"):
        return EventKind.SCROLL
    if lead.startswith("drag"):
        return EventKind.DRAG
    return EventKind.LEFT_CLICK


_SCROLL_DOWN = re.compile(r"\bdown\b", re.I)


def to_command(step: InstructionStep, target: GroundedTarget | None, origin_step: int) -> GroundedCommand:
    if step.action_class is ActionClass.TEXT_INPUT:
        return GroundedCommand(EventKind.TEXT_BURST, origin_step, payload=step.payload)
    if step.action_class is ActionClass.KEY_PRESS:
        return GroundedCommand(EventKind.KEY_PRESS, origin_step, payload=step.payload)
    if target is None:
        raise ContractError(f"pointer step {origin_step} needs a grounded target")
    kind = pointer_kind(step.action_text)
    if kind is EventKind.DRAG:
        # a single grounded point cannot express a drag's end
        raise ContractError(f"step {origin_step}: drag needs an end point")
    delta = 0
    if kind is EventKind.SCROLL:
        delta = -3 if _SCROLL_DOWN.search(step.action_text) else 3
    return GroundedCommand(kind, origin_step, target=target.point, scroll_delta=delta)


# ---------------------------------------------------------------------------
# HTTP client
# ---------------------------------------------------------------------------

_PAIR = re.compile(r"\(?\s*(-?\d+(?:\.\d+)?)\s*,\s*(-?\d+(?:\.\d+)?)\s*\)?")

GROUNDING_PROMPT = (
    "Return the screen coordinates of the element this action refers to as (x, y). "
    "If the element is not visible, answer NONE.\nAction: {text}"
)


def parse_point_text(text: str) -> Point | None:
    if text.strip().upper().startswith("NONE"):
        return None
    m = _PAIR.search(text)
    if not m:
        return None
    return Point(int(round(float(m.group(1)))), int(round(float(m.group(2)))))


class HttpGrounder:
    """Grounding service client.

    ``wire="json"`` posts ``{instruction, image, hint}`` and reads ``{"x", "y"}``
    (or ``{"point": [x, y]}``); ``wire="openai-chat"`` sends a chat completion
    and parses "(x, y)" from the reply. ``coordinates="normalized_1000"`` rescales
    answers given on a 0..1000 grid.
    """

    def __init__(
        self,
        endpoint: str,
        token_env: str | None = None,
        timeout: float = 30.0,
        wire: str = "json",
        model: str = "",
        coordinates: str = "pixel",
        session: requests.Session | None = None,
    ) -> None:
        if wire not in ("json", "openai-chat"):
            raise ValueError(f"unknown wire format {wire!r}")
        if coordinates not in ("pixel", "normalized_1000"):
            raise ValueError(f"unknown coordinate convention {coordinates!r}")
        self.endpoint = endpoint.rstrip("/")
        self.token_env = token_env
        self.timeout = timeout
        self.wire = wire
        self.model = model
        self.coordinates = coordinates
        self.session = session or requests.Session()

    def _post(self, url: str, body: dict) -> requests.Response:
        try:
            resp = self.session.post(url, json=body, headers=bearer_headers(self.token_env),
                                     timeout=self.timeout)
        except requests.Timeout as exc:
            raise BackendTimeout(f"{url} timed out after {self.timeout}s") from exc
        except requests.RequestException as exc:
            raise BackendError(f"{url}: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"{url} returned HTTP {resp.status_code}")
        return resp

    def _scale(self, p: Point | None, obs: Observation) -> Point | None:
        if p is None or self.coordinates == "pixel":
            return p
        return Point(int(round(p.x * obs.width / 1000)), int(round(p.y * obs.height / 1000)))

    def locate(self, instruction_text: str, screenshot: Observation,
               hint: Point | None = None) -> GroundingResponse:
        if self.wire == "json":
            body = {"instruction": instruction_text, "image": png_base64(screenshot)}
            if hint is not None:
                body["hint"] = list(hint)
            resp = self._post(self.endpoint, body)
            raw = resp.text
            try:
                data = resp.json()
            except ValueError:
                return GroundingResponse(self._scale(parse_point_text(raw), screenshot), raw)
            if not isinstance(data, dict):
                raise BackendError("grounding response is not an object")
            if data.get("point") is not None:
                x, y = data["point"]
            elif "x" in data and "y" in data and data["x"] is not None:
                x, y = data["x"], data["y"]
            else:
                return GroundingResponse(None, raw)
            point = Point(int(round(float(x))), int(round(float(y))))
            return GroundingResponse(self._scale(point, screenshot), raw)

        text = GROUNDING_PROMPT.format(text=instruction_text)
        if hint is not None:
            text += f"\nDuring the demonstration this element was near {tuple(hint)}."
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": [
                {"type": "text", "text": text},
                {"type": "image_url",
                 "image_url": {"url": f"data:image/png;base64,{png_base64(screenshot)}"}},
            ]}],
        }
        resp = self._post(f"{self.endpoint}/chat/completions", body)
        try:
            raw = str(resp.json()["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError("unexpected chat response shape") from exc
        return GroundingResponse(self._scale(parse_point_text(raw), screenshot), raw)

