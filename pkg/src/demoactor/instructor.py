"""Compile a recorded demonstration into step-by-step natural-language instructions."""

from __future__ import annotations

import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources

from .backends import ImagePart, TextGenBackend, TextPart
from .model import (
    ActionClass,
    DemoStep,
    Demonstration,
    EventKind,
    InstructionList,
    InstructionStep,
    ModelError,
    classify_action,
    extract_payload,
    press_action_text,
    type_action_text,
)
from .recorder import annotate_click

logger = logging.getLogger(__name__)

PROMPT_VERSION = "instruction_v1"
EVENT_HEADER = "Event:"


class StepGenerationError(RuntimeError):
    def __init__(self, index: int, message: str) -> None:
        super().__init__(f"step {index}: {message}")
        self.index = index


class InstructionValidationError(ModelError):
    def __init__(self, index: int, message: str) -> None:
        super().__init__(f"step {index}: {message}")
        self.index = index


def prompt_template(version: str = PROMPT_VERSION) -> str:
    return resources.files("demoactor").joinpath("prompts", f"{version}.txt").read_text(encoding="utf-8")


def event_description(step: DemoStep) -> str:
    return EVENT_HEADER + " " + json.dumps(step.event.to_dict(), sort_keys=True)


def _annotated_before(step: DemoStep):
    obs = step.obs_before
    ev = step.event
    obs = annotate_click(obs, ev.position)
    if ev.kind is EventKind.DRAG:
        obs = annotate_click(obs, ev.end_position)
    return obs


def generate_step_instruction(step: DemoStep, backend: TextGenBackend, index: int = 0) -> InstructionStep:
    ev = step.event
    if ev.kind is EventKind.TEXT_BURST:
        return InstructionStep(type_action_text(ev.text), ActionClass.TEXT_INPUT, payload=ev.text)
    if ev.kind is EventKind.KEY_PRESS:
        return InstructionStep(press_action_text(ev.key), ActionClass.KEY_PRESS, payload=ev.key)

    parts = [
        TextPart(prompt_template()),
        ImagePart(_annotated_before(step), "before"),
        ImagePart(step.obs_after, "after"),
        TextPart(event_description(step)),
    ]
    try:
        reply = backend.generate(parts)
    except Exception as exc:
        raise StepGenerationError(index, f"backend failed: {exc}") from exc
    text = " ".join(str(reply).split())
    if not text:
        raise InstructionValidationError(index, "backend returned an empty instruction")
    if classify_action(text) is not ActionClass.POINTER:
        raise InstructionValidationError(index, f"pointer action described as {text[:20]!r}")
    return InstructionStep(text, ActionClass.POINTER, source_point=ev.position)


def generate_instructions(
    demo: Demonstration,
    backend: TextGenBackend,
    task_id: str | None = None,
    max_workers: int = 1,
) -> InstructionList:
    """All-or-nothing: any failing step aborts the whole list, earliest index first."""
    if not demo.steps:
        raise ModelError("demonstration has no steps")
    n = len(demo.steps)
    results: list[InstructionStep | None] = [None] * n
    errors: dict[int, Exception] = {}

    def work(i: int) -> None:
        try:
            results[i] = generate_step_instruction(demo.steps[i], backend, i)
        except (StepGenerationError, InstructionValidationError) as exc:
            errors[i] = exc

    if max_workers <= 1:
        for i in range(n):
            work(i)
            if errors:
                break
    else:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            list(pool.map(work, range(n)))
    if errors:
        raise errors[min(errors)]
    return InstructionList(task_id or demo.session_id, tuple(results))


# ---------------------------------------------------------------------------
# Lint
# ---------------------------------------------------------------------------

_OUTCOME = re.compile(
    r";\s*(this|it|which|clicking)\b"
    r"|\bthis (action|button|is|opens|closes|will)\b"
    r"|\b(to|which|that|will|and) (open|opens|close|closes|display|displays|show|shows|save|saves"
    r"|confirm|confirms|switch|switches|bring|brings|create|creates|return|returns)\b"
    r"|\bclicking it\b",
    re.IGNORECASE,
)


@dataclass(frozen=True)
class Finding:
    code: str
    message: str


def validate_instruction(step: InstructionStep) -> list[Finding]:
    findings: list[Finding] = []
    text = step.action_text or ""
    if not text.strip():
        return [Finding("empty-text", "action text is empty")]
    if step.action_class is ActionClass.POINTER:
        if not _OUTCOME.search(text):
            findings.append(Finding("missing-outcome", "pointer step does not say what the action changes"))
    else:
        expected = extract_payload(text)
        if classify_action(text) is not step.action_class:
            findings.append(Finding("class-mismatch", f"text reads as {classify_action(text).value}"))
        elif expected != step.payload:
            findings.append(Finding("payload-mismatch",
                                    f"payload {step.payload!r} disagrees with action text {expected!r}"))
    return findings
