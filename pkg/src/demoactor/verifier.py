"""Step verification: did the action have its intended effect?"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import Protocol

from .backends import BackendError, ImagePart, TextGenBackend, TextPart
from .model import ActionClass, InstructionStep, ModelError, Observation, Verification

logger = logging.getLogger(__name__)


class VerificationUnavailable(RuntimeError):
    """The judge could not give a verdict."""


@dataclass(frozen=True)
class JudgeResult:
    verdict: bool
    rationale: str = ""


@dataclass(frozen=True)
class Verdict:
    verification: Verification
    rationale: str = ""

    def __post_init__(self) -> None:
        if self.verification is Verification.SKIPPED and self.rationale:
            raise ModelError("a skipped verdict carries no rationale")


SKIPPED = Verdict(Verification.SKIPPED)


class JudgeInterface(Protocol):
    def judge(self, action_text: str, before: Observation, after: Observation) -> JudgeResult: ...


def should_verify(step: InstructionStep) -> bool:
    return step.action_class is ActionClass.POINTER


_OUTCOME_SPLIT = re.compile(r";\s*|\.\s+(?=(?:Clicking|This|It)\b)")


def expected_outcome(action_text: str) -> str:
    """The effect clause of an instruction, or the whole text if none is marked."""
    parts = _OUTCOME_SPLIT.split(action_text, maxsplit=1)
    return parts[1].strip() if len(parts) > 1 else action_text.strip()


def verify(step: InstructionStep, before: Observation, after: Observation, j: JudgeInterface) -> Verdict:
    if not should_verify(step):
        raise ModelError(f"{step.action_class.value} steps are not verified")
    if before.size != after.size:
        raise ModelError(f"observation sizes differ: {before.size} vs {after.size}")
    try:
        result = j.judge(step.action_text, before, after)
    except Exception as exc:  # any judge fault is an outage from the loop's point of view
        raise VerificationUnavailable(f"judge failed: {exc}") from exc
    verification = Verification.YES if result.verdict else Verification.NO
    return Verdict(verification, result.rationale)


class PixelDiffJudge:
    """Yes iff anything on screen changed."""

    def judge(self, action_text: str, before: Observation, after: Observation) -> JudgeResult:
        changed = before.digest != after.digest
        return JudgeResult(changed, "screen changed" if changed else "no visible change")


JUDGE_PROMPT = (
    "You see the screen before and after an action was performed.\n"
    "Action: {action}\nExpected outcome: {outcome}\n"
    "Did the action have the expected outcome? Answer YES or NO on the first line, "
    "then one sentence of reasoning."
)


class BackendJudge:
    """Judge that asks a text-generation backend for a YES/NO answer."""

    def __init__(self, backend: TextGenBackend) -> None:
        self.backend = backend

    def judge(self, action_text: str, before: Observation, after: Observation) -> JudgeResult:
        prompt = JUDGE_PROMPT.format(action=action_text, outcome=expected_outcome(action_text))
        try:
            reply = self.backend.generate(
                [TextPart(prompt), ImagePart(before, "before"), ImagePart(after, "after")]
            )
        except BackendError as exc:
            raise VerificationUnavailable(str(exc)) from exc
        words = reply.strip().split(None, 1)
        first = words[0].strip(".:,").upper() if words else ""
        if first not in ("YES", "NO"):
            raise VerificationUnavailable(f"judge reply has no verdict: {reply[:80]!r}")
        return JudgeResult(first == "YES", words[1].strip() if len(words) > 1 else "")
