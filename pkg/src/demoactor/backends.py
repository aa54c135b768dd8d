"""Text-generation backends: the prompt-part types, a scripted mock and an HTTP client."""

from __future__ import annotations

import base64
import io
import logging
import os
from dataclasses import dataclass
from typing import Any, Callable, Protocol, Sequence, Union

import requests
from PIL import Image

from .model import Observation

logger = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """A model backend failed or returned something unusable."""


class BackendTimeout(BackendError):
    pass


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    observation: Observation
    label: str = ""


PromptPart = Union[TextPart, ImagePart]


class TextGenBackend(Protocol):
    model: str
    timeout: float

    def generate(self, parts: Sequence[PromptPart]) -> str: ...


def png_bytes(obs: Observation) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(obs.pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_base64(obs: Observation) -> str:
    return base64.b64encode(png_bytes(obs)).decode("ascii")


class ScriptedBackend:
    """Replies from a list (in call order) or from a function of the prompt.

    Entries that are exceptions are raised instead of returned. ``calls`` counts
    every generate() call, which is what the no-backend-call checks rely on.
    """

    def __init__(
        self,
        responses: Sequence[str | BaseException] | Callable[[Sequence[PromptPart]], str] = (),
        model: str = "scripted",
        timeout: float = 1.0,
    ) -> None:
        self._responses = responses
        self.model = model
        self.timeout = timeout
        self.calls = 0
        self.prompts: list[tuple[PromptPart, ...]] = []

    def generate(self, parts: Sequence[PromptPart]) -> str:
        index = self.calls
        self.calls += 1
        self.prompts.append(tuple(parts))
        if callable(self._responses):
            return self._responses(parts)
        if index >= len(self._responses):
            raise BackendError(f"scripted backend has no response #{index}")
        reply = self._responses[index]
        if isinstance(reply, BaseException):
            raise reply
        return reply


def bearer_headers(token_env: str | None) -> dict[str, str]:
    if not token_env:
        return {}
    token = os.environ.get(token_env)
    if not token:
        raise BackendError(f"credential variable {token_env} is not set")
    return {"Authorization": f"Bearer {token}"}


def chat_content(parts: Sequence[PromptPart]) -> list[dict[str, Any]]:
    content: list[dict[str, Any]] = []
    for part in parts:
        if isinstance(part, TextPart):
            content.append({"type": "text", "text": part.text})
        else:
            if part.label:
                content.append({"type": "text", "text": f"[{part.label} screenshot]"})
            content.append({
                "type": "image_url",
                "image_url": {"url": f"data:image/png;base64,{png_base64(part.observation)}"},
            })
    return content


class HttpTextBackend:
    """OpenAI-compatible chat-completions client."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        token_env: str | None = None,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ) -> None:
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.token_env = token_env
        self.timeout = timeout
        self.session = session or requests.Session()

    def generate(self, parts: Sequence[PromptPart]) -> str:
        body = {
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": chat_content(parts)}],
        }
        url = f"{self.endpoint}/chat/completions"
        try:
            resp = self.session.post(url, json=body, headers=bearer_headers(self.token_env),
                                     timeout=self.timeout)
        except requests.Timeout as exc:
            raise BackendTimeout(f"{url} timed out after {self.timeout}s") from exc
        except requests.RequestException as exc:
            raise BackendError(f"{url}: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"{url} returned HTTP {resp.status_code}")
        try:
            return str(resp.json()["choices"][0]["message"]["content"])
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"{url}: unexpected response shape") from exc
