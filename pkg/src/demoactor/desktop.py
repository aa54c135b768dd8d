"""Adapters for a real desktop. The OS libraries are imported lazily.

Recording uses ``pynput`` for hooks and Pillow's ImageGrab for frames;
execution uses ``pyautogui``. None of them are needed in sim mode.
"""

from __future__ import annotations

import logging
import time
from typing import Callable

import numpy as np

from .executor import (
    ButtonDown,
    ButtonUp,
    Click,
    DriverError,
    KeyDown,
    KeyUp,
    MoveTo,
    Primitive,
    Scroll,
    TypeText,
    Wait,
)
from .model import Observation, Point
from .recorder import BUTTON_DOWN, BUTTON_UP, KEY_DOWN, KEY_UP, MOVE, SCROLL, RawEvent, normalize_key

logger = logging.getLogger(__name__)


class DesktopUnavailable(RuntimeError):
    pass


def _require(module: str):
    try:
        return __import__(module)
    except ImportError as exc:
        raise DesktopUnavailable(f"real mode needs the '{module}' package ({exc})") from exc


class ImageGrabCapture:
    def grab(self) -> np.ndarray:
        try:
            from PIL import ImageGrab

            return np.asarray(ImageGrab.grab().convert("RGB"))
        except (ImportError, OSError) as exc:
            raise DesktopUnavailable(f"screen capture is not available: {exc}") from exc


class PynputHooks:
    """Global mouse and keyboard listeners."""

    def __init__(self) -> None:
        self._listeners: list = []

    def register(self, callback: Callable[[RawEvent], None]) -> None:
        _require("pynput")
        from pynput import keyboard, mouse

        def key_name(key) -> str:
            char = getattr(key, "char", None)
            return normalize_key(char if char else str(key).replace("Key.", ""))

        def on_click(x, y, button, pressed):
            kind = BUTTON_DOWN if pressed else BUTTON_UP
            callback(RawEvent(kind, position=Point(int(x), int(y)), button=button.name))

        def on_move(x, y):
            callback(RawEvent(MOVE, position=Point(int(x), int(y))))

        def on_scroll(x, y, dx, dy):
            callback(RawEvent(SCROLL, position=Point(int(x), int(y)), delta=int(dy)))

        self._listeners = [
            mouse.Listener(on_click=on_click, on_move=on_move, on_scroll=on_scroll),
            keyboard.Listener(
                on_press=lambda k: callback(RawEvent(KEY_DOWN, key=key_name(k))),
                on_release=lambda k: callback(RawEvent(KEY_UP, key=key_name(k))),
            ),
        ]
        for listener in self._listeners:
            listener.start()

    def unregister(self) -> None:
        for listener in self._listeners:
            listener.stop()
        self._listeners = []


class PyAutoGuiDriver:
    def __init__(self) -> None:
        self.gui = _require("pyautogui")
        self.capture_source = ImageGrabCapture()
        self._t0 = time.monotonic()

    def screen_size(self) -> tuple[int, int]:
        w, h = self.gui.size()
        return int(w), int(h)

    def capture(self) -> Observation:
        ts = int((time.monotonic() - self._t0) * 1000)
        return Observation.from_pixels(self.capture_source.grab(), ts)

    def settle(self, ms: float) -> None:
        time.sleep(ms / 1000.0)

    def apply(self, p: Primitive) -> None:
        g = self.gui
        try:
            if isinstance(p, MoveTo):
                g.moveTo(p.point.x, p.point.y)
            elif isinstance(p, Click):
                g.click(p.point.x, p.point.y, clicks=p.count, button=p.button)
            elif isinstance(p, ButtonDown):
                g.mouseDown(button=p.button)
            elif isinstance(p, ButtonUp):
                g.mouseUp(button=p.button)
            elif isinstance(p, KeyDown):
                g.keyDown(p.key)
            elif isinstance(p, KeyUp):
                g.keyUp(p.key)
            elif isinstance(p, TypeText):
                g.write(p.text)
            elif isinstance(p, Scroll):
                g.scroll(p.delta)
            elif isinstance(p, Wait):
                time.sleep(p.ms / 1000.0)
            else:
                raise DriverError(f"unsupported primitive {p!r}")
        except DriverError:
            raise
        except Exception as exc:
            raise DriverError(str(exc)) from exc
