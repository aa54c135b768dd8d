"""Flat-colour rendering of simulator state.

Every screen, overlay and widget gets a colour derived from its id, so an image
identifies what is on screen without any text rendering. A status strip along
the bottom edge encodes the parts of the state that are not otherwise visible
(flags, field contents, the overlay stack), which makes the render injective on
the logical state.
"""

from __future__ import annotations

import hashlib
from typing import NamedTuple

import numpy as np

from .world import Layer, WorldSpec

STRIP_HEIGHT = 4
CELL_WIDTH = 4
PAD_COLOR = (128, 128, 128)
FLAG_ON = (255, 255, 255)
FLAG_OFF = (0, 0, 0)
RESERVED = {PAD_COLOR, FLAG_ON, FLAG_OFF, (255, 0, 255)}


def strip_capacity(width: int) -> int:
    return width // CELL_WIDTH


def color_for(key: str) -> tuple[int, int, int]:
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=3).digest()
    rgb = (digest[0], digest[1], digest[2])
    if rgb in RESERVED:
        rgb = ((rgb[0] + 37) % 256, (rgb[1] + 91) % 256, rgb[2])
    return rgb


def widget_color(layer_id: str, widget_id: str) -> tuple[int, int, int]:
    return color_for(f"widget:{layer_id}/{widget_id}")


class SimCore(NamedTuple):
    """The observable part of a simulator state."""

    screen: str
    overlays: tuple[str, ...]
    flags: frozenset[str]
    fields: tuple[tuple[str, str], ...]


def _fill(img: np.ndarray, x0: int, y0: int, x1: int, y1: int, rgb) -> None:
    img[y0:y1, x0:x1] = rgb


def _draw_layer(img: np.ndarray, layer: Layer, fields: dict[str, str]) -> None:
    for w in layer.widgets:
        r = w.rect
        _fill(img, r.x0, r.y0, r.x1, r.y1, widget_color(layer.layer_id, w.widget_id))
    tf = layer.text_field
    if tf is not None:
        r = tf.rect
        _fill(img, r.x0, r.y0, r.x1, r.y1, color_for(f"field:{tf.field_id}={fields.get(tf.field_id, '')}"))


def render(spec: WorldSpec, core: SimCore) -> np.ndarray:
    width, height = spec.screen_size
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[:, :] = color_for(f"screen:{core.screen}")
    fields = dict(core.fields)
    _draw_layer(img, spec.screens[core.screen], fields)
    for overlay_id in core.overlays:
        layer = spec.overlays[overlay_id]
        r = layer.rect
        _fill(img, r.x0, r.y0, r.x1, r.y1, color_for(f"overlay:{overlay_id}"))
        _draw_layer(img, layer, fields)

    cells = [color_for(f"screen:{core.screen}")]
    cells += [FLAG_ON if f in core.flags else FLAG_OFF for f in spec.flags]
    cells += [color_for(f"field:{fid}={fields.get(fid, '')}") for fid in spec.field_ids]
    cells += [color_for(f"overlay:{oid}") for oid in core.overlays]
    y0 = height - STRIP_HEIGHT
    img[y0:, :] = PAD_COLOR
    for i, rgb in enumerate(cells):
        img[y0:, i * CELL_WIDTH:(i + 1) * CELL_WIDTH] = rgb
    return img
