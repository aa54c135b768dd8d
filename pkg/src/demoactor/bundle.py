"""On-disk demo bundles: event log, paired screenshots and a manifest."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from PIL import Image

from .model import DemoStep, Demonstration, InputEvent, ModelError, Observation

logger = logging.getLogger(__name__)

BUNDLE_FORMAT_VERSION = 1


class BundleError(ModelError):
    pass


def _write_png(obs: Observation, path: Path) -> None:
    Image.fromarray(np.asarray(obs.pixels), mode="RGB").save(path, format="PNG")


def _read_png(path: Path, timestamp: int, digest: str) -> Observation:
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise BundleError(f"cannot read screenshot {path.name}: {exc}") from exc
    obs = Observation.from_pixels(pixels, timestamp)
    if obs.digest != digest:
        raise BundleError(f"screenshot {path.name} does not match its manifest digest")
    return obs


def write_bundle(demo: Demonstration, directory: str | Path) -> Path:
    root = Path(directory)
    shots = root / "screenshots"
    shots.mkdir(parents=True, exist_ok=True)
    entries = []
    with open(root / "events.jsonl", "w", encoding="utf-8") as fh:
        for i, step in enumerate(demo.steps):
            fh.write(json.dumps(step.event.to_dict(), ensure_ascii=False) + "\n")
            pre, post = f"{i}_pre.png", f"{i}_post.png"
            _write_png(step.obs_before, shots / pre)
            _write_png(step.obs_after, shots / post)
            entries.append({
                "index": i,
                "pre": {"file": pre, "timestamp": step.obs_before.timestamp, "digest": step.obs_before.digest},
                "post": {"file": post, "timestamp": step.obs_after.timestamp, "digest": step.obs_after.digest},
            })
    manifest = {
        "format_version": BUNDLE_FORMAT_VERSION,
        "session_id": demo.session_id,
        "screen_size": list(demo.screen_size),
        "steps": entries,
    }
    # manifest last: its presence marks a complete bundle
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return root


def read_bundle(directory: str | Path) -> Demonstration:
    root = Path(directory)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
        lines = (root / "events.jsonl").read_text(encoding="utf-8").split("\n")
    except FileNotFoundError as exc:
        raise BundleError(f"not a demo bundle: {exc.filename} missing") from exc
    except json.JSONDecodeError as exc:
        raise BundleError(f"manifest is not valid JSON: {exc.msg}") from exc
    if manifest.get("format_version") != BUNDLE_FORMAT_VERSION:
        raise BundleError(f"unsupported bundle format {manifest.get('format_version')!r}")
    try:
        events = [InputEvent.from_dict(json.loads(line)) for line in lines if line.strip()]
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise BundleError(f"bad event log: {exc}") from exc
    entries = manifest.get("steps", [])
    if len(entries) != len(events):
        raise BundleError(f"{len(events)} events but {len(entries)} manifest entries")
    steps = []
    for ev, entry in zip(events, entries):
        pre, post = entry["pre"], entry["post"]
        steps.append(DemoStep(
            _read_png(root / "screenshots" / pre["file"], pre["timestamp"], pre["digest"]),
            ev,
            _read_png(root / "screenshots" / post["file"], post["timestamp"], post["digest"]),
        ))
    if not steps:
        raise BundleError("bundle holds no steps")
    return Demonstration(tuple(steps), tuple(manifest["screen_size"]), str(manifest["session_id"]))
