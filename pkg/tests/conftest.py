from __future__ import annotations

import os
from importlib import resources

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from demoactor.model import Observation, parse_instruction_file
from demoactor.sim.harness import builtin_instructions, resolve_world

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

WORLDS = resources.files("demoactor").joinpath("worlds")


@pytest.fixture(scope="session")
def bookmark_spec():
    return resolve_world("bookmark")[0]


@pytest.fixture(scope="session")
def bookmark_instructions():
    return builtin_instructions("bookmark")


@pytest.fixture(scope="session")
def bookmark_file_bytes() -> bytes:
    return WORLDS.joinpath("bookmark_instructions.jsonl").read_bytes()


@pytest.fixture(scope="session")
def chain_spec():
    return resolve_world("popup_chain")[0]


@pytest.fixture(scope="session")
def chain_instructions():
    return builtin_instructions("popup_chain")


def solid(width: int = 64, height: int = 48, rgb=(10, 20, 30), ts: int = 0) -> Observation:
    pixels = np.zeros((height, width, 3), dtype=np.uint8)
    pixels[:, :] = rgb
    return Observation.from_pixels(pixels, ts)


def instructions(*texts: str, task_id: str = "t"):
    import json

    return parse_instruction_file("".join(json.dumps({"action": t}) + "\n" for t in texts), task_id)
