"""Run instruction lists against the simulator with the scripted oracles."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from ..model import InstructionList, Outcome, parse_instruction_file
from ..orchestrator import Backends, RunConfig, RunResult, evaluate_task, run_task
from .driver import SimDriver
from .engine import SimEnv
from .oracles import SimGroundingOracle, SimRecoveryPlanner, SimStateJudge
from .world import WorldSpec, WorldValidationError, load_world

CONDITIONS = {
    "full": {"use_verifier": True, "use_backtracker": True},
    "no-backtracker": {"use_verifier": True, "use_backtracker": False},
    "neither": {"use_verifier": False, "use_backtracker": False},
}


def builtin_world_path(name: str) -> Path | None:
    ref = resources.files("demoactor").joinpath("worlds", f"{name}.yaml")
    return Path(str(ref)) if ref.is_file() else None


def resolve_world(ref: str | Path) -> tuple[WorldSpec, Path]:
    """A world file path, or the name of a bundled world such as ``bookmark``."""
    path = Path(ref)
    if not path.is_file():
        builtin = builtin_world_path(str(ref))
        if builtin is None:
            raise WorldValidationError(f"no world file or bundled world named {ref!r}")
        path = builtin
    return load_world(path.read_bytes()), path


def builtin_instructions(name: str) -> InstructionList:
    ref = resources.files("demoactor").joinpath("worlds", f"{name}_instructions.jsonl")
    return parse_instruction_file(ref.read_bytes(), task_id=name)


def sim_backends(env: SimEnv) -> Backends:
    return Backends(SimGroundingOracle(env), SimStateJudge(env), SimRecoveryPlanner(env))


@dataclass
class SimRun:
    result: RunResult
    env: SimEnv
    goal_met: bool

    @property
    def success(self) -> bool:
        return self.result.outcome is Outcome.SUCCESS and self.goal_met


def run_in_sim(instructions: InstructionList, spec: WorldSpec, seed: int = 0,
               config: RunConfig = RunConfig()) -> SimRun:
    env = SimEnv(spec, seed)
    result = run_task(instructions, SimDriver(env), sim_backends(env), config)
    return SimRun(result, env, evaluate_task(env.state, spec))


def condition_config(base: RunConfig, condition: str) -> RunConfig:
    try:
        return replace(base, **CONDITIONS[condition])
    except KeyError:
        raise ValueError(f"unknown condition {condition!r}; pick from {sorted(CONDITIONS)}") from None


@dataclass(frozen=True)
class BatchRow:
    condition: str
    runs: int
    successes: int
    outcomes: tuple[bool, ...]

    @property
    def rate(self) -> float:
        return self.successes / self.runs if self.runs else 0.0


def run_batch(
    instructions: InstructionList,
    spec: WorldSpec,
    seeds: list[int],
    conditions: list[str],
    base: RunConfig = RunConfig(),
    workers: int = 4,
) -> list[BatchRow]:
    if not seeds:
        raise ValueError("batch needs at least one seed")
    rows = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for condition in conditions:
            config = condition_config(base, condition)
            outcomes = tuple(pool.map(lambda s: run_in_sim(instructions, spec, s, config).success, seeds))
            rows.append(BatchRow(condition, len(seeds), sum(outcomes), outcomes))
    return rows


def format_batch(rows: list[BatchRow]) -> str:
    lines = [f"{'condition':<16}{'runs':>6}{'success':>9}{'rate':>8}"]
    for r in rows:
        lines.append(f"{r.condition:<16}{r.runs:>6}{r.successes:>9}{r.rate:>8.3f}")
    return "\n".join(lines) + "\n"


def script_demo(spec: WorldSpec, instructions: InstructionList, gap: int = 700) -> list:
    """Raw input events a user would produce performing the instructions by hand.

    Targets are resolved against the true simulator state, so the script is a
    ground-truth demonstration independent of the instructor.
    """
    from ..executor import Click, MoveTo, TypeText
    from ..model import ActionClass, extract_payload
    from ..recorder import BUTTON_DOWN, BUTTON_UP, KEY_DOWN, KEY_UP, MOVE, RawEvent
    from .engine import apply_all, reset, visible_layers
    from .oracles import resolve_widget

    state = reset(spec.without_interrupts())
    events: list[RawEvent] = []
    t = gap
    for step in instructions:
        if step.action_class is ActionClass.TEXT_INPUT:
            text = extract_payload(step.action_text) or ""
            for i, ch in enumerate(text):
                events += [RawEvent(KEY_DOWN, t + 80 * i, key=ch), RawEvent(KEY_UP, t + 80 * i + 30, key=ch)]
            state = apply_all(state, [TypeText(text)], spec, interrupts=False)
            t += 80 * len(text) + gap
            continue
        found = resolve_widget(step.action_text, visible_layers(state, spec))
        if found is None:
            raise ValueError(f"no widget for {step.action_text!r}")
        p = found[1].rect.center
        events += [RawEvent(MOVE, t, position=p), RawEvent(BUTTON_DOWN, t + 20, position=p),
                   RawEvent(BUTTON_UP, t + 60, position=p)]
        state = apply_all(state, [MoveTo(p), Click(p)], spec, interrupts=False)
        t += gap
    return events
