"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line."""

from __future__ import annotations

import json
import random
import threading
import time
from importlib import resources

import mpmath
import pytest

from demoactor.backends import ScriptedBackend
from demoactor.backtracker import RecoveryConfig
from demoactor.cli import EXIT_OK, main
from demoactor.model import (
    ActionClass,
    Outcome,
    chain_success_probability,
    parse_instruction_file,
    serialize_instruction_file,
)
from demoactor.orchestrator import Backends, RunConfig, evaluate_task, load_run_log, primitive_cap, replay_commands, \
    run_task
from demoactor.sim.driver import SimDriver
from demoactor.sim.engine import SimEnv
from demoactor.sim.generate import generate_world, instructions_for_path, instructions_for_unreachable, shortest_path
from demoactor.sim.harness import builtin_instructions, resolve_world, run_in_sim
from demoactor.sim.world import load_world

from conftest import instructions
from helpers import (
    ChangingDriver,
    ConstantJudge,
    CountingDriver,
    FixedGrounder,
    check_schedule_invariants,
    digest_trace,
    random_primitives,
    run_schedule,
)

# 0.9**21 at 50 significant digits, computed with mpmath before the build
NINE_TENTHS_POW_21 = "0.109418989131512359209"
SAVE = "Left click on the 'Save' button; this action saves the file."


@pytest.fixture
def report(capsys):
    def emit(name: str, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return emit


def builtin_file(tmp_path, name: str):
    path = tmp_path / f"{name}.jsonl"
    path.write_bytes(resources.files("demoactor").joinpath("worlds", f"{name}_instructions.jsonl").read_bytes())
    return path


class MissGrounder(FixedGrounder):
    def locate(self, text, shot, hint=None):
        from demoactor.grounder import GroundingResponse

        self.calls += 1
        return GroundingResponse(None)


class RandomGrounder(FixedGrounder):
    def __init__(self, rng, hit_rate):
        super().__init__()
        self.rng = rng
        self.hit_rate = hit_rate

    def locate(self, text, shot, hint=None):
        from demoactor.grounder import GroundingResponse
        from demoactor.model import Point

        self.calls += 1
        if self.rng.random() < self.hit_rate:
            return GroundingResponse(Point(self.rng.randrange(shot.width), self.rng.randrange(shot.height)))
        return GroundingResponse(Point(-1, 0) if self.rng.random() < 0.3 else None)


class RandomJudge(ConstantJudge):
    def __init__(self, rng, yes_rate):
        super().__init__(False)
        self.rng = rng
        self.yes_rate = yes_rate

    def judge(self, action_text, before, after):
        from demoactor.verifier import JudgeResult

        self.calls += 1
        return JudgeResult(self.rng.random() < self.yes_rate, "random")


def test_ac1_bookmark_run(tmp_path, capsys, report):
    start = time.perf_counter()
    code = main(["run", str(builtin_file(tmp_path, "bookmark")), "--world", "bookmark",
                 "--log", str(tmp_path / "run.json")])
    elapsed = time.perf_counter() - start
    lines = capsys.readouterr().out.splitlines()
    yes = lines.count("Verification Response: YES")
    skip = lines.count("(No need to verify text input or key press)")
    done = "All steps completed successfully." in lines
    spec, _ = resolve_world("bookmark")
    env = SimEnv(spec, 0)
    replay_commands(load_run_log(tmp_path / "run.json").commands(), SimDriver(env))
    goal = evaluate_task(env.state, spec)
    ok = code == EXIT_OK and yes == 20 and skip == 1 and done and goal and elapsed < 5
    report("AC1 bookmark run", ok, f"exit={code} yes={yes} skip={skip} done={done} goal={goal} {elapsed:.2f}s")


def test_ac2_ablation_ordering(tmp_path, capsys, report):
    spec, _ = resolve_world("popup_chain")
    probs = sorted({i.probability for i in spec.interrupts})
    out = tmp_path / "batch.json"
    start = time.perf_counter()
    code = main(["batch", str(builtin_file(tmp_path, "popup_chain")), "--world", "popup_chain",
                 "--seeds", "100", "--json", str(out)])
    elapsed = time.perf_counter() - start
    capsys.readouterr()
    rates = {r["condition"]: r["rate"] for r in json.loads(out.read_text())}
    full, nob, neither = rates["full"], rates["no-backtracker"], rates["neither"]
    ok = (code == EXIT_OK and probs == [0.15] and full >= nob >= neither
          and full - neither >= 0.10 and elapsed < 60)
    report("AC2 ablation ordering", ok,
           f"full={full:.2f} no-backtracker={nob:.2f} neither={neither:.2f} p={probs} {elapsed:.1f}s")


def test_ac3_appendix_round_trip(bookmark_file_bytes, report):
    text = bookmark_file_bytes.decode("utf-8")
    canonical = "".join(json.dumps(json.loads(line), ensure_ascii=False) + "\n"
                        for line in text.split("\n") if line.strip()).encode("utf-8")
    parsed = parse_instruction_file(canonical, "bookmark")
    same = serialize_instruction_file(parsed) == canonical
    classes = [s.action_class for s in parsed]
    ok = (same and len(classes) == 21 and classes[7] is ActionClass.TEXT_INPUT
          and all(c is ActionClass.POINTER for i, c in enumerate(classes) if i != 7))
    report("AC3 instruction file round trip", ok,
           f"byte-identical={same} steps={len(classes)} step8={classes[7].value}")


def test_ac4_bounded_failure(report):
    config = RunConfig(max_step_retries=2, recovery=RecoveryConfig(3, 5))
    cap = primitive_cap(5, config)
    plan = json.dumps({"action": SAVE})
    drv = ChangingDriver()
    res = run_task(instructions(*[SAVE] * 5), drv,
                   Backends(MissGrounder(), ConstantJudge(False), ScriptedBackend(lambda p: plan)), config)
    single_ok = res.outcome is Outcome.FAILED and len(drv.applied) <= cap

    failures: list[str] = []

    def fuzz() -> None:
        rng = random.Random(20261014)
        for i in range(1000):
            cfg = RunConfig(
                max_step_retries=rng.randint(0, 3),
                recovery=RecoveryConfig(rng.randint(1, 4), rng.randint(1, 6)),
                global_step_budget=rng.randint(1, 40),
            )
            n = rng.randint(1, 6)
            plan_len = rng.randint(0, 8)
            driver = ChangingDriver() if rng.random() < 0.7 else CountingDriver(ChangingDriver().obs)
            planner = ScriptedBackend(lambda p, k=plan_len: "\n".join([plan] * k))
            r = run_task(instructions(*[SAVE] * n), driver,
                         Backends(RandomGrounder(rng, rng.random()), RandomJudge(rng, rng.random()), planner), cfg)
            if len(driver.applied) > primitive_cap(n, cfg) or r.log.totals.primitives != len(driver.applied):
                failures.append(f"config {i}: {len(driver.applied)} > {primitive_cap(n, cfg)}")

    worker = threading.Thread(target=fuzz, daemon=True)
    worker.start()
    worker.join(timeout=120)
    finished = not worker.is_alive()
    ok = single_ok and finished and not failures
    report("AC4 bounded failure", ok,
           f"outcome={res.outcome.value} primitives={len(drv.applied)}<=cap={cap} "
           f"fuzz finished={finished} violations={len(failures)}")


def random_schedule(rng: random.Random) -> list[tuple]:
    ops: list[tuple] = []
    for _ in range(rng.randint(0, 12)):
        kind, dt = rng.choice(("frame", "click", "key")), rng.randint(0, 1500)
        if kind == "frame":
            ops.append((kind, dt))
        elif kind == "click":
            ops.append((kind, dt, rng.randrange(64), rng.randrange(48)))
        else:
            ops.append((kind, dt, rng.choice(list("abcXYZ019 .,-") + ["enter", "tab"])))
    ops.append(("key", rng.randint(0, 1500), "z"))
    return ops


def test_ac5_recorder_ordering(tmp_path, report):
    rng = random.Random(5)
    bad = 0
    for i in range(10_000):
        demo, typed = run_schedule(random_schedule(rng), tmp_path / str(i))
        try:
            check_schedule_invariants(demo, typed)
        except AssertionError:
            bad += 1
    report("AC5 recorder ordering", bad == 0, f"10000 schedules, {bad} violations")


def test_ac6_chain_probability(report):
    got = chain_success_probability([0.9] * 21)
    with mpmath.workdps(50):
        oracle = mpmath.mpf("0.9") ** 21
    frozen_ok = abs(got - float(mpmath.mpf(NINE_TENTHS_POW_21))) < 1e-12 and abs(got - float(oracle)) < 1e-12
    rng = random.Random(6)
    bad = 0
    for _ in range(10_000):
        values = [rng.random() for _ in range(rng.randint(1, 25))]
        p = chain_success_probability(values)
        shuffled = values[:]
        rng.shuffle(shuffled)
        lowered = values[:]
        i = rng.randrange(len(values))
        lowered[i] *= rng.random()
        if abs(chain_success_probability(shuffled) - p) > 1e-12 * max(p, 1e-300) or \
                chain_success_probability(lowered) > p:
            bad += 1
    report("AC6 chain probability", frozen_ok and bad == 0,
           f"0.9^21={got!r} |err|={abs(got - float(oracle)):.1e} property violations={bad}/10000")


def test_ac7_sim_determinism(tmp_path, report):
    rng = random.Random(7)
    named = [resolve_world("bookmark")[0], resolve_world("popup_chain")[0]]
    mismatches = 0
    for _ in range(100):
        if rng.random() < 0.5:
            spec = rng.choice(named)
        else:
            spec = load_world(generate_world(rng, overlays=True, interrupts=True))
        seed = rng.randrange(2**31)
        script = random_primitives(rng, spec, rng.randint(1, 40))
        if digest_trace(spec, seed, script) != digest_trace(spec, seed, script):
            mismatches += 1
    replay_bad = 0
    chain = resolve_world("popup_chain")[0]
    task = builtin_instructions("popup_chain")
    for seed in range(20):
        run = run_in_sim(task, chain, seed)
        env = SimEnv(chain, seed)
        replay_commands(run.result.log.commands(), SimDriver(env))
        replay_bad += env.observe().digest != run.env.observe().digest
    ok = mismatches == 0 and replay_bad == 0
    report("AC7 sim determinism", ok, f"100 triples, {mismatches} digest mismatches; "
                                      f"20 log replays, {replay_bad} terminal mismatches")


def test_ac8_closed_loop_generated(report):
    rng = random.Random(8)
    reachable = unreachable = bad = 0
    start = time.perf_counter()
    for i in range(2000):
        spec = load_world(generate_world(rng, max_screens=4, max_widgets=3))
        path = shortest_path(spec)
        if path is None:
            unreachable += 1
            run = run_in_sim(instructions_for_unreachable(spec, f"g{i}"), spec, seed=i)
            bad += run.success
        elif path:
            reachable += 1
            run = run_in_sim(instructions_for_path(path, f"g{i}"), spec, seed=i)
            bad += not run.success
    elapsed = time.perf_counter() - start
    ok = bad == 0 and reachable > 0 and unreachable > 0
    report("AC8 closed loop on generated worlds", ok,
           f"reachable={reachable} unreachable={unreachable} wrong={bad} {elapsed:.1f}s")
