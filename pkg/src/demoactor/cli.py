"""Command-line entry points: record, compile, run, batch, report, simulate, replay.

Exit codes: 0 success, 1 task failure, 2 usage or configuration error,
3 backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .backends import BackendError, HttpTextBackend
from .bundle import BundleError, read_bundle
from .config import ConfigError, ToolkitConfig, discover_config
from .grounder import HttpGrounder
from .instructor import InstructionValidationError, StepGenerationError, generate_instructions, validate_instruction
from .model import (
    InstructionFileError,
    InstructionList,
    ModelError,
    Outcome,
    RunLog,
    parse_instruction_file,
    serialize_instruction_file,
)
from .orchestrator import Backends, RunConfig, emit_trace, load_run_log, replay_commands, run_task, save_run_log
from .recorder import RecorderConfig, RecorderStartupError, raw_events_from_dicts
from .verifier import BackendJudge

logger = logging.getLogger("demoactor")

EXIT_OK = 0
EXIT_TASK_FAILED = 1
EXIT_USAGE = 2
EXIT_BACKEND = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse would exit with 2 itself; keep it in one place
        raise UsageError(message)


def _read_jsonl(path: Path) -> list[dict]:
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc
    out = []
    for n, line in enumerate(lines, start=1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}:{n}: malformed JSON ({exc.msg})") from exc
    return out


def _load_instructions(path: str) -> InstructionList:
    p = Path(path)
    try:
        return parse_instruction_file(p.read_bytes(), task_id=p.stem)
    except OSError as exc:
        raise UsageError(f"cannot read instructions {p}: {exc}") from exc


def _world(args):
    from .sim.harness import resolve_world

    if not args.world:
        raise UsageError("sim mode needs --world")
    spec, _ = resolve_world(args.world)
    return spec


def _run_config(cfg: ToolkitConfig, args) -> RunConfig:
    run = cfg.run
    changes = {}
    if getattr(args, "max_step_retries", None) is not None:
        changes["max_step_retries"] = args.max_step_retries
    if getattr(args, "budget", None) is not None:
        changes["global_step_budget"] = args.budget
    if getattr(args, "no_verifier", False):
        changes["use_verifier"] = False
    if getattr(args, "no_backtracker", False):
        changes["use_backtracker"] = False
    return replace(run, **changes)


def real_backends(cfg: ToolkitConfig) -> Backends:
    g = cfg.endpoint("grounder")
    grounder = HttpGrounder(g.url, g.token_env, g.timeout, wire=g.options.get("wire", "json"),
                            model=g.model, coordinates=g.options.get("coordinates", "pixel"))
    j = cfg.endpoint("judge")
    p = cfg.endpoint("planner")
    return Backends(
        grounder=grounder,
        judge=BackendJudge(HttpTextBackend(j.url, j.model, j.token_env, j.timeout)),
        planner=HttpTextBackend(p.url, p.model, p.token_env, p.timeout),
    )


def _backend_failed(log: RunLog) -> bool:
    if log.outcome is Outcome.SUCCESS or not log.records:
        return False
    last = log.records[-1]
    return bool(last.attempts) and last.attempts[-1].backend_failure


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_record(args, cfg: ToolkitConfig) -> int:
    out = Path(args.out) if args.out else cfg.paths.bundles
    if not out.parent.exists():
        raise UsageError(f"output directory parent {out.parent} does not exist")
    rc = RecorderConfig(output_dir=out)
    if cfg.mode == "sim":
        from .sim.driver import record_scripted
        from .sim.engine import SimEnv

        if not args.events:
            raise UsageError("sim recording needs --events (a JSONL file of raw input events)")
        spec = _world(args)
        raw = raw_events_from_dicts(_read_jsonl(Path(args.events)))
        demo, path = record_scripted(SimEnv(spec, args.seed), raw, rc, session_id=args.session_id)
    else:
        from .desktop import DesktopUnavailable, ImageGrabCapture, PynputHooks
        from .recorder import start_session, stop_session

        try:
            session = start_session(rc, ImageGrabCapture(), PynputHooks(), session_id=args.session_id)
        except DesktopUnavailable as exc:
            raise UsageError(str(exc)) from exc
        print("Recording; press Ctrl-C to stop.", file=sys.stderr)
        try:
            while True:
                session.clock.sleep(200)
        except KeyboardInterrupt:
            pass
        demo = stop_session(session)
        path = session.bundle_path
    print(f"{path} ({len(demo)} steps)")
    return EXIT_OK


def cmd_compile(args, cfg: ToolkitConfig) -> int:
    try:
        demo = read_bundle(args.bundle)
    except BundleError as exc:
        raise UsageError(str(exc)) from exc
    if cfg.mode == "sim":
        from .sim.oracles import SimDescriber

        backend = SimDescriber(_world(args))
    else:
        e = cfg.endpoint("instructor")
        backend = HttpTextBackend(e.url, e.model, e.token_env, e.timeout)
    try:
        instructions = generate_instructions(demo, backend, task_id=args.task_id, max_workers=args.workers)
    except StepGenerationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except InstructionValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TASK_FAILED
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(serialize_instruction_file(instructions))
    if args.lint:
        for i, step in enumerate(instructions):
            for f in validate_instruction(step):
                print(f"step {i}: {f.code}: {f.message}")
    print(f"{out} ({len(instructions)} steps)")
    return EXIT_OK


def cmd_run(args, cfg: ToolkitConfig) -> int:
    instructions = _load_instructions(args.instructions)
    config = _run_config(cfg, args)
    goal_met = True
    if cfg.mode == "sim":
        from .sim.harness import run_in_sim

        sim = run_in_sim(instructions, _world(args), args.seed, config)
        result, goal_met = sim.result, sim.goal_met
    else:
        from .desktop import DesktopUnavailable, PyAutoGuiDriver

        try:
            driver = PyAutoGuiDriver()
        except DesktopUnavailable as exc:
            raise UsageError(str(exc)) from exc
        result = run_task(instructions, driver, real_backends(cfg), config)
    if not args.quiet:
        sys.stdout.write(emit_trace(result.log))
    log_path = Path(args.log) if args.log else None
    if log_path is not None:
        save_run_log(result.log, log_path)
    if result.outcome is Outcome.SUCCESS and goal_met:
        return EXIT_OK
    if result.outcome is Outcome.SUCCESS:
        print("Goal check failed: all steps passed but the task goal is not met.")
    if _backend_failed(result.log):
        return EXIT_BACKEND
    return EXIT_TASK_FAILED


def cmd_batch(args, cfg: ToolkitConfig) -> int:
    from .sim.harness import CONDITIONS, format_batch, run_batch

    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    conditions = [c.strip() for c in args.conditions.split(",") if c.strip()]
    for c in conditions:
        if c not in CONDITIONS:
            raise UsageError(f"unknown condition {c!r}; pick from {', '.join(CONDITIONS)}")
    instructions = _load_instructions(args.instructions)
    seeds = list(range(args.seed_start, args.seed_start + args.seeds))
    rows = run_batch(instructions, _world(args), seeds, conditions, _run_config(cfg, args), args.workers)
    sys.stdout.write(format_batch(rows))
    if args.json:
        Path(args.json).write_text(json.dumps(
            [{"condition": r.condition, "runs": r.runs, "successes": r.successes, "rate": r.rate} for r in rows],
            indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def run_statistics(log: RunLog) -> str:
    retries = sum(r.retries_used for r in log.records)
    backtracks = sum(r.backtrack_attempts for r in log.records)
    lines = [
        f"Outcome: {log.outcome.value}",
        f"Steps attempted: {len(log.records)}",
        f"Commands executed: {log.totals.steps_executed}",
        f"Retries: {retries}",
        f"Backtrack attempts: {backtracks}",
        f"Model calls: {log.totals.model_calls}",
        f"Primitives: {log.totals.primitives}",
    ]
    if log.outcome is not Outcome.SUCCESS and log.records:
        last = log.records[-1]
        cls = last.error_class.value if last.error_class else "unknown"
        lines.append(f"Failure: step {last.step_index} ({cls}): {last.failure_reason}")
    return "\n".join(lines) + "\n"


def cmd_report(args, cfg: ToolkitConfig) -> int:
    try:
        log = load_run_log(args.runlog)
    except OSError as exc:
        raise UsageError(f"cannot read run log {args.runlog}: {exc}") from exc
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad run log {args.runlog}: {exc}") from exc
    sys.stdout.write(emit_trace(log))
    sys.stdout.write("\n" + run_statistics(log))
    return EXIT_OK


def cmd_simulate(args, cfg: ToolkitConfig) -> int:
    from .executor import primitive_from_dict
    from .sim.engine import SimEnv

    spec = _world(args)
    env = SimEnv(spec, args.seed)
    if args.primitives:
        for item in _read_jsonl(Path(args.primitives)):
            env.apply(primitive_from_dict(item))
    state = env.state
    print(f"world: {spec.name}")
    print(f"screen: {state.screen}")
    print(f"overlays: {', '.join(state.overlays) or '-'}")
    print(f"flags: {', '.join(sorted(state.flags)) or '-'}")
    for fid, text in state.fields:
        print(f"field {fid}: {text!r}")
    print(f"digest: {env.observe().digest}")
    print(f"goal met: {'yes' if env.check_goal() else 'no'}")
    return EXIT_OK


def cmd_replay(args, cfg: ToolkitConfig) -> int:
    from .sim.driver import SimDriver
    from .sim.engine import SimEnv

    try:
        log = load_run_log(args.runlog)
    except OSError as exc:
        raise UsageError(f"cannot read run log {args.runlog}: {exc}") from exc
    env = SimEnv(_world(args), args.seed)
    applied = replay_commands(log.commands(), SimDriver(env))
    print(f"replayed {len(log.commands())} commands ({applied} primitives)")
    print(f"digest: {env.observe().digest}")
    print(f"goal met: {'yes' if env.check_goal() else 'no'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="demoactor", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="toolkit config file (YAML or JSON)")
    parser.add_argument("--mode", choices=["sim", "real"], help="override the configured mode")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def world_args(p, seed=True):
        p.add_argument("--world", help="world file, or a bundled world name such as 'bookmark'")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    def run_args(p):
        p.add_argument("--no-verifier", action="store_true", help="assume every step verifies")
        p.add_argument("--no-backtracker", action="store_true", help="retry without recovery")
        p.add_argument("--max-step-retries", type=int)
        p.add_argument("--budget", type=int, help="global step budget")

    p = sub.add_parser("record", help="record a demonstration bundle")
    world_args(p)
    p.add_argument("--events", help="sim mode: JSONL of raw input events to play through the recorder")
    p.add_argument("--out", help="bundle parent directory")
    p.add_argument("--session-id")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("compile", help="turn a bundle into an instruction file")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    world_args(p, seed=False)
    p.add_argument("--task-id")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--lint", action="store_true", help="print instruction lint findings")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", help="execute an instruction file")
    p.add_argument("instructions")
    world_args(p)
    run_args(p)
    p.add_argument("--log", help="write the run log here")
    p.add_argument("--quiet", action="store_true", help="do not print the trace")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="seeded runs per ablation condition (sim only)")
    p.add_argument("instructions")
    world_args(p, seed=False)
    run_args(p)
    p.add_argument("--seeds", type=int, default=100, help="number of seeds")
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--conditions", default="full,no-backtracker,neither")
    p.add_argument("--json", help="also write the summary as JSON")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("report", help="render a run log as a trace with statistics")
    p.add_argument("runlog")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("simulate", help="apply primitives to a world and print the state")
    world_args(p)
    p.add_argument("--primitives", help="JSONL of primitives")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="re-issue a run log's commands in the simulator")
    p.add_argument("runlog")
    world_args(p)
    p.set_defaults(func=cmd_replay)
    return parser


SIM_ONLY = {"batch", "simulate", "replay"}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = discover_config(args.config)
        if args.mode:
            cfg = cfg.with_mode(args.mode)
        if args.command in SIM_ONLY and cfg.mode != "sim":
            raise UsageError(f"{args.command} runs against the simulator only")
        return args.func(args, cfg)
    except (UsageError, ConfigError, InstructionFileError, BundleError, RecorderStartupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
