"""The actor's step loop: ground, execute, verify, and recover on failure."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .backends import BackendError, TextGenBackend
from .backtracker import AttemptMemory, Checkpoint, RecoveryConfig, run_recovery
from .executor import MAX_PRIMITIVES_PER_COMMAND, CompileError, EnvironmentDriver, compile_command, execute
from .grounder import GroundingInterface, GroundingInvalid, GroundingMiss, ground, to_command
from .model import (
    ActionClass,
    AttemptRecord,
    ErrorClass,
    GroundedCommand,
    InstructionList,
    ModelError,
    Outcome,
    RunLog,
    RunTotals,
    StepRecord,
    Verification,
    check_run_log,
)
from .verifier import JudgeInterface, VerificationUnavailable, should_verify, verify

logger = logging.getLogger(__name__)

SKIP_LINE = "(No need to verify text input or key press)"
SUCCESS_LINE = "All steps completed successfully."
VERIFIER_OFF = "verifier disabled"


class EmptyTraceError(ModelError):
    pass


@dataclass(frozen=True)
class RunConfig:
    max_step_retries: int = 2
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    global_step_budget: int = 100
    settle_delay: int = 300
    use_verifier: bool = True
    use_backtracker: bool = True

    def __post_init__(self) -> None:
        if self.max_step_retries < 0:
            raise ModelError("max_step_retries must be >= 0")
        if self.global_step_budget < 1:
            raise ModelError("global_step_budget must be >= 1")
        if self.settle_delay < 0:
            raise ModelError("settle_delay must be >= 0")

    @property
    def attempts_per_step(self) -> int:
        return self.max_step_retries + 1


def primitive_cap(n_steps: int, config: RunConfig) -> int:
    """Upper bound on driver primitives one run can issue."""
    step_commands = min(config.global_step_budget, n_steps * config.attempts_per_step)
    recoveries = n_steps * config.max_step_retries if config.use_backtracker else 0
    return step_commands * MAX_PRIMITIVES_PER_COMMAND + recoveries * config.recovery.primitive_bound


@dataclass
class Backends:
    grounder: GroundingInterface
    judge: JudgeInterface
    planner: TextGenBackend


@dataclass(frozen=True)
class RunResult:
    outcome: Outcome
    log: RunLog


class _Failure(Exception):
    def __init__(self, error_class: ErrorClass, reason: str, backend: bool = False) -> None:
        super().__init__(reason)
        self.error_class = error_class
        self.backend = backend


def _settle(driver: Any, ms: int) -> None:
    settle = getattr(driver, "settle", None)
    if settle is not None:
        settle(ms)
    elif ms:
        time.sleep(ms / 1000.0)


def run_task(
    instructions: InstructionList,
    driver: EnvironmentDriver,
    backends: Backends,
    config: RunConfig = RunConfig(),
) -> RunResult:
    started = time.perf_counter()
    records: list[StepRecord] = []
    executed = 0
    primitives = 0
    model_calls = 0
    outcome = Outcome.SUCCESS

    for index, step in enumerate(instructions):
        checkpoint = Checkpoint(index, driver.capture())
        memory = AttemptMemory(cap=max(1, config.max_step_retries * config.recovery.max_recovery_attempts))
        attempts: list[AttemptRecord] = []
        backtracks = 0
        verification = Verification.NO
        stop: Outcome | None = None

        for attempt in range(1, config.attempts_per_step + 1):
            before = checkpoint.obs if attempt == 1 else driver.capture()
            cmd: GroundedCommand | None = None
            rationale = ""
            try:
                if executed >= config.global_step_budget:
                    raise _Failure(ErrorClass.BUDGET, f"step budget of {config.global_step_budget} exhausted")
                target = None
                if step.action_class is ActionClass.POINTER:
                    model_calls += 1
                    try:
                        target = ground(step, before, backends.grounder)
                    except (GroundingMiss, GroundingInvalid) as exc:
                        raise _Failure(ErrorClass.GROUNDING, str(exc)) from exc
                    except Exception as exc:
                        raise _Failure(ErrorClass.GROUNDING, f"grounding backend: {exc}", backend=True) from exc
                try:
                    candidate = to_command(step, target, index)
                    script = compile_command(candidate)
                except (ModelError, CompileError) as exc:
                    raise _Failure(ErrorClass.EXECUTION, str(exc)) from exc
                cmd = candidate
                executed += 1
                report = execute(script, driver)
                primitives += report.primitives_applied
                if not report.ok:
                    at, why = report.failed_primitive
                    raise _Failure(ErrorClass.EXECUTION, f"primitive {at} failed: {why}")
                _settle(driver, config.settle_delay)
                after = driver.capture()

                if not should_verify(step):
                    verification = Verification.SKIPPED
                elif not config.use_verifier:
                    verification, rationale = Verification.YES, VERIFIER_OFF
                else:
                    model_calls += 1
                    try:
                        verdict = verify(step, before, after, backends.judge)
                    except VerificationUnavailable as exc:
                        raise _Failure(ErrorClass.VERIFICATION, str(exc), backend=True) from exc
                    verification = verdict.verification
                    # a non-empty rationale marks that the judge actually ran
                    rationale = verdict.rationale or f"judge said {verification.value}"
                    if verification is Verification.NO:
                        raise _Failure(ErrorClass.VERIFICATION, rationale)
                attempts.append(AttemptRecord(attempt, cmd, verification, rationale))
                break
            except _Failure as fail:
                verification = Verification.NO
                rec = AttemptRecord(attempt, cmd, Verification.NO, rationale, fail.error_class,
                                    str(fail), fail.backend)
                if fail.error_class is ErrorClass.BUDGET:
                    attempts.append(rec)
                    stop = Outcome.BUDGET_EXHAUSTED
                    break
                if attempt < config.attempts_per_step and config.use_backtracker:
                    try:
                        rr = run_recovery(driver, checkpoint, memory, backends.planner,
                                          backends.grounder, config.recovery)
                    except Exception as exc:  # a broken planner must not crash the run
                        logger.warning("recovery crashed at step %d: %s", index, exc)
                        rec = _with(rec, recovery_status="gave_up")
                        attempts.append(_with(rec, error_class=ErrorClass.BACKTRACKING,
                                              failure_reason=f"recovery crashed: {exc}",
                                              backend_failure=isinstance(exc, BackendError)))
                        stop = Outcome.FAILED
                        break
                    model_calls += rr.planner_calls
                    primitives += rr.primitives
                    backtracks += rr.attempts
                    rec = _with(rec, recovery_commands=tuple(rr.commands), recovery_status=rr.status)
                    if not rr.recovered:
                        attempts.append(_with(rec, error_class=ErrorClass.BACKTRACKING,
                                              failure_reason=f"{rec.failure_reason}; recovery gave up "
                                                             f"after {rr.attempts} attempt(s)"))
                        stop = Outcome.FAILED
                        break
                attempts.append(rec)

        last = attempts[-1]
        records.append(StepRecord(
            step_index=index,
            action_text=step.action_text,
            action_class=step.action_class,
            verification=verification,
            attempts=tuple(attempts),
            retries_used=len(attempts) - 1,
            backtrack_attempts=backtracks,
            failure_reason=last.failure_reason if verification is Verification.NO else None,
            error_class=last.error_class if verification is Verification.NO else None,
            memory=memory.records,
        ))
        if stop is not None:
            outcome = stop
            break
        if verification is Verification.NO:
            outcome = Outcome.FAILED
            break

    log = RunLog(
        task_id=instructions.task_id,
        records=tuple(records),
        outcome=outcome,
        totals=RunTotals(
            steps_executed=executed,
            model_calls=model_calls,
            wall_time_ms=round((time.perf_counter() - started) * 1000.0, 3),
            primitives=primitives,
        ),
    )
    check_run_log(log)
    return RunResult(outcome, log)


def _with(rec: AttemptRecord, **changes: Any) -> AttemptRecord:
    return replace(rec, **changes)


# ---------------------------------------------------------------------------
# Trace, persistence, replay
# ---------------------------------------------------------------------------


def emit_trace(log: RunLog) -> str:
    if not log.records:
        raise EmptyTraceError("run log has no step records")
    lines: list[str] = []
    for rec in log.records:
        for a in rec.attempts:
            if a.attempt == 1:
                lines.append(f"Executing step {rec.step_index}:")
            else:
                lines.append(f"Retrying step {rec.step_index} (attempt {a.attempt}):")
            lines.append(f"Action: {rec.action_text}")
            if a.verification is Verification.SKIPPED:
                lines.append(SKIP_LINE)
            elif a.rationale == VERIFIER_OFF:
                lines.append("Verification skipped (verifier disabled)")
            elif a.command is not None and a.rationale:
                lines.append(f"Verification Response: {'YES' if a.verification is Verification.YES else 'NO'}")
            if a.error_class is not None:
                lines.append(f"Error ({a.error_class.value}): {a.failure_reason}")
            if a.recovery_status is not None:
                lines.append(f"Backtracking: {a.recovery_status.replace('_', ' ')}")
        lines.append("")
    last = log.records[-1]
    if log.outcome is Outcome.SUCCESS:
        lines.append(SUCCESS_LINE)
    elif log.outcome is Outcome.BUDGET_EXHAUSTED:
        lines.append(f"Step budget exhausted at step {last.step_index}.")
    else:
        cls = last.error_class.value if last.error_class else "unknown"
        lines.append(f"Task failed at step {last.step_index} ({cls}): {last.failure_reason}")
    return "\n".join(lines) + "\n"


def save_run_log(log: RunLog, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(log.to_json() + "\n", encoding="utf-8")
    return path


def load_run_log(path: str | Path) -> RunLog:
    return RunLog.from_json(Path(path).read_text(encoding="utf-8"))


def replay_commands(commands: list[GroundedCommand], driver: EnvironmentDriver) -> int:
    """Re-issue logged commands verbatim; returns the number of primitives applied."""
    applied = 0
    for cmd in commands:
        report = execute(compile_command(cmd), driver)
        applied += report.primitives_applied
    return applied


def evaluate_task(state: Any, spec: Any) -> bool:
    """Task-level success: the world's goal predicate on the terminal state."""
    from .sim.engine import check_goal

    return check_goal(state, spec)
