from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from demoactor.backends import BackendError, ScriptedBackend
from demoactor.backtracker import RecoveryConfig
from demoactor.model import ErrorClass, Outcome, RunLog, Verification
from demoactor.orchestrator import (
    SKIP_LINE,
    SUCCESS_LINE,
    Backends,
    EmptyTraceError,
    RunConfig,
    emit_trace,
    evaluate_task,
    load_run_log,
    primitive_cap,
    replay_commands,
    run_task,
    save_run_log,
)
from demoactor.sim.driver import SimDriver
from demoactor.sim.engine import SimEnv
from demoactor.sim.harness import run_in_sim, sim_backends

from conftest import instructions, solid
from helpers import (
    SECOND_CLEAR,
    ChangingDriver,
    ConstantJudge,
    CountingDriver,
    FixedGrounder,
    save_world,
    with_popup_at,
)

SAVE = "Left click on the 'Save' button; this action saves the file."
NEXT = "Left click on the 'Next' button; this action opens the second page."
PLAN = json.dumps({"action": NEXT})


class MissGrounder(FixedGrounder):
    def locate(self, text, shot, hint=None):
        from demoactor.grounder import GroundingResponse

        self.calls += 1
        return GroundingResponse(None)


def test_bookmark_trace(bookmark_spec, bookmark_instructions):
    run = run_in_sim(bookmark_instructions, bookmark_spec, seed=0)
    assert run.success
    trace = emit_trace(run.result.log)
    assert trace.count("Verification Response: YES") == 20
    assert trace.count(SKIP_LINE) == 1
    assert trace.rstrip().endswith(SUCCESS_LINE)
    assert "Verification Response: NO" not in trace
    log = run.result.log
    assert log.totals.steps_executed == 21 and log.totals.primitives == 41
    assert log.records[7].verification is Verification.SKIPPED


def test_budget_exhausted():
    spec = save_world()
    env = SimEnv(spec)
    ins = instructions(NEXT, "Left click on the 'Back' button; this action returns to the main page.")
    res = run_task(ins, SimDriver(env), sim_backends(env), RunConfig(global_step_budget=1))
    assert res.outcome is Outcome.BUDGET_EXHAUSTED
    assert res.log.totals.steps_executed == 1
    assert res.log.records[-1].error_class is ErrorClass.BUDGET
    assert emit_trace(res.log).rstrip().endswith("Step budget exhausted at step 1.")


def test_no_op_world_exhausts_retries_with_zero_divergence():
    drv = CountingDriver(solid())
    planner = ScriptedBackend()
    res = run_task(instructions(SAVE), drv, Backends(FixedGrounder(), ConstantJudge(False), planner))
    (rec,) = res.log.records
    assert res.outcome is Outcome.FAILED
    assert len(rec.attempts) == 3 and rec.retries_used == 2
    assert [a.recovery_status for a in rec.attempts] == ["recovered", "recovered", None]
    assert rec.backtrack_attempts == 0 and planner.calls == 0
    assert res.log.totals.primitives == len(drv.applied) == 6
    trace = emit_trace(res.log)
    assert trace.count("Verification Response: NO") == 3
    assert "Task failed at step 0 (verification)" in trace


def test_lying_judge_passes_steps_but_not_the_task():
    spec = save_world()
    env = SimEnv(spec)
    backends = sim_backends(env)
    backends.judge = ConstantJudge(True)
    res = run_task(instructions(NEXT), SimDriver(env), backends)
    assert res.outcome is Outcome.SUCCESS
    assert not evaluate_task(env.state, spec)


def test_honest_run_sets_goal():
    spec = save_world()
    run = run_in_sim(instructions(SAVE), spec)
    assert run.success and run.goal_met


def test_popup_recovered_by_backtracker():
    # the pop-up arrives right after the click, so the judge rejects the attempt;
    # recovery closes it and the retry reaches the expected state
    spec = with_popup_at(2, goal=SECOND_CLEAR)
    run = run_in_sim(instructions(NEXT), spec)
    (rec,) = run.result.log.records
    assert run.success
    assert rec.attempts[0].recovery_status == "recovered"
    assert rec.backtrack_attempts >= 1
    assert len(rec.attempts) == 2


def test_without_backtracker_popup_fails():
    run = run_in_sim(instructions(NEXT), with_popup_at(2, goal=SECOND_CLEAR),
                     config=RunConfig(use_backtracker=False))
    assert run.result.outcome is Outcome.FAILED and not run.success
    assert all(a.recovery_status is None for a in run.result.log.records[0].attempts)


def test_verifier_off_trusts_every_step():
    run = run_in_sim(instructions(NEXT), with_popup_at(2, goal=SECOND_CLEAR),
                     config=RunConfig(use_verifier=False, use_backtracker=False))
    assert run.result.outcome is Outcome.SUCCESS
    assert not run.goal_met
    assert "Verification skipped (verifier disabled)" in emit_trace(run.result.log)


def test_text_step_skips_judge():
    judge = ConstantJudge(False)
    res = run_task(instructions("TYPE 'abc'"), CountingDriver(solid()), Backends(FixedGrounder(), judge,
                                                                               ScriptedBackend()))
    assert res.outcome is Outcome.SUCCESS and judge.calls == 0
    assert emit_trace(res.log).count(SKIP_LINE) == 1


def test_judge_outage_is_backend_failure():
    class Down:
        def judge(self, *a):
            raise BackendError("503")

    res = run_task(instructions(SAVE), CountingDriver(solid()), Backends(FixedGrounder(), Down(), ScriptedBackend()),
                   RunConfig(max_step_retries=0))
    a = res.log.records[0].attempts[0]
    assert a.error_class is ErrorClass.VERIFICATION and a.backend_failure


def test_grounding_miss_classified():
    res = run_task(instructions(SAVE), CountingDriver(solid()),
                   Backends(MissGrounder(), ConstantJudge(True), ScriptedBackend()), RunConfig(max_step_retries=1))
    rec = res.log.records[0]
    assert rec.error_class is ErrorClass.GROUNDING and not rec.attempts[0].backend_failure
    assert res.log.totals.primitives == 0


def test_planner_crash_does_not_crash_run():
    res = run_task(instructions(SAVE), ChangingDriver(),
                   Backends(FixedGrounder(), ConstantJudge(False), ScriptedBackend([BackendError("x")] * 3)))
    assert res.outcome is Outcome.FAILED
    assert res.log.records[0].error_class is ErrorClass.BACKTRACKING


def test_always_no_always_miss_is_bounded():
    config = RunConfig(max_step_retries=2, recovery=RecoveryConfig(3, 5))
    ins = instructions(*[SAVE] * 5)
    drv = ChangingDriver()
    res = run_task(ins, drv, Backends(MissGrounder(), ConstantJudge(False), ScriptedBackend(lambda p: PLAN * 1)),
                   config)
    assert res.outcome is Outcome.FAILED
    assert len(drv.applied) == res.log.totals.primitives <= primitive_cap(5, config)


def test_primitive_cap_formula():
    config = RunConfig(max_step_retries=2, recovery=RecoveryConfig(3, 5), global_step_budget=100)
    # 15 step commands of at most 4 primitives, 10 recoveries of at most 60
    assert primitive_cap(5, config) == 15 * 4 + 10 * 60
    assert primitive_cap(5, RunConfig(use_backtracker=False)) == 60


@settings(max_examples=60)
@given(st.integers(0, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 30), st.integers(1, 6),
       st.booleans(), st.booleans(), st.integers(0, 7))
def test_random_configs_terminate_within_cap(retries, attempts, steps, budget, n, hit, verdict, plan_len):
    config = RunConfig(max_step_retries=retries, recovery=RecoveryConfig(attempts, steps), global_step_budget=budget)
    grounder = FixedGrounder() if hit else MissGrounder()
    planner = ScriptedBackend(lambda p: "\n".join([PLAN] * plan_len))
    drv = ChangingDriver()
    res = run_task(instructions(*[SAVE] * n), drv, Backends(grounder, ConstantJudge(verdict), planner), config)
    assert len(drv.applied) == res.log.totals.primitives <= primitive_cap(n, config)


# --- logs and replay -----------------------------------------------------------------


def test_run_log_save_load_and_replay(tmp_path, chain_spec, chain_instructions):
    run = run_in_sim(chain_instructions, chain_spec, seed=7)
    path = save_run_log(run.result.log, tmp_path / "logs" / "run.json")
    log = load_run_log(path)
    assert log == run.result.log
    env = SimEnv(chain_spec, seed=7)
    applied = replay_commands(log.commands(), SimDriver(env))
    assert applied == log.totals.primitives
    assert env.observe().digest == run.env.observe().digest


def test_run_log_json_is_versioned(tmp_path, chain_spec, chain_instructions):
    run = run_in_sim(chain_instructions, chain_spec, seed=1)
    doc = json.loads(run.result.log.to_json())
    assert doc["schema"] == "demoactor.runlog/1"
    assert RunLog.from_json(json.dumps(doc)) == run.result.log


def test_empty_trace():
    with pytest.raises(EmptyTraceError):
        emit_trace(RunLog("t", (), Outcome.SUCCESS))


def test_run_config_validation():
    from demoactor.model import ModelError

    with pytest.raises(ModelError):
        RunConfig(max_step_retries=-1)
    with pytest.raises(ModelError):
        RunConfig(global_step_budget=0)
