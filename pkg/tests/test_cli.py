from __future__ import annotations

import json

import pytest
import yaml

from demoactor.cli import EXIT_BACKEND, EXIT_OK, EXIT_TASK_FAILED, EXIT_USAGE, main
from demoactor.model import RunLog
from demoactor.recorder import RawEvent
from demoactor.sim.harness import builtin_instructions, resolve_world, script_demo

from helpers import SAVE_WORLD, SECOND_CLEAR

NEXT = "Left click on the 'Next' button; this action opens the second page."


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("DEMOACTOR_CONFIG", raising=False)


def write_jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return path


def popup_world(tmp_path):
    doc = {**SAVE_WORLD, "goal": SECOND_CLEAR,
           "interrupts": [{"overlay": "popup", "trigger": {"at_step": 2}, "mode": "modal",
                           "dismiss_widget": "close"}]}
    path = tmp_path / "popup.yaml"
    path.write_text(yaml.safe_dump(doc))
    return path


def bookmark_file(tmp_path):
    from importlib import resources

    path = tmp_path / "bookmark.jsonl"
    path.write_bytes(resources.files("demoactor").joinpath("worlds", "bookmark_instructions.jsonl").read_bytes())
    return path


def test_run_bookmark(tmp_path, capsys):
    code = main(["run", str(bookmark_file(tmp_path)), "--world", "bookmark", "--log", "out/run.json"])
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert out.count("Verification Response: YES") == 20
    assert "All steps completed successfully." in out
    log = RunLog.from_json((tmp_path / "out" / "run.json").read_text())
    assert len(log.records) == 21


def test_run_forced_interrupt_without_backtracker_fails(tmp_path, capsys):
    ins = write_jsonl(tmp_path / "next.jsonl", [{"action": NEXT}])
    world = str(popup_world(tmp_path))
    assert main(["run", str(ins), "--world", world, "--no-backtracker", "--quiet"]) == EXIT_TASK_FAILED
    assert main(["run", str(ins), "--world", world, "--quiet"]) == EXIT_OK


def test_run_goal_check_failure(tmp_path, capsys):
    ins = write_jsonl(tmp_path / "next.jsonl", [{"action": NEXT}])
    code = main(["run", str(ins), "--world", str(popup_world(tmp_path)), "--no-verifier", "--no-backtracker"])
    assert code == EXIT_TASK_FAILED
    assert "Goal check failed" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["fly"],
    ["run"],
    ["run", "missing.jsonl", "--world", "bookmark"],
    ["run", "{ins}", "--world", "atlantis"],
    ["run", "{ins}"],
    ["batch", "{ins}", "--world", "popup_chain", "--seeds", "0"],
    ["batch", "{ins}", "--world", "popup_chain", "--conditions", "full,half"],
    ["batch", "{ins}", "--world", "popup_chain", "--mode", "real"],
    ["--mode", "real", "batch", "{ins}", "--world", "popup_chain"],
    ["report", "missing.json"],
    ["compile", "no_bundle", "--out", "x.jsonl", "--world", "bookmark"],
    ["record", "--world", "bookmark"],
    ["--config", "nope.yaml", "run", "{ins}", "--world", "bookmark"],
])
def test_usage_errors(tmp_path, argv, capsys):
    ins = write_jsonl(tmp_path / "i.jsonl", [{"action": NEXT}])
    argv = [a.replace("{ins}", str(ins)) for a in argv]
    assert main(argv) == EXIT_USAGE


def test_empty_and_malformed_instruction_files(tmp_path):
    (tmp_path / "empty.jsonl").write_text("")
    (tmp_path / "bad.jsonl").write_text("{oops\n")
    assert main(["run", "empty.jsonl", "--world", "bookmark"]) == EXIT_USAGE
    assert main(["run", "bad.jsonl", "--world", "bookmark"]) == EXIT_USAGE


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "record" in capsys.readouterr().out


def test_record_compile_run_report_replay(tmp_path, capsys):
    spec, _ = resolve_world("bookmark")
    raw = script_demo(spec, builtin_instructions("bookmark"))
    rows = [{"kind": e.kind, "timestamp": e.timestamp, "position": e.position and list(e.position),
             "key": e.key, "button": e.button} for e in raw]
    write_jsonl(tmp_path / "events.jsonl", rows)
    assert main(["record", "--world", "bookmark", "--events", "events.jsonl", "--out", "bundles",
                 "--session-id", "s1"]) == EXIT_OK
    assert main(["compile", "bundles/s1", "--out", "ins.jsonl", "--world", "bookmark", "--lint"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "ins.jsonl (21 steps)" in out and "missing-outcome" not in out
    assert main(["run", "ins.jsonl", "--world", "bookmark", "--log", "run.json", "--quiet"]) == EXIT_OK
    assert main(["report", "run.json"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "Outcome: success" in out and "Primitives: 41" in out
    assert main(["replay", "run.json", "--world", "bookmark"]) == EXIT_OK
    assert "goal met: yes" in capsys.readouterr().out


def test_compile_backend_failure_exit_code(tmp_path, monkeypatch, capsys):
    spec, _ = resolve_world("bookmark")
    raw = script_demo(spec, builtin_instructions("bookmark"))[:3]
    rows = [{"kind": e.kind, "timestamp": e.timestamp, "position": list(e.position)} for e in raw]
    write_jsonl(tmp_path / "events.jsonl", rows)
    assert main(["record", "--world", "bookmark", "--events", "events.jsonl", "--out", "b",
                 "--session-id", "s"]) == EXIT_OK

    from demoactor.backends import BackendError
    from demoactor.sim import oracles

    def down(self, parts):
        raise BackendError("instructor offline")

    monkeypatch.setattr(oracles.SimDescriber, "generate", down)
    assert main(["compile", "b/s", "--out", "x.jsonl", "--world", "bookmark"]) == EXIT_BACKEND


def test_batch_outputs(tmp_path, capsys):
    from importlib import resources

    ins = tmp_path / "chain.jsonl"
    ins.write_bytes(resources.files("demoactor").joinpath("worlds", "popup_chain_instructions.jsonl").read_bytes())
    assert main(["batch", str(ins), "--world", "popup_chain", "--seeds", "10", "--json", "b.json"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in out[1:]] == ["full", "no-backtracker", "neither"]
    rows = json.loads((tmp_path / "b.json").read_text())
    assert [r["runs"] for r in rows] == [10, 10, 10]


def test_simulate(tmp_path, capsys):
    write_jsonl(tmp_path / "p.jsonl", [{"type": "move_to", "point": [35, 25]},
                                       {"type": "click", "point": [35, 25]}])
    (tmp_path / "w.yaml").write_text(yaml.safe_dump(SAVE_WORLD))
    assert main(["simulate", "--world", "w.yaml", "--primitives", "p.jsonl"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "flags: saved" in out and "goal met: yes" in out


def test_real_mode_without_endpoints(tmp_path):
    ins = write_jsonl(tmp_path / "i.jsonl", [{"action": NEXT}])
    assert main(["--mode", "real", "run", str(ins)]) == EXIT_USAGE


def test_raw_event_rows_accept_null_fields():
    RawEvent("key_down", 1, None, "a")
