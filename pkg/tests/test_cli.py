from __future__ import annotations

import json
from pathlib import Path

import pytest

from codecouncil.cli import EXIT_CONFIG, EXIT_DEGRADED, EXIT_INFRA, EXIT_OK, main
from codecouncil.harness import load_report

from .conftest import code_text, make_problem, plan_text

GOOD = "def add(a, b):\n    return a + b"


def _write(path: Path, data) -> str:
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


@pytest.fixture
def passing_problem_file(tmp_path) -> str:
    return _write(tmp_path / "problem.json", make_problem().to_dict())


def _script_entries(*texts):
    return [{"text": text, "prompt_tokens": 10, "completion_tokens": 5} for text in texts]


@pytest.fixture
def bypass_script_file(tmp_path) -> str:
    entries = _script_entries(
        plan_text(96), plan_text(95), plan_text(97), "master plan", code_text(GOOD)
    )
    return _write(tmp_path / "script.json", entries)


def test_run_passing_problem_exit_zero(capsys, passing_problem_file, bypass_script_file):
    code = main(
        ["run", passing_problem_file, "--backend", "scripted", "--script", bypass_script_file]
    )
    out = capsys.readouterr().out
    assert code == EXIT_OK
    assert "verdict: PASSED" in out
    assert "api_calls=5" in out
    assert "config:" in out  # effective config printed at startup
    assert "gated_bypass" in out


def test_run_failing_problem_exit_one(capsys, tmp_path, bypass_script_file):
    problem = make_problem(hidden_tests=("assert add(2, 2) == 5",))
    problem_file = _write(tmp_path / "failing.json", problem.to_dict())
    code = main(["run", problem_file, "--backend", "scripted", "--script", bypass_script_file,
                 "--no-debugger", "--no-reviewer"])
    assert code == EXIT_DEGRADED
    assert "verdict: FAILED" in capsys.readouterr().out


def test_run_tau_out_of_range_exit_two(capsys, passing_problem_file, bypass_script_file):
    code = main(
        ["run", passing_problem_file, "--backend", "scripted", "--script", bypass_script_file,
         "--tau", "101"]
    )
    assert code == EXIT_CONFIG
    assert "tau" in capsys.readouterr().err


def test_run_script_exhaustion_exit_three(capsys, passing_problem_file, tmp_path):
    script = _write(tmp_path / "tiny.json", _script_entries(plan_text(50)))
    code = main(["run", passing_problem_file, "--backend", "scripted", "--script", script])
    assert code == EXIT_INFRA
    assert "ScriptExhausted" in capsys.readouterr().err


def test_run_writes_trace(tmp_path, passing_problem_file, bypass_script_file):
    trace = tmp_path / "trace.json"
    main(["run", passing_problem_file, "--backend", "scripted", "--script", bypass_script_file,
          "--trace", str(trace)])
    record = json.loads(trace.read_text(encoding="utf-8"))
    assert record["passed"] is True


def test_run_reviewer_without_debugger_exit_two(passing_problem_file, bypass_script_file):
    code = main(["run", passing_problem_file, "--backend", "scripted",
                 "--script", bypass_script_file, "--no-debugger"])
    assert code == EXIT_CONFIG


def test_eval_direct_over_mini_corpus(capsys, tmp_path, mini_humaneval_path):
    # Every problem replays the same correct-for-Mini/0 code; pass rates do
    # not matter here, only the Direct call pattern and the report shape.
    script = _write(tmp_path / "script.json", _script_entries(code_text(GOOD)))
    out = tmp_path / "report.json"
    code = main(
        ["eval", str(mini_humaneval_path), "--kind", "humaneval", "--direct",
         "--backend", "scripted", "--script", str(script), "--out", str(out)]
    )
    assert code == EXIT_OK
    report = load_report(out)
    assert len(report.per_problem) == 10
    assert report.mean_api_calls == 1.0
    assert "pass@1=" in capsys.readouterr().out
    traces = Path(str(out.with_suffix("")) + ".traces.jsonl")
    assert traces.exists()
    assert len(traces.read_text(encoding="utf-8").strip().splitlines()) == 10


def test_eval_parallelism_leaves_aggregates_unchanged(tmp_path, mini_humaneval_path):
    script = _write(tmp_path / "script.json", _script_entries(code_text(GOOD)))
    reports = []
    for parallel in ("1", "8"):
        out = tmp_path / f"report_{parallel}.json"
        code = main(
            ["eval", str(mini_humaneval_path), "--direct", "--backend", "scripted",
             "--script", str(script), "--out", str(out), "--parallel", parallel]
        )
        assert code == EXIT_OK
        reports.append(load_report(out))
    assert reports[0].aggregates() == reports[1].aggregates()
    assert [r.passed for r in reports[0].per_problem] == [r.passed for r in reports[1].per_problem]


def test_eval_missing_dataset_exit_two(tmp_path, bypass_script_file):
    code = main(["eval", str(tmp_path / "nope.jsonl"), "--direct",
                 "--backend", "scripted", "--script", bypass_script_file])
    assert code == EXIT_CONFIG


def test_eval_empty_dataset_exit_two(tmp_path, bypass_script_file):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("", encoding="utf-8")
    code = main(["eval", str(empty), "--direct", "--backend", "scripted",
                 "--script", bypass_script_file, "--out", str(tmp_path / "r.json")])
    assert code == EXIT_CONFIG


def test_eval_markdown_format(tmp_path, mini_humaneval_path):
    script = _write(tmp_path / "script.json", _script_entries(code_text(GOOD)))
    out = tmp_path / "report.md"
    main(["eval", str(mini_humaneval_path), "--direct", "--backend", "scripted",
          "--script", str(script), "--out", str(out), "--format", "markdown"])
    assert "| Problems | Pass@1 |" in out.read_text(encoding="utf-8")


def test_eval_per_problem_script_object(tmp_path, mini_humaneval_path):
    # Object-form script: each problem id maps to its own entries.
    from codecouncil.harness import load_humaneval

    problems = load_humaneval(mini_humaneval_path)
    mapping = {p.id: _script_entries(code_text(GOOD)) for p in problems}
    script = _write(tmp_path / "per_problem.json", mapping)
    out = tmp_path / "report.json"
    code = main(["eval", str(mini_humaneval_path), "--direct", "--backend", "scripted",
                 "--script", str(script), "--out", str(out)])
    assert code == EXIT_OK
    assert load_report(out).mean_api_calls == 1.0


def test_config_file_flag_precedence(capsys, passing_problem_file, bypass_script_file, tmp_path):
    config_file = _write(tmp_path / "config.json", {"tau": 80, "max_rounds": 2})
    code = main(["run", passing_problem_file, "--backend", "scripted",
                 "--script", bypass_script_file, "--config", config_file, "--tau", "90"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "tau=90" in out  # flag wins over file
    assert "R=2" in out  # file wins over default


def test_ablate_writes_five_reports_and_summary(capsys, tmp_path, answer42_path):
    # One response serves every stage: code first, structured JSON last.
    payload = json.dumps(
        {"plan": "return 42", "confidence": 50, "cause_analysis": "n/a", "fix_plan": "n/a"}
    )
    universal = f"```python\ndef answer():\n    return 42\n```\n\n```json\n{payload}\n```\n"
    script = _write(tmp_path / "script.json", _script_entries(*[universal] * 11))
    out_dir = tmp_path / "sweep"
    code = main(["ablate", str(answer42_path), "--backend", "scripted",
                 "--script", str(script), "--out-dir", str(out_dir)])
    assert code == EXIT_OK
    reports = sorted(out_dir.glob("ablation_*.json"))
    assert len(reports) == 5
    fingerprints = {load_report(p).config_fingerprint for p in reports}
    assert len(fingerprints) == 5
    direct = load_report(out_dir / "ablation_d0_r0_g0.json")
    assert direct.mean_api_calls == 1.0
    assert direct.pass_at_1 == 1.0
    summary = (out_dir / "ablation_summary.md").read_text(encoding="utf-8")
    assert summary.count("|  ") == 0  # well-formed cells
    assert "Pass@1" in summary
    assert len([line for line in summary.splitlines() if line.startswith("| ")]) == 7  # header+sep+5


def test_custom_templates_flag(tmp_path, passing_problem_file):
    templates = tmp_path / "templates"
    templates.mkdir()
    for name in ("initial_plan", "deliberation", "synthesis", "codegen", "reviewer", "debugger"):
        (templates / f"{name}.txt").write_text("SHORT {problem}", encoding="utf-8")
    script = _write(tmp_path / "script.json", _script_entries(code_text(GOOD)))
    code = main(["run", passing_problem_file, "--direct", "--backend", "scripted",
                 "--script", str(script), "--templates", str(templates)])
    assert code == EXIT_OK


def test_bad_templates_dir_exit_two(tmp_path, passing_problem_file, bypass_script_file):
    code = main(["run", passing_problem_file, "--backend", "scripted",
                 "--script", bypass_script_file, "--templates", str(tmp_path / "nothing")])
    assert code == EXIT_CONFIG


def test_parallel_from_config_file(tmp_path, mini_humaneval_path):
    script = _write(tmp_path / "script.json", _script_entries(code_text(GOOD)))
    config_file = _write(tmp_path / "config.json", {"parallel": 4})
    out = tmp_path / "report.json"
    code = main(["eval", str(mini_humaneval_path), "--direct", "--backend", "scripted",
                 "--script", str(script), "--config", config_file, "--out", str(out)])
    assert code == EXIT_OK
    assert load_report(out).mean_api_calls == 1.0


def test_missing_required_backend_settings_exit_two(passing_problem_file, monkeypatch):
    monkeypatch.delenv("CODECOUNCIL_ENDPOINT", raising=False)
    monkeypatch.delenv("CODECOUNCIL_MODEL", raising=False)
    code = main(["run", passing_problem_file])  # http backend with no endpoint anywhere
    assert code == EXIT_CONFIG


def test_scripted_backend_requires_script(passing_problem_file):
    assert main(["run", passing_problem_file, "--backend", "scripted"]) == EXIT_CONFIG
