from __future__ import annotations

import time

import pytest

from codecouncil.core import CandidateCode, Extraction, Outcome
from codecouncil.errors import SandboxFailure
from codecouncil.sandbox import (
    GRACE_SECONDS,
    Sandbox,
    assemble_program,
    execute,
    run_tests,
)

from .conftest import make_problem


def _code(source: str) -> CandidateCode:
    return CandidateCode(source=source, extraction=Extraction.FENCED_BLOCK)


# ---------------------------------------------------------------------------
# assemble_program
# ---------------------------------------------------------------------------


def test_assemble_appends_check_invocation():
    problem = make_problem(entry_point="f")
    code = _code("def f():\n    return 1")
    test = "def check(candidate):\n    assert candidate() == 1"
    source = assemble_program(problem, code, test)
    assert source.rstrip().endswith("check(f)")
    assert code.source in source
    assert test in source


def test_assemble_bare_asserts_need_no_invocation():
    problem = make_problem(entry_point=None)
    asserts = [
        "assert double(1) == 2",
        "assert double(0) == 0",
        "assert double(-2) == -4",
    ]
    source = assemble_program(problem, _code("def double(x):\n    return 2 * x"), asserts)
    assert source.count("assert ") == 3
    assert "check(" not in source


def test_assemble_empty_snippet_is_code_alone():
    code = _code("x = 1")
    source = assemble_program(make_problem(), code, "")
    assert source == "x = 1\n"


def test_assemble_no_check_call_without_check_definition():
    problem = make_problem(entry_point="f")
    source = assemble_program(problem, _code("def f():\n    return 1"), "assert f() == 1")
    assert "check(f)" not in source


# ---------------------------------------------------------------------------
# execute
# ---------------------------------------------------------------------------


def test_execute_pass():
    result = execute("assert 1 + 1 == 2", timeout=10)
    assert result.outcome is Outcome.PASS


def test_execute_fail_with_assertion_text():
    result = execute("assert 1 + 1 == 3, 'arithmetic is broken'", timeout=10)
    assert result.outcome is Outcome.FAIL
    assert "AssertionError" in result.stderr_excerpt


def test_execute_error_on_exception():
    result = execute("raise ValueError('boom')", timeout=10)
    assert result.outcome is Outcome.ERROR
    assert "ValueError" in result.stderr_excerpt


def test_execute_error_on_syntax_error():
    assert execute("def broken(:", timeout=10).outcome is Outcome.ERROR


def test_execute_error_on_silent_nonzero_exit():
    assert execute("import os\nos._exit(7)", timeout=10).outcome is Outcome.ERROR


def test_execute_timeout_kills_within_grace():
    started = time.monotonic()
    result = execute("while True: pass", timeout=1.0)
    elapsed = time.monotonic() - started
    assert result.outcome is Outcome.TIMEOUT
    assert elapsed < 1.0 + GRACE_SECONDS


def test_execute_timeout_kills_spawned_children():
    # The child spawns a grandchild that would outlive a naive kill.
    source = (
        "import subprocess, sys\n"
        "subprocess.Popen([sys.executable, '-c', 'import time; time.sleep(60)'])\n"
        "import time\n"
        "time.sleep(60)\n"
    )
    started = time.monotonic()
    result = execute(source, timeout=1.0)
    assert result.outcome is Outcome.TIMEOUT
    assert time.monotonic() - started < 1.0 + GRACE_SECONDS


def test_execute_deterministic_classification():
    program = "assert 2 + 2 == 5"
    assert execute(program, timeout=10).outcome is execute(program, timeout=10).outcome


def test_execute_truncates_stderr_to_limit():
    program = "raise ValueError('x' * 9000)"
    result = execute(program, timeout=10, stderr_limit=100)
    assert len(result.stderr_excerpt) <= 100


def test_execute_unlaunchable_interpreter_is_sandbox_failure():
    with pytest.raises(SandboxFailure):
        execute("pass", timeout=5, interpreter="/nonexistent/interpreter-xyz")


def test_execute_runs_in_fresh_temp_cwd():
    result = execute(
        "import os, pathlib\n"
        "assert 'codecouncil-' in os.getcwd()\n"
        "pathlib.Path('scratch.txt').write_text('x')\n",
        timeout=10,
    )
    assert result.outcome is Outcome.PASS


# ---------------------------------------------------------------------------
# run_tests
# ---------------------------------------------------------------------------


def test_run_tests_all_pass():
    problem = make_problem(entry_point=None)
    code = _code("def add(a, b):\n    return a + b")
    tests = ["assert add(1, 2) == 3", "assert add(0, 0) == 0", "assert add(-1, 1) == 0"]
    report = run_tests(problem, code, tests, timeout=10)
    assert report.all_passed
    assert len(report.per_test) == 3


def test_run_tests_identifies_failing_test():
    problem = make_problem(entry_point=None)
    code = _code("def add(a, b):\n    return a + b")
    tests = ["assert add(1, 2) == 3", "assert add(1, 1) == 3", "assert add(2, 2) == 4"]
    report = run_tests(problem, code, tests, timeout=10)
    assert not report.all_passed
    outcomes = [result.outcome for result in report.per_test]
    assert outcomes == [Outcome.PASS, Outcome.FAIL, Outcome.PASS]
    assert report.per_test[1].test_id == "test[1]"


def test_run_tests_per_test_isolation():
    # The first snippet rebinds a module-level name; with one process per
    # test the second snippet still sees the pristine code.
    problem = make_problem(entry_point=None)
    code = _code("counter = 0")
    tests = ["counter = 99\nassert counter == 99", "assert counter == 0"]
    report = run_tests(problem, code, tests, timeout=10)
    assert report.all_passed


def test_run_tests_empty_list_is_vacuous_pass():
    report = run_tests(make_problem(), _code("x = 1"), [], timeout=10)
    assert report.all_passed
    assert report.per_test == ()


def test_run_tests_crash_containment():
    problem = make_problem(entry_point=None)
    code = _code("import sys\nsys.setrecursionlimit(40)\ndef f(n):\n    return f(n + 1)")
    report = run_tests(problem, code, ["f(0)"], timeout=10)
    assert report.per_test[0].outcome is Outcome.ERROR


def test_run_tests_parallel_workers_keep_index_order():
    problem = make_problem(entry_point=None)
    code = _code("def add(a, b):\n    return a + b")
    tests = ["assert add(1, 1) == 2", "assert add(1, 1) == 3", "assert add(2, 2) == 4"]
    sequential = run_tests(problem, code, tests, timeout=10, workers=1)
    parallel = run_tests(problem, code, tests, timeout=10, workers=3)
    assert [r.outcome for r in sequential.per_test] == [r.outcome for r in parallel.per_test]
    assert [r.test_id for r in parallel.per_test] == ["test[0]", "test[1]", "test[2]"]


def test_sandbox_handle_round_trip():
    sandbox = Sandbox()
    problem = make_problem(entry_point=None)
    report = sandbox.run_tests(problem, _code("y = 2"), ["assert y == 2"], timeout=10)
    assert report.all_passed
    result = sandbox.execute("assert True", timeout=10)
    assert result.outcome is Outcome.PASS
