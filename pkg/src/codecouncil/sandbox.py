"""Isolated execution of candidate programs against test snippets.

Each test snippet runs in its own interpreter process with a fresh temporary
working directory, so state cannot leak between tests and a crashing program
can never take the harness down. Isolation here means process and working
directory isolation; this is a trusted-benchmark runner, not a security
boundary.
"""

from __future__ import annotations

import os
import signal
import subprocess
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .core import CandidateCode, Outcome, ProblemInstance, TestReport, TestResult
from .errors import SandboxFailure

INTERPRETER_ENV = "CODECOUNCIL_INTERPRETER"

#: Wall-clock slack allowed for process teardown beyond the configured timeout.
GRACE_SECONDS = 2.0

_ASSERT_MARKER = "AssertionError"


def default_interpreter() -> str:
    return os.environ.get(INTERPRETER_ENV) or sys.executable


def assemble_program(
    problem: ProblemInstance, code: CandidateCode, test: str | Sequence[str]
) -> str:
    """Concatenate candidate source and test snippet into one runnable program.

    When the snippet defines a ``check`` function and the problem names an
    entry point, the invocation ``check(<entry_point>)`` is appended; bare
    assert lists need no invocation. An empty snippet yields the code alone.
    """
    if not isinstance(test, str):
        test = "\n".join(test)
    parts = [code.source]
    snippet = test.strip("\n")
    if snippet.strip():
        parts.append(snippet)
        if problem.entry_point and "def check(" in snippet:
            parts.append(f"check({problem.entry_point})")
    return "\n\n".join(parts) + "\n"


@dataclass(frozen=True)
class ExecutionResult:
    outcome: Outcome
    stderr_excerpt: str
    wall_time: float


def execute(
    source: str,
    timeout: float,
    *,
    interpreter: str | None = None,
    stderr_limit: int = 4096,
) -> ExecutionResult:
    """Run one program in a separate process and classify the outcome.

    Exit code 0 is a pass; a nonzero exit with an assertion marker on stderr
    is a test failure; any other nonzero exit is an error; exceeding the
    wall-clock timeout kills the whole process group.
    """
    interpreter = interpreter or default_interpreter()
    started = time.monotonic()
    with tempfile.TemporaryDirectory(prefix="codecouncil-") as workdir:
        program = Path(workdir) / "program.py"
        program.write_text(source, encoding="utf-8")
        try:
            proc = subprocess.Popen(
                [interpreter, str(program)],
                cwd=workdir,
                stdin=subprocess.DEVNULL,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                start_new_session=True,
            )
        except OSError as exc:
            raise SandboxFailure(f"cannot launch interpreter {interpreter!r}: {exc}") from exc
        try:
            _, stderr_bytes = proc.communicate(timeout=timeout)
            timed_out = False
        except subprocess.TimeoutExpired:
            _kill_process_group(proc)
            _, stderr_bytes = proc.communicate()
            timed_out = True
    wall_time = time.monotonic() - started
    stderr_text = stderr_bytes.decode("utf-8", errors="replace")
    if timed_out:
        outcome = Outcome.TIMEOUT
    elif proc.returncode == 0:
        outcome = Outcome.PASS
    elif _ASSERT_MARKER in stderr_text:
        outcome = Outcome.FAIL
    else:
        outcome = Outcome.ERROR
    # Keep the tail: tracebacks put the failing assertion last.
    excerpt = stderr_text[-stderr_limit:] if stderr_limit else ""
    return ExecutionResult(outcome=outcome, stderr_excerpt=excerpt, wall_time=wall_time)


def _kill_process_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError, OSError):
        proc.kill()


def run_tests(
    problem: ProblemInstance,
    code: CandidateCode,
    tests: Sequence[str],
    timeout: float,
    *,
    stderr_limit: int = 4096,
    interpreter: str | None = None,
    workers: int = 1,
) -> TestReport:
    """Execute each snippet independently (one process per test) and aggregate.

    Results are ordered by test index regardless of completion order. An
    empty test list is a vacuous pass with zero executions.
    """
    started = time.monotonic()
    snippets = list(tests)
    if not snippets:
        return TestReport(per_test=(), all_passed=True, wall_time=time.monotonic() - started)
    sources = [assemble_program(problem, code, snippet) for snippet in snippets]

    def run_one(source: str) -> ExecutionResult:
        return execute(source, timeout, interpreter=interpreter, stderr_limit=stderr_limit)

    if workers > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            executions = list(pool.map(run_one, sources))
    else:
        executions = [run_one(source) for source in sources]
    results = tuple(
        TestResult(test_id=f"test[{index}]", outcome=execution.outcome, stderr_excerpt=execution.stderr_excerpt)
        for index, execution in enumerate(executions)
    )
    return TestReport.from_results(results, wall_time=time.monotonic() - started)


@dataclass(frozen=True)
class Sandbox:
    """Execution environment handle: interpreter choice plus per-problem worker bound."""

    interpreter: str | None = None
    workers: int = 1

    def execute(self, source: str, timeout: float, stderr_limit: int = 4096) -> ExecutionResult:
        return execute(source, timeout, interpreter=self.interpreter, stderr_limit=stderr_limit)

    def run_tests(
        self,
        problem: ProblemInstance,
        code: CandidateCode,
        tests: Sequence[str],
        timeout: float,
        stderr_limit: int = 4096,
    ) -> TestReport:
        return run_tests(
            problem,
            code,
            tests,
            timeout,
            stderr_limit=stderr_limit,
            interpreter=self.interpreter,
            workers=self.workers,
        )
