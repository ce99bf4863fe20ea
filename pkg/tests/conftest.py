from __future__ import annotations

import json
from pathlib import Path

import pytest

from codecouncil.backend import Backend, CompletionRequest, CompletionResponse, ScriptEntry
from codecouncil.core import (
    Outcome,
    ProblemInstance,
    ProblemSource,
    TestReport,
    TestResult,
)

DATA_DIR = Path(__file__).parent / "data"


def plan_text(confidence: float, plan: str = "use a straightforward loop") -> str:
    payload = json.dumps({"plan": plan, "confidence": confidence})
    return f"Let me think about this.\n```json\n{payload}\n```\n"


def plan_entry(confidence: float, plan: str = "use a straightforward loop", **kwargs) -> ScriptEntry:
    kwargs.setdefault("prompt_tokens", 10)
    kwargs.setdefault("completion_tokens", 5)
    return ScriptEntry(text=plan_text(confidence, plan), **kwargs)


def review_text(cause: str = "off-by-one in the loop", fix: str = "start the range at 1") -> str:
    payload = json.dumps({"cause_analysis": cause, "fix_plan": fix})
    return f"Here is my diagnosis.\n```json\n{payload}\n```\n"


def review_entry(cause: str = "off-by-one in the loop", fix: str = "start the range at 1", **kwargs) -> ScriptEntry:
    kwargs.setdefault("prompt_tokens", 10)
    kwargs.setdefault("completion_tokens", 5)
    return ScriptEntry(text=review_text(cause, fix), **kwargs)


def code_text(source: str) -> str:
    return f"Here is the program.\n```python\n{source}\n```\n"


def code_entry(source: str, **kwargs) -> ScriptEntry:
    kwargs.setdefault("prompt_tokens", 10)
    kwargs.setdefault("completion_tokens", 5)
    return ScriptEntry(text=code_text(source), **kwargs)


def text_entry(text: str, **kwargs) -> ScriptEntry:
    kwargs.setdefault("prompt_tokens", 10)
    kwargs.setdefault("completion_tokens", 5)
    return ScriptEntry(text=text, **kwargs)


def make_problem(
    problem_id: str = "demo/0",
    prompt: str = "Write a function add(a, b) that returns the sum of its arguments.",
    entry_point: str | None = "add",
    visible_tests: tuple[str, ...] = ("assert add(1, 2) == 3",),
    hidden_tests: tuple[str, ...] = ("assert add(2, 2) == 4",),
) -> ProblemInstance:
    return ProblemInstance(
        id=problem_id,
        source=ProblemSource.CUSTOM,
        prompt=prompt,
        entry_point=entry_point,
        visible_tests=visible_tests,
        hidden_tests=hidden_tests,
    )


def passing_report() -> TestReport:
    return TestReport.from_results((TestResult("test[0]", Outcome.PASS),), wall_time=0.01)


def failing_report(stderr: str = "AssertionError: expected 3, got -1") -> TestReport:
    return TestReport.from_results((TestResult("test[0]", Outcome.FAIL, stderr),), wall_time=0.01)


class FakeSandbox:
    """A sandbox double driven by a list of pass/fail outcomes.

    Each run_tests call pops the next outcome; an empty list means
    everything passes. Calls are recorded for trace assertions.
    """

    def __init__(self, outcomes: list[bool] | None = None):
        self.outcomes = list(outcomes or [])
        self.calls: list[tuple[str, tuple[str, ...]]] = []

    def run_tests(self, problem, code, tests, timeout, stderr_limit=4096):
        self.calls.append((problem.id, tuple(tests)))
        passed = self.outcomes.pop(0) if self.outcomes else True
        if not tests:
            return TestReport(per_test=(), all_passed=True, wall_time=0.0)
        if passed:
            results = tuple(TestResult(f"test[{i}]", Outcome.PASS) for i in range(len(tests)))
        else:
            results = (TestResult("test[0]", Outcome.FAIL, "AssertionError: nope"),) + tuple(
                TestResult(f"test[{i}]", Outcome.PASS) for i in range(1, len(tests))
            )
        return TestReport.from_results(results, wall_time=0.0)


class CapturingBackend(Backend):
    """Wraps another backend and keeps every request for prompt assertions."""

    def __init__(self, inner: Backend):
        super().__init__()
        self.inner = inner
        self.requests: list[CompletionRequest] = []

    def _do_complete(self, request: CompletionRequest) -> CompletionResponse:
        self.requests.append(request)
        return self.inner.complete(request)


@pytest.fixture
def mini_humaneval_path() -> Path:
    return DATA_DIR / "mini_humaneval.jsonl"


@pytest.fixture
def mini_mbpp_path() -> Path:
    return DATA_DIR / "mini_mbpp.jsonl"


@pytest.fixture
def answer42_path() -> Path:
    return DATA_DIR / "answer42.jsonl"
