"""Dataset ingestion, batch evaluation, metric aggregation, and report emission."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Mapping, Sequence, Union

from .backend import Backend
from .core import PipelineConfig, ProblemInstance, ProblemSource, default_config
from .errors import EmptyDataset, MalformedRecord, MissingField
from .orchestrator import PipelineResult, run_pipeline
from .sandbox import Sandbox

logger = logging.getLogger(__name__)

#: Either one shared backend, or a factory called once per problem. A factory
#: is the way to give every problem its own scripted response sequence, which
#: keeps batch evaluation deterministic under any parallelism.
BackendProvider = Union[Backend, Callable[[ProblemInstance], Backend]]

#: The five ablation rows: (debate, reviewer, debugger).
ABLATION_ROWS: tuple[tuple[bool, bool, bool], ...] = (
    (False, False, False),
    (True, False, False),
    (False, False, True),
    (False, True, True),
    (True, True, True),
)


class ReportFormat(Enum):
    JSON = "json"
    CSV = "csv"
    MARKDOWN = "markdown"


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------


def _read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedRecord(f"cannot read dataset {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(f"{path}:{line_no}: invalid JSON ({exc})") from exc
        if not isinstance(record, dict):
            raise MalformedRecord(f"{path}:{line_no}: expected a JSON object")
        yield line_no, record


def _require(record: Mapping[str, Any], field: str, path: str | Path, line_no: int) -> Any:
    if field not in record or record[field] is None:
        raise MissingField(f"{path}:{line_no}: missing field {field!r}")
    return record[field]


def _compiles(expression: str) -> bool:
    try:
        compile(expression, "<example>", "eval")
    except SyntaxError:
        return False
    return True


def docstring_asserts(prompt: str, entry_point: str) -> list[str]:
    """Turn doctest-style examples in a problem prompt into assert snippets.

    Only single-line expected values that compile as expressions are used;
    anything else is skipped, leaving the problem without visible tests.
    """
    asserts: list[str] = []
    lines = prompt.splitlines()
    i = 0
    while i < len(lines):
        stripped = lines[i].strip()
        if not stripped.startswith(">>> "):
            i += 1
            continue
        expression = stripped[4:].strip()
        i += 1
        while i < len(lines) and lines[i].strip().startswith("... "):
            expression += " " + lines[i].strip()[4:].strip()
            i += 1
        if i >= len(lines):
            break
        expected = lines[i].strip()
        if (
            expected
            and not expected.startswith(">>>")
            and not expected.startswith('"""')
            and not expected.startswith("'''")
            and f"{entry_point}(" in expression
            and not expression.startswith("print(")
            and _compiles(expression)
            and _compiles(expected)
        ):
            asserts.append(f"assert ({expression}) == ({expected})")
            i += 1
    return asserts


def _humaneval_instance(
    record: Mapping[str, Any], path: str | Path, line_no: int, source: ProblemSource
) -> ProblemInstance:
    task_id = _require(record, "task_id", path, line_no)
    prompt = _require(record, "prompt", path, line_no)
    test = _require(record, "test", path, line_no)
    entry_point = _require(record, "entry_point", path, line_no)
    if not all(isinstance(value, str) for value in (task_id, prompt, test, entry_point)):
        raise MalformedRecord(f"{path}:{line_no}: task_id, prompt, test, entry_point must be strings")
    return ProblemInstance(
        id=task_id,
        source=source,
        prompt=prompt,
        entry_point=entry_point,
        visible_tests=tuple(docstring_asserts(prompt, entry_point)),
        hidden_tests=(test,),
    )


def _mbpp_instance(
    record: Mapping[str, Any], path: str | Path, line_no: int, source: ProblemSource
) -> ProblemInstance:
    task_id = _require(record, "task_id", path, line_no)
    text = _require(record, "text", path, line_no)
    test_list = _require(record, "test_list", path, line_no)
    if not isinstance(text, str):
        raise MalformedRecord(f"{path}:{line_no}: 'text' must be a string")
    if (
        not isinstance(test_list, list)
        or not test_list
        or not all(isinstance(item, str) for item in test_list)
    ):
        raise MalformedRecord(f"{path}:{line_no}: 'test_list' must be a non-empty list of strings")
    # First listed assert doubles as the visible hint test; the rest stay hidden-only.
    return ProblemInstance(
        id=str(task_id),
        source=source,
        prompt=text,
        entry_point=None,
        visible_tests=(test_list[0],),
        hidden_tests=tuple(test_list),
    )


def _load_dataset(
    path: str | Path,
    mapper: Callable[[Mapping[str, Any], str | Path, int, ProblemSource], ProblemInstance],
    source: ProblemSource,
) -> list[ProblemInstance]:
    problems: list[ProblemInstance] = []
    seen: set[str] = set()
    for line_no, record in _read_jsonl(path):
        instance = mapper(record, path, line_no, source)
        if instance.id in seen:
            raise MalformedRecord(f"{path}:{line_no}: duplicate task id {instance.id!r}")
        seen.add(instance.id)
        problems.append(instance)
    return problems


def load_humaneval(path: str | Path, source: ProblemSource = ProblemSource.HUMANEVAL) -> list[ProblemInstance]:
    """Load a JSONL file in the published schema {task_id, prompt, test, entry_point}.

    The test field becomes the hidden test; visible tests are assertions
    recovered from the prompt's docstring examples, when any exist.
    """
    return _load_dataset(path, _humaneval_instance, source)


def load_mbpp(path: str | Path, source: ProblemSource = ProblemSource.MBPP) -> list[ProblemInstance]:
    """Load a JSONL file in the published schema {task_id, text, test_list}."""
    return _load_dataset(path, _mbpp_instance, source)


DATASET_KINDS: dict[str, tuple[Callable[..., list[ProblemInstance]], ProblemSource]] = {
    "humaneval": (load_humaneval, ProblemSource.HUMANEVAL),
    "humaneval_et": (load_humaneval, ProblemSource.HUMANEVAL_ET),
    "mbpp": (load_mbpp, ProblemSource.MBPP),
    "mbpp_et": (load_mbpp, ProblemSource.MBPP_ET),
}


def load_dataset(path: str | Path, kind: str) -> list[ProblemInstance]:
    if kind not in DATASET_KINDS:
        raise MalformedRecord(f"unknown dataset kind {kind!r}; expected one of {sorted(DATASET_KINDS)}")
    loader, source = DATASET_KINDS[kind]
    return loader(path, source)


def load_problem_file(path: str | Path) -> ProblemInstance:
    """Load a single-problem JSON file, accepting the native instance schema
    or a one-record benchmark schema."""
    try:
        record = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise MalformedRecord(f"cannot read problem file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(record, dict):
        raise MalformedRecord(f"{path}: expected a JSON object")
    if "hidden_tests" in record:
        try:
            return ProblemInstance.from_dict(record)
        except (KeyError, ValueError) as exc:
            raise MalformedRecord(f"{path}: {exc}") from exc
    if "test" in record:
        return _humaneval_instance(record, path, 1, ProblemSource.CUSTOM)
    if "test_list" in record:
        return _mbpp_instance(record, path, 1, ProblemSource.CUSTOM)
    raise MalformedRecord(f"{path}: unrecognized problem schema")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemRow:
    id: str
    passed: bool
    api_calls: int
    prompt_tokens: int
    completion_tokens: int
    exit_reason: str | None
    debug_iterations: int
    failure: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "passed": self.passed,
            "api_calls": self.api_calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "exit_reason": self.exit_reason,
            "debug_iterations": self.debug_iterations,
            "failure": self.failure,
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "ProblemRow":
        return cls(**{key: record.get(key) for key in (
            "id", "passed", "api_calls", "prompt_tokens", "completion_tokens",
            "exit_reason", "debug_iterations", "failure",
        )})


@dataclass(frozen=True)
class BenchmarkReport:
    """Per-problem rows plus the aggregates of one evaluation run."""

    per_problem: tuple[ProblemRow, ...]
    pass_at_1: float
    mean_api_calls: float
    mean_prompt_tokens_k: float
    mean_completion_tokens_k: float
    config_fingerprint: str

    @classmethod
    def from_rows(cls, rows: Sequence[ProblemRow], config_fingerprint: str) -> "BenchmarkReport":
        count = len(rows)
        if count == 0:
            raise EmptyDataset("a report needs at least one problem row")
        return cls(
            per_problem=tuple(rows),
            pass_at_1=sum(1 for row in rows if row.passed) / count,
            mean_api_calls=sum(row.api_calls for row in rows) / count,
            mean_prompt_tokens_k=sum(row.prompt_tokens for row in rows) / count / 1000.0,
            mean_completion_tokens_k=sum(row.completion_tokens for row in rows) / count / 1000.0,
            config_fingerprint=config_fingerprint,
        )

    @property
    def infrastructure_failures(self) -> int:
        return sum(1 for row in self.per_problem if row.failure)

    def aggregates(self) -> dict[str, Any]:
        return {
            "problems": len(self.per_problem),
            "pass_at_1": self.pass_at_1,
            "mean_api_calls": self.mean_api_calls,
            "mean_prompt_tokens_k": self.mean_prompt_tokens_k,
            "mean_completion_tokens_k": self.mean_completion_tokens_k,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "config_fingerprint": self.config_fingerprint,
            "aggregates": self.aggregates(),
            "per_problem": [row.to_dict() for row in self.per_problem],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BenchmarkReport":
        aggregates = data["aggregates"]
        return cls(
            per_problem=tuple(ProblemRow.from_dict(row) for row in data["per_problem"]),
            pass_at_1=aggregates["pass_at_1"],
            mean_api_calls=aggregates["mean_api_calls"],
            mean_prompt_tokens_k=aggregates["mean_prompt_tokens_k"],
            mean_completion_tokens_k=aggregates["mean_completion_tokens_k"],
            config_fingerprint=data["config_fingerprint"],
        )


def _provider(backend: BackendProvider) -> Callable[[ProblemInstance], Backend]:
    if isinstance(backend, Backend):
        return lambda problem: backend
    return backend


def _result_row(result: PipelineResult) -> ProblemRow:
    return ProblemRow(
        id=result.problem_id,
        passed=result.passed,
        api_calls=result.metrics.api_calls,
        prompt_tokens=result.metrics.prompt_tokens,
        completion_tokens=result.metrics.completion_tokens,
        exit_reason=result.exit_reason.value if result.exit_reason else None,
        debug_iterations=result.debug_iterations,
        failure=result.failure,
    )


def evaluate(
    problems: Sequence[ProblemInstance],
    config: PipelineConfig,
    backend: BackendProvider,
    sandbox: Sandbox,
    parallelism: int = 1,
    trace_path: str | Path | None = None,
    **pipeline_kwargs: Any,
) -> BenchmarkReport:
    """Run the pipeline over every problem and aggregate.

    Rows keep the input order, so aggregates are order- and parallelism-
    insensitive; per-problem failures are recorded in their row and never
    abort the batch.
    """
    problems = list(problems)
    if not problems:
        raise EmptyDataset("refusing to evaluate an empty problem list; check the dataset path")
    provider = _provider(backend)

    def run_one(problem: ProblemInstance) -> PipelineResult:
        return run_pipeline(problem, config, provider(problem), sandbox, **pipeline_kwargs)

    if parallelism > 1 and len(problems) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(run_one, problems))
    else:
        results = [run_one(problem) for problem in problems]

    if trace_path is not None:
        write_traces(results, trace_path)
    return BenchmarkReport.from_rows([_result_row(result) for result in results], config.fingerprint())


def ablation_sweep(
    problems: Sequence[ProblemInstance],
    backend: BackendProvider,
    sandbox: Sandbox,
    base_config: PipelineConfig | None = None,
    parallelism: int = 1,
    **pipeline_kwargs: Any,
) -> list[BenchmarkReport]:
    """Evaluate the five toggle rows of the module ablation matrix.

    A scripted run must pass a backend factory so each (row, problem) pair
    gets a fresh response sequence.
    """
    base = base_config or default_config()
    reports = []
    for debate, reviewer, debugger in ABLATION_ROWS:
        config = replace(base, enable_debate=debate, enable_reviewer=reviewer, enable_debugger=debugger)
        reports.append(evaluate(problems, config, backend, sandbox, parallelism, **pipeline_kwargs))
    return reports


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _atomic_write(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(temp_name, path)
    except BaseException:
        try:
            os.unlink(temp_name)
        except OSError:
            pass
        raise


def write_traces(results: Iterable[PipelineResult], path: str | Path) -> None:
    """Persist one JSON trace record per problem, in evaluation input order."""
    lines = [json.dumps(result.to_dict(), ensure_ascii=False) for result in results]
    _atomic_write(path, "\n".join(lines) + "\n")


def _render_csv(report: BenchmarkReport) -> str:
    buffer = io.StringIO()
    fields = ["id", "passed", "api_calls", "prompt_tokens", "completion_tokens",
              "exit_reason", "debug_iterations", "failure"]
    writer = csv.DictWriter(buffer, fieldnames=fields)
    writer.writeheader()
    for row in report.per_problem:
        writer.writerow(row.to_dict())
    return buffer.getvalue()


def _render_markdown(report: BenchmarkReport) -> str:
    aggregates = report.aggregates()
    lines = [
        "# Evaluation report",
        "",
        f"Config: `{report.config_fingerprint}`",
        "",
        "| Problems | Pass@1 | API Calls | Prompt Token (k) | Compl. Token (k) |",
        "| ---: | ---: | ---: | ---: | ---: |",
        "| {problems} | {pass_at_1:.2%} | {mean_api_calls:.2f} | {mean_prompt_tokens_k:.1f} | {mean_completion_tokens_k:.1f} |".format(
            **aggregates
        ),
        "",
        "## Per problem",
        "",
        "| ID | Passed | API Calls | Prompt Tokens | Completion Tokens | Exit | Debug Iters |",
        "| :-- | :-: | ---: | ---: | ---: | :-- | ---: |",
    ]
    for row in report.per_problem:
        lines.append(
            f"| {row.id} | {'yes' if row.passed else 'no'} | {row.api_calls} "
            f"| {row.prompt_tokens} | {row.completion_tokens} "
            f"| {row.exit_reason or '-'} | {row.debug_iterations} |"
        )
    return "\n".join(lines) + "\n"


def emit_report(report: BenchmarkReport, format: ReportFormat | str, path: str | Path) -> None:
    """Serialize the report; JSON round-trips losslessly through load_report."""
    format = ReportFormat(format) if isinstance(format, str) else format
    if format is ReportFormat.JSON:
        text = json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n"
    elif format is ReportFormat.CSV:
        text = _render_csv(report)
    else:
        text = _render_markdown(report)
    _atomic_write(path, text)


def load_report(path: str | Path) -> BenchmarkReport:
    return BenchmarkReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def render_ablation_table(
    rows: Sequence[tuple[tuple[bool, bool, bool], BenchmarkReport]]
) -> str:
    """A combined Markdown table over sweep rows: toggles, Pass@1, mean calls."""
    lines = [
        "# Module ablation sweep",
        "",
        "| Debate | Reviewer | Debugger | Pass@1 | API Calls |",
        "| :-: | :-: | :-: | ---: | ---: |",
    ]
    for (debate, reviewer, debugger), report in rows:
        mark = lambda flag: "+" if flag else "-"
        lines.append(
            f"| {mark(debate)} | {mark(reviewer)} | {mark(debugger)} "
            f"| {report.pass_at_1:.2%} | {report.mean_api_calls:.2f} |"
        )
    return "\n".join(lines) + "\n"
