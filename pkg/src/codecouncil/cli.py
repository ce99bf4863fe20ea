"""Operator entry point: run one problem, evaluate a dataset, or sweep ablations.

Exit codes: 0 success, 1 evaluation finished but some problems hit
infrastructure failures, 2 usage/config error, 3 fatal infrastructure error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Callable, Mapping

from .backend import Backend, ScriptedBackend, http_backend, parse_script
from .core import PipelineConfig, ProblemInstance
from .errors import CodeCouncilError, ConfigError, DatasetError, PromptError
from .prompts import PromptLibrary
from .harness import (
    ABLATION_ROWS,
    BenchmarkReport,
    ReportFormat,
    ablation_sweep,
    emit_report,
    evaluate,
    load_dataset,
    load_problem_file,
    render_ablation_table,
)
from .orchestrator import run_pipeline
from .sandbox import Sandbox

EXIT_OK = 0
EXIT_DEGRADED = 1
EXIT_CONFIG = 2
EXIT_INFRA = 3

_CONFIG_KEYS = (
    "tau",
    "max_rounds",
    "max_debug_iterations",
    "enable_debate",
    "enable_reviewer",
    "enable_debugger",
    "sandbox_timeout",
    "stderr_truncation",
    "parse_retries",
)


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="JSON config file; flags override file values")
    shared.add_argument("--tau", type=float, help="confidence threshold for the debate gate")
    shared.add_argument("--rounds", type=int, help="maximum debate rounds")
    shared.add_argument("--max-debug-iters", type=int, help="debug loop iteration cap")
    shared.add_argument("--no-debate", action="store_true", help="disable the planning/debate stages")
    shared.add_argument("--no-reviewer", action="store_true", help="disable the code reviewer")
    shared.add_argument("--no-debugger", action="store_true", help="disable the debugging loop")
    shared.add_argument("--direct", action="store_true", help="single-call baseline: all modules off")
    shared.add_argument("--parse-retries", type=int, help="re-asks after an unparseable reply")
    shared.add_argument("--stderr-truncation", type=int, help="max stderr excerpt chars")
    shared.add_argument("--timeout", type=float, help="per-test sandbox timeout in seconds")
    shared.add_argument("--backend", choices=("http", "scripted"), help="completion backend (default http)")
    shared.add_argument("--endpoint", help="chat-completion endpoint URL (or CODECOUNCIL_ENDPOINT)")
    shared.add_argument("--model", help="model name (or CODECOUNCIL_MODEL)")
    shared.add_argument("--auth-token", help="bearer token (or CODECOUNCIL_AUTH_TOKEN)")
    shared.add_argument("--script", help="script file for the scripted backend")
    shared.add_argument("--interpreter", help="interpreter for sandboxed test runs")
    shared.add_argument("--templates", help="directory with custom prompt template files")

    parser = argparse.ArgumentParser(prog="codecouncil", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", parents=[shared], help="run the pipeline on a single problem file")
    run.add_argument("problem", help="problem JSON file")
    run.add_argument("--trace", help="write the JSON trace record here")

    ev = commands.add_parser("eval", parents=[shared], help="evaluate a dataset and emit a report")
    ev.add_argument("dataset", help="dataset JSONL file")
    ev.add_argument("--kind", default="humaneval", choices=("humaneval", "humaneval_et", "mbpp", "mbpp_et"))
    ev.add_argument("--parallel", type=int, help="concurrent problem evaluations (default 1)")
    ev.add_argument("--out", default="report.json", help="report output path")
    ev.add_argument("--format", default="json", choices=("json", "csv", "markdown"))
    ev.add_argument("--trace", help="trace JSONL path (default: alongside the report)")

    ab = commands.add_parser("ablate", parents=[shared], help="run the 5-row module ablation sweep")
    ab.add_argument("dataset", help="dataset JSONL file")
    ab.add_argument("--kind", default="humaneval", choices=("humaneval", "humaneval_et", "mbpp", "mbpp_et"))
    ab.add_argument("--parallel", type=int, help="concurrent problem evaluations (default 1)")
    ab.add_argument("--out-dir", default="ablation", help="directory for the per-row reports")
    return parser


def _load_config_file(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return data


def build_config(args: argparse.Namespace, file_cfg: Mapping[str, Any]) -> PipelineConfig:
    """Assemble the effective config with flag > file > default precedence."""
    values: dict[str, Any] = {key: file_cfg[key] for key in _CONFIG_KEYS if key in file_cfg}
    if args.tau is not None:
        values["tau"] = args.tau
    if args.rounds is not None:
        values["max_rounds"] = args.rounds
    if args.max_debug_iters is not None:
        values["max_debug_iterations"] = args.max_debug_iters
    if args.parse_retries is not None:
        values["parse_retries"] = args.parse_retries
    if args.stderr_truncation is not None:
        values["stderr_truncation"] = args.stderr_truncation
    if args.timeout is not None:
        values["sandbox_timeout"] = args.timeout
    if args.no_debate:
        values["enable_debate"] = False
    if args.no_reviewer:
        values["enable_reviewer"] = False
    if args.no_debugger:
        values["enable_debugger"] = False
    if args.direct:
        values.update(enable_debate=False, enable_reviewer=False, enable_debugger=False)
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def _backend_settings(args: argparse.Namespace, file_cfg: Mapping[str, Any]) -> dict[str, Any]:
    settings = dict(file_cfg.get("backend", {})) if isinstance(file_cfg.get("backend"), dict) else {}
    for key, value in (
        ("kind", args.backend),
        ("endpoint", args.endpoint),
        ("model", args.model),
        ("auth_token", args.auth_token),
        ("script", args.script),
    ):
        if value is not None:
            settings[key] = value
    settings.setdefault("kind", "http")
    return settings


def _load_script_data(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read script file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"script file {path} is not valid JSON: {exc}") from exc


def build_backend_provider(
    args: argparse.Namespace, file_cfg: Mapping[str, Any]
) -> tuple[Callable[[ProblemInstance], Backend], str]:
    """Return a per-problem backend factory plus a short description.

    A flat script array is replayed from the start for every problem; a JSON
    object maps problem ids to their own entry arrays. HTTP backends are
    shared across problems (the wire protocol is stateless per call).
    """
    settings = _backend_settings(args, file_cfg)
    kind = settings["kind"]
    if kind == "scripted":
        script_path = settings.get("script")
        if not script_path:
            raise ConfigError("the scripted backend needs --script (or a 'backend.script' config entry)")
        data = _load_script_data(script_path)
        if isinstance(data, list):
            entries = parse_script(data)
            return (lambda problem: ScriptedBackend(entries)), f"scripted({script_path})"
        if isinstance(data, dict):
            per_problem = {key: parse_script(value) for key, value in data.items()}

            def provider(problem: ProblemInstance) -> Backend:
                if problem.id not in per_problem:
                    raise ConfigError(f"script file {script_path} has no entries for problem {problem.id!r}")
                return ScriptedBackend(per_problem[problem.id])

            return provider, f"scripted({script_path})"
        raise ConfigError(f"script file {script_path} must hold a JSON array or object")
    if kind != "http":
        raise ConfigError(f"unknown backend kind {kind!r}")
    backend = http_backend(settings.get("endpoint"), settings.get("model"), settings.get("auth_token"))
    return (lambda problem: backend), f"http({settings.get('model') or 'env model'})"


def _print_startup(config: PipelineConfig, backend_label: str) -> None:
    print(
        f"config: {config.fingerprint()} debug_iters={config.max_debug_iterations} "
        f"timeout={config.sandbox_timeout:g}s retries={config.parse_retries} "
        f"backend={backend_label} (precedence: flags > config file > defaults)"
    )


def _runtime_settings(args: argparse.Namespace, file_cfg: Mapping[str, Any]) -> dict[str, Any]:
    """Non-PipelineConfig settings with the same flag > file > default precedence."""
    interpreter = args.interpreter or file_cfg.get("interpreter")
    templates = args.templates or file_cfg.get("templates")
    parallel = getattr(args, "parallel", None)
    if parallel is None:
        parallel = file_cfg.get("parallel", 1)
    library = PromptLibrary.load(templates) if templates else None
    return {"interpreter": interpreter, "library": library, "parallel": parallel}


def cmd_run(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    config = build_config(args, file_cfg)
    provider, backend_label = build_backend_provider(args, file_cfg)
    runtime = _runtime_settings(args, file_cfg)
    _print_startup(config, backend_label)
    problem = load_problem_file(args.problem)
    sandbox = Sandbox(interpreter=runtime["interpreter"])
    result = run_pipeline(problem, config, provider(problem), sandbox, library=runtime["library"])

    if result.transcript is not None:
        gammas = ", ".join(f"{gamma:g}" for gamma in result.transcript.collective_confidence)
        print(
            f"debate: {result.transcript.round_count} round(s), collective confidence [{gammas}], "
            f"exit {result.transcript.exit_reason.value}"
        )
    else:
        print("debate: skipped (direct generation)")
    if result.final_code is not None:
        print(f"final code (revision {result.final_code.revision}):")
        print(result.final_code.source)
    print(f"verdict: {'PASSED' if result.passed else 'FAILED'}")
    metrics = result.metrics
    per_stage = ", ".join(f"{stage.value}={count}" for stage, count in sorted(
        metrics.per_stage_calls.items(), key=lambda item: item[0].value))
    print(
        f"metrics: api_calls={metrics.api_calls} prompt_tokens={metrics.prompt_tokens} "
        f"completion_tokens={metrics.completion_tokens} [{per_stage}]"
    )
    if args.trace:
        Path(args.trace).parent.mkdir(parents=True, exist_ok=True)
        Path(args.trace).write_text(json.dumps(result.to_dict(), ensure_ascii=False) + "\n", encoding="utf-8")
    if result.failure:
        print(f"failure: {result.failure}", file=sys.stderr)
        return EXIT_INFRA
    return EXIT_OK if result.passed else EXIT_DEGRADED


def _aggregate_line(report: BenchmarkReport) -> str:
    aggregates = report.aggregates()
    return (
        f"pass@1={aggregates['pass_at_1']:.2%} problems={aggregates['problems']} "
        f"mean_api_calls={aggregates['mean_api_calls']:.2f} "
        f"prompt_tokens_k={aggregates['mean_prompt_tokens_k']:.1f} "
        f"completion_tokens_k={aggregates['mean_completion_tokens_k']:.1f}"
    )


def cmd_eval(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    config = build_config(args, file_cfg)
    provider, backend_label = build_backend_provider(args, file_cfg)
    runtime = _runtime_settings(args, file_cfg)
    _print_startup(config, backend_label)
    problems = load_dataset(args.dataset, args.kind)
    sandbox = Sandbox(interpreter=runtime["interpreter"])
    trace_path = args.trace or str(Path(args.out).with_suffix("")) + ".traces.jsonl"
    report = evaluate(problems, config, provider, sandbox, parallelism=runtime["parallel"],
                      trace_path=trace_path, library=runtime["library"])
    emit_report(report, args.format, args.out)
    print(_aggregate_line(report))
    print(f"report: {args.out}  traces: {trace_path}")
    if report.infrastructure_failures:
        print(f"{report.infrastructure_failures} problem(s) hit infrastructure failures", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    file_cfg = _load_config_file(args.config)
    base_config = build_config(args, file_cfg)
    provider, backend_label = build_backend_provider(args, file_cfg)
    runtime = _runtime_settings(args, file_cfg)
    _print_startup(base_config, backend_label)
    problems = load_dataset(args.dataset, args.kind)
    sandbox = Sandbox(interpreter=runtime["interpreter"])
    out_dir = Path(args.out_dir)

    degraded = False
    rows: list[tuple[tuple[bool, bool, bool], BenchmarkReport]] = []
    for flags, report in zip(
        ABLATION_ROWS,
        ablation_sweep(problems, provider, sandbox, base_config=base_config,
                       parallelism=runtime["parallel"], library=runtime["library"]),
    ):
        debate, reviewer, debugger = flags
        name = f"ablation_d{int(debate)}_r{int(reviewer)}_g{int(debugger)}.json"
        emit_report(report, ReportFormat.JSON, out_dir / name)
        rows.append((flags, report))
        degraded = degraded or bool(report.infrastructure_failures)
        print(f"{name}: {_aggregate_line(report)}")
    summary_path = out_dir / "ablation_summary.md"
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.write_text(render_ablation_table(rows), encoding="utf-8")
    print(f"summary: {summary_path}")
    return EXIT_DEGRADED if degraded else EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": cmd_run, "eval": cmd_eval, "ablate": cmd_ablate}
    try:
        return handlers[args.command](args)
    except (ConfigError, DatasetError, PromptError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CodeCouncilError as exc:
        print(f"infrastructure error: {exc}", file=sys.stderr)
        return EXIT_INFRA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
