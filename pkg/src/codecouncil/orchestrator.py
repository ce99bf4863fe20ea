"""The four-stage pipeline: parallel planning with confidence gating,
bounded cross-agent deliberation, consensus synthesis plus code generation,
and the reviewer-guided debugging loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Mapping, Sequence

from . import prompts
from .backend import Backend, CompletionRequest, RecordingBackend
from .core import (
    DEBATE_ROLES,
    AgentPersona,
    CandidateCode,
    DebateTranscript,
    ExitReason,
    MasterPlan,
    PipelineConfig,
    PlanRecord,
    ProblemInstance,
    ReviewAnalysis,
    Role,
    RunMetrics,
    Stage,
    TestReport,
    default_config,
    default_personas,
)
from .errors import CodeCouncilError, ConfigError, EmptyCompletion, EmptyInput, ParseFailure
from .prompts import PromptLibrary
from .sandbox import Sandbox

logger = logging.getLogger(__name__)

_PLANNER_SYSTEM = "You are a software planning agent on a three-member review council."
_SYNTH_SYSTEM = "You are the synthesis agent that merges the council's plans into one."
_CODER_SYSTEM = "You are the coding agent that turns the plan into a runnable program."
_REVIEWER_SYSTEM = "You are the code reviewer that diagnoses failing tests."
_DEBUGGER_SYSTEM = "You are the debugging agent that repairs failing code."


class GateDecision(Enum):
    BYPASS = "bypass"
    DEBATE = "debate"


def _request(stage: Stage, system_text: str, user_text: str) -> CompletionRequest:
    return CompletionRequest(system_text=system_text, user_text=user_text, stage=stage)


def _parsed_plan(backend: Backend, request: CompletionRequest, config: PipelineConfig) -> tuple[str, float]:
    """Call until the reply parses, up to config.parse_retries extra attempts.

    The fallback after exhausted retries keeps the raw text as the plan with
    confidence 0: failures push toward more deliberation, never toward a
    spurious early exit.
    """
    last_text = ""
    for attempt in range(config.parse_retries + 1):
        response = backend.complete(request)
        last_text = response.text
        try:
            return prompts.parse_plan_response(response.text)
        except ParseFailure as exc:
            logger.debug("plan parse attempt %d failed: %s", attempt + 1, exc)
    return last_text.strip() or "(empty completion)", 0.0


def _parsed_review(backend: Backend, request: CompletionRequest, config: PipelineConfig) -> ReviewAnalysis:
    last_text = ""
    for attempt in range(config.parse_retries + 1):
        response = backend.complete(request)
        last_text = response.text
        try:
            return prompts.parse_review_response(response.text)
        except ParseFailure as exc:
            logger.debug("review parse attempt %d failed: %s", attempt + 1, exc)
    raw = last_text.strip() or "(empty completion)"
    return ReviewAnalysis(cause_analysis=raw, fix_plan=raw)


def collective_confidence(records: Sequence[PlanRecord]) -> float:
    """Arithmetic mean of the round's confidences; exactly rounded, so
    permutation-invariant."""
    if not records:
        raise EmptyInput("no plan records to average")
    return math.fsum(record.confidence for record in records) / len(records)


def gate(gamma: float, tau: float) -> GateDecision:
    """Bypass all deliberation when the collective confidence reaches tau.

    The boundary counts as a bypass (gamma >= tau), which keeps tau=100
    reachable.
    """
    if not (0 <= gamma <= 100) or not (0 <= tau <= 100):
        raise ValueError(f"gamma and tau must lie in [0, 100], got {gamma!r}, {tau!r}")
    return GateDecision.BYPASS if gamma >= tau else GateDecision.DEBATE


def _build_transcript(
    rounds: Sequence[Sequence[PlanRecord]], exit_reason: ExitReason | None
) -> DebateTranscript:
    frozen_rounds = tuple(tuple(records) for records in rounds)
    gammas = tuple(collective_confidence(records) for records in frozen_rounds)
    return DebateTranscript(rounds=frozen_rounds, collective_confidence=gammas, exit_reason=exit_reason)


def initial_planning(
    problem: ProblemInstance,
    backend: Backend,
    config: PipelineConfig | None = None,
    personas: Mapping[Role, AgentPersona] | None = None,
    library: PromptLibrary | None = None,
) -> list[PlanRecord]:
    """Round 1: one independent plan-and-confidence call per debating persona.

    Calls run in the fixed UA, TA, QA order so scripted call sequences stay
    deterministic; parse retries apply per agent independently.
    """
    config = config or default_config()
    if not config.enable_debate:
        raise ConfigError("initial planning requires the debate stages to be enabled")
    personas = personas or default_personas()
    records = []
    for role in DEBATE_ROLES:
        user_text = prompts.render_planning(problem, personas[role], library)
        plan, confidence = _parsed_plan(
            backend, _request(Stage.INITIAL_PLAN, _PLANNER_SYSTEM, user_text), config
        )
        records.append(PlanRecord(author=role, round=1, plan_text=plan, confidence=confidence))
    return records


def deliberate(
    problem: ProblemInstance,
    transcript: DebateTranscript,
    backend: Backend,
    config: PipelineConfig | None = None,
    personas: Mapping[Role, AgentPersona] | None = None,
    library: PromptLibrary | None = None,
) -> DebateTranscript:
    """Run deliberation rounds 2..R, stopping early once a round's collective
    confidence reaches tau.

    Every agent in round r sees the complete round r-1 plan set. The returned
    transcript is finalized with EarlyConsensus or RoundCapReached.
    """
    config = config or default_config()
    personas = personas or default_personas()
    if transcript.exit_reason is not None:
        raise ValueError("transcript is already finalized")
    rounds: list[tuple[PlanRecord, ...]] = list(transcript.rounds)
    exit_reason = ExitReason.ROUND_CAP_REACHED
    for round_no in range(len(rounds) + 1, config.max_rounds + 1):
        previous_round = rounds[-1]
        fresh: list[PlanRecord] = []
        for role in DEBATE_ROLES:
            user_text = prompts.render_deliberation(problem, previous_round, personas[role], library)
            plan, confidence = _parsed_plan(
                backend, _request(Stage.DELIBERATION, _PLANNER_SYSTEM, user_text), config
            )
            fresh.append(PlanRecord(author=role, round=round_no, plan_text=plan, confidence=confidence))
        rounds.append(tuple(fresh))
        if gate(collective_confidence(fresh), config.tau) is GateDecision.BYPASS:
            exit_reason = ExitReason.EARLY_CONSENSUS
            break
    return _build_transcript(rounds, exit_reason)


def synthesize(
    problem: ProblemInstance,
    transcript: DebateTranscript,
    backend: Backend,
    library: PromptLibrary | None = None,
) -> MasterPlan:
    """One synthesis call over the terminal round's plans."""
    if transcript.exit_reason is None:
        raise ValueError("transcript must be finalized before synthesis")
    user_text = prompts.render_synthesis(problem, transcript.terminal_round, library)
    response = backend.complete(_request(Stage.SYNTHESIS, _SYNTH_SYSTEM, user_text))
    text = response.text.strip()
    if not text:
        raise EmptyCompletion("synthesis returned no text")
    return MasterPlan(text=text, source_round=transcript.round_count)


def generate_code(
    problem: ProblemInstance,
    master_plan: MasterPlan | None,
    backend: Backend,
    library: PromptLibrary | None = None,
) -> CandidateCode:
    """One code-generation call; with no master plan this is the direct baseline."""
    user_text = prompts.render_codegen(problem, master_plan, library)
    response = backend.complete(_request(Stage.CODEGEN, _CODER_SYSTEM, user_text))
    return prompts.extract_code(response.text)


@dataclass(frozen=True)
class DebugOutcome:
    final_code: CandidateCode
    final_report: TestReport
    iterations_used: int


def debug_loop(
    problem: ProblemInstance,
    code: CandidateCode,
    backend: Backend,
    sandbox: Sandbox,
    config: PipelineConfig | None = None,
    library: PromptLibrary | None = None,
) -> DebugOutcome:
    """Run visible tests and rewrite the code until they pass or the
    iteration cap is reached.

    With the reviewer enabled each iteration costs two calls (review, then
    debug); without it the debugger works from the code and test log alone.
    """
    config = config or default_config()
    if not config.enable_debugger:
        raise ConfigError("the debug loop requires the debugger to be enabled")
    report = sandbox.run_tests(
        problem, code, problem.visible_tests, config.sandbox_timeout, config.stderr_truncation
    )
    iterations = 0
    while not report.all_passed and iterations < config.max_debug_iterations:
        analysis = None
        if config.enable_reviewer:
            review_text = prompts.render_reviewer(
                problem, code, report, config.stderr_truncation, library
            )
            analysis = _parsed_review(
                backend, _request(Stage.REVIEW, _REVIEWER_SYSTEM, review_text), config
            )
        debug_text = prompts.render_debugger(
            problem, code, report, analysis, config.stderr_truncation, library
        )
        response = backend.complete(_request(Stage.DEBUG, _DEBUGGER_SYSTEM, debug_text))
        revised = prompts.extract_code(response.text)
        code = CandidateCode(source=revised.source, extraction=revised.extraction, revision=code.revision + 1)
        iterations += 1
        report = sandbox.run_tests(
            problem, code, problem.visible_tests, config.sandbox_timeout, config.stderr_truncation
        )
    return DebugOutcome(final_code=code, final_report=report, iterations_used=iterations)


@dataclass(frozen=True)
class PipelineResult:
    """Per-problem trace record: everything the harness persists and aggregates."""

    problem_id: str
    passed: bool
    final_code: CandidateCode | None
    transcript: DebateTranscript | None
    master_plan: MasterPlan | None
    hidden_report: TestReport | None
    debug_iterations: int
    call_pattern: tuple[Stage, ...]
    metrics: RunMetrics
    failure: str | None = None

    @property
    def exit_reason(self) -> ExitReason | None:
        return self.transcript.exit_reason if self.transcript else None

    def to_dict(self) -> dict[str, Any]:
        return {
            "problem_id": self.problem_id,
            "passed": self.passed,
            "final_code": self.final_code.to_dict() if self.final_code else None,
            "transcript": self.transcript.to_dict() if self.transcript else None,
            "master_plan": self.master_plan.to_dict() if self.master_plan else None,
            "hidden_report": self.hidden_report.to_dict() if self.hidden_report else None,
            "debug_iterations": self.debug_iterations,
            "call_pattern": [stage.value for stage in self.call_pattern],
            "metrics": self.metrics.to_dict(),
            "failure": self.failure,
        }


def run_pipeline(
    problem: ProblemInstance,
    config: PipelineConfig,
    backend: Backend,
    sandbox: Sandbox,
    personas: Mapping[Role, AgentPersona] | None = None,
    library: PromptLibrary | None = None,
) -> PipelineResult:
    """Compose the stages per the ablation flags and deliver the final verdict.

    The hidden tests run exactly once, after the debug loop, so debugging can
    never overfit to evaluation data. A hard stage failure marks this problem
    failed and is recorded on the result; it never propagates, so a batch
    always continues.
    """
    recorder = RecordingBackend(backend)
    transcript: DebateTranscript | None = None
    master_plan: MasterPlan | None = None
    code: CandidateCode | None = None
    hidden_report: TestReport | None = None
    debug_iterations = 0
    failure: str | None = None
    passed = False
    try:
        if config.enable_debate:
            records = initial_planning(problem, recorder, config, personas, library)
            if gate(collective_confidence(records), config.tau) is GateDecision.BYPASS:
                transcript = _build_transcript([records], ExitReason.GATED_BYPASS)
            else:
                transcript = deliberate(
                    problem, _build_transcript([records], None), recorder, config, personas, library
                )
            master_plan = synthesize(problem, transcript, recorder, library)
            code = generate_code(problem, master_plan, recorder, library)
        else:
            code = generate_code(problem, None, recorder, library)
        if config.enable_debugger:
            outcome = debug_loop(problem, code, recorder, sandbox, config, library)
            code = outcome.final_code
            debug_iterations = outcome.iterations_used
        hidden_report = sandbox.run_tests(
            problem, code, problem.hidden_tests, config.sandbox_timeout, config.stderr_truncation
        )
        passed = hidden_report.all_passed
    except CodeCouncilError as exc:
        failure = f"{type(exc).__name__}: {exc}"
        logger.warning("problem %s failed: %s", problem.id, failure)
    ledger = recorder.snapshot_ledger()
    metrics = RunMetrics(
        api_calls=ledger.total_calls,
        prompt_tokens=ledger.total_prompt_tokens,
        completion_tokens=ledger.total_completion_tokens,
        passed=passed,
        per_stage_calls={stage: usage.calls for stage, usage in ledger.per_stage.items()},
    )
    return PipelineResult(
        problem_id=problem.id,
        passed=passed,
        final_code=code,
        transcript=transcript,
        master_plan=master_plan,
        hidden_report=hidden_report,
        debug_iterations=debug_iterations,
        call_pattern=recorder.call_sequence,
        metrics=metrics,
        failure=failure,
    )
