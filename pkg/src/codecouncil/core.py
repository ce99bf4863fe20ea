"""Domain types and pipeline configuration.

Every type here is a frozen dataclass: once constructed it is a plain value
that can be shared across concurrently running pipelines without locks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping

from .errors import ConfigError, InvalidAblation


class ProblemSource(Enum):
    HUMANEVAL = "humaneval"
    HUMANEVAL_ET = "humaneval_et"
    MBPP = "mbpp"
    MBPP_ET = "mbpp_et"
    CUSTOM = "custom"


class Role(Enum):
    UA = "UA"
    TA = "TA"
    QA = "QA"
    SYNTHESIZER = "synthesizer"
    CODER = "coder"
    REVIEWER = "reviewer"
    DEBUGGER = "debugger"


#: The debating personas, in the canonical ordering used everywhere a round is
#: rendered or stored.
DEBATE_ROLES: tuple[Role, ...] = (Role.UA, Role.TA, Role.QA)


class Stage(Enum):
    """Pipeline stage a backend call is accounted under."""

    INITIAL_PLAN = "initial_plan"
    DELIBERATION = "deliberation"
    SYNTHESIS = "synthesis"
    CODEGEN = "codegen"
    REVIEW = "review"
    DEBUG = "debug"


class ExitReason(Enum):
    GATED_BYPASS = "gated_bypass"
    EARLY_CONSENSUS = "early_consensus"
    ROUND_CAP_REACHED = "round_cap_reached"


class Extraction(Enum):
    FENCED_BLOCK = "fenced_block"
    WHOLE_COMPLETION = "whole_completion"


class Outcome(Enum):
    PASS = "pass"
    FAIL = "fail"
    ERROR = "error"
    TIMEOUT = "timeout"


def _mean(values: list[float]) -> float:
    # fsum is exactly rounded, so the result is permutation-invariant.
    return math.fsum(values) / len(values)


@dataclass(frozen=True)
class ProblemInstance:
    """One benchmark task.

    ``visible_tests`` are the snippets the debugging loop may run and show to
    agents; ``hidden_tests`` exist only for the final verdict and are never
    rendered into any prompt.
    """

    id: str
    source: ProblemSource
    prompt: str
    entry_point: str | None = None
    visible_tests: tuple[str, ...] = ()
    hidden_tests: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("problem id must be non-empty")
        if not isinstance(self.prompt, str) or not self.prompt.strip():
            raise ValueError(f"problem {self.id!r} has an empty prompt")
        object.__setattr__(self, "visible_tests", tuple(self.visible_tests))
        object.__setattr__(self, "hidden_tests", tuple(self.hidden_tests))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "source": self.source.value,
            "prompt": self.prompt,
            "entry_point": self.entry_point,
            "visible_tests": list(self.visible_tests),
            "hidden_tests": list(self.hidden_tests),
        }

    @classmethod
    def from_dict(cls, record: Mapping[str, Any]) -> "ProblemInstance":
        return cls(
            id=record["id"],
            source=ProblemSource(record.get("source", "custom")),
            prompt=record["prompt"],
            entry_point=record.get("entry_point"),
            visible_tests=tuple(record.get("visible_tests", ())),
            hidden_tests=tuple(record.get("hidden_tests", ())),
        )


@dataclass(frozen=True)
class AgentPersona:
    """A role plus the priority statement injected into that role's prompts."""

    role: Role
    focus: str

    def __post_init__(self) -> None:
        if not self.focus.strip():
            raise ValueError("persona focus must be non-empty")


def default_personas() -> dict[Role, AgentPersona]:
    """One persona per role, with the standard priority framings."""
    personas = (
        AgentPersona(
            Role.UA,
            "Functionality Completeness and Usability: the solution must satisfy "
            "every stated requirement and expose a clear, intuitive interface.",
        ),
        AgentPersona(
            Role.TA,
            "Technical Feasibility and Performance Efficiency: the approach must "
            "be algorithmically sound, with data structures and patterns chosen "
            "for good time and space complexity.",
        ),
        AgentPersona(
            Role.QA,
            "Robustness and Reliability: inputs must be validated and boundary "
            "conditions, edge cases, and error handling covered thoroughly.",
        ),
        AgentPersona(
            Role.SYNTHESIZER,
            "Neutral integration: merge the council's plans into one "
            "self-consistent roadmap, keeping the most robust, efficient, and "
            "functionally complete components.",
        ),
        AgentPersona(Role.CODER, "Faithful implementation of the master plan as runnable code."),
        AgentPersona(Role.REVIEWER, "Failure diagnosis: explain why tests fail and exactly what to change."),
        AgentPersona(Role.DEBUGGER, "Targeted correction: the smallest change that makes the tests pass."),
    )
    return {persona.role: persona for persona in personas}


@dataclass(frozen=True)
class PlanRecord:
    """One agent's plan and self-assessed confidence for one round."""

    author: Role
    round: int
    plan_text: str
    confidence: float

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")
        if not self.plan_text:
            raise ValueError("plan_text must be non-empty")
        # NaN fails both comparisons, so it is rejected here too.
        if not (0 <= self.confidence <= 100):
            raise ValueError(f"confidence must lie in [0, 100], got {self.confidence!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "author": self.author.value,
            "round": self.round,
            "plan_text": self.plan_text,
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class DebateTranscript:
    """Per-round plan records plus the collective confidence of each round.

    ``exit_reason`` is ``None`` while the debate is still in progress and set
    exactly once when the transcript is finalized.
    """

    rounds: tuple[tuple[PlanRecord, ...], ...]
    collective_confidence: tuple[float, ...]
    exit_reason: ExitReason | None = None

    def __post_init__(self) -> None:
        if not self.rounds:
            raise ValueError("a transcript holds at least one round")
        if len(self.collective_confidence) != len(self.rounds):
            raise ValueError("one collective confidence per round is required")
        for index, (records, gamma) in enumerate(zip(self.rounds, self.collective_confidence), start=1):
            roles = tuple(record.author for record in records)
            if roles != DEBATE_ROLES:
                raise ValueError(
                    f"round {index} must hold exactly one plan per debating persona "
                    f"in UA, TA, QA order, got {[r.value for r in roles]}"
                )
            if any(record.round != index for record in records):
                raise ValueError(f"round {index} contains records numbered for another round")
            expected = _mean([record.confidence for record in records])
            if gamma != expected:
                raise ValueError(
                    f"round {index} collective confidence {gamma} does not equal the mean {expected}"
                )
        if self.exit_reason is ExitReason.GATED_BYPASS and len(self.rounds) != 1:
            raise ValueError("a gated bypass ends the debate after round 1")

    @property
    def round_count(self) -> int:
        return len(self.rounds)

    @property
    def terminal_round(self) -> tuple[PlanRecord, ...]:
        return self.rounds[-1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "rounds": [[record.to_dict() for record in records] for records in self.rounds],
            "collective_confidence": list(self.collective_confidence),
            "exit_reason": self.exit_reason.value if self.exit_reason else None,
        }


@dataclass(frozen=True)
class MasterPlan:
    """The single synthesized plan that drives code generation."""

    text: str
    source_round: int

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError("master plan text must be non-empty")
        if self.source_round < 1:
            raise ValueError(f"source_round must be >= 1, got {self.source_round}")

    def to_dict(self) -> dict[str, Any]:
        return {"text": self.text, "source_round": self.source_round}


@dataclass(frozen=True)
class CandidateCode:
    """A generated program; ``revision`` counts debug rewrites (0 = first generation)."""

    source: str
    extraction: Extraction
    revision: int = 0

    def __post_init__(self) -> None:
        if not self.source.strip():
            raise ValueError("candidate source must be non-empty")
        if self.revision < 0:
            raise ValueError(f"revision must be >= 0, got {self.revision}")

    def to_dict(self) -> dict[str, Any]:
        return {"source": self.source, "extraction": self.extraction.value, "revision": self.revision}


@dataclass(frozen=True)
class TestResult:
    test_id: str
    outcome: Outcome
    stderr_excerpt: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {"test_id": self.test_id, "outcome": self.outcome.value, "stderr_excerpt": self.stderr_excerpt}


@dataclass(frozen=True)
class TestReport:
    """Structured outcome of running one batch of test snippets."""

    per_test: tuple[TestResult, ...]
    all_passed: bool
    wall_time: float

    def __post_init__(self) -> None:
        expected = all(result.outcome is Outcome.PASS for result in self.per_test)
        if self.all_passed != expected:
            raise ValueError("all_passed must equal 'every per-test outcome is Pass'")

    @classmethod
    def from_results(cls, results: tuple[TestResult, ...], wall_time: float) -> "TestReport":
        return cls(
            per_test=tuple(results),
            all_passed=all(result.outcome is Outcome.PASS for result in results),
            wall_time=wall_time,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_test": [result.to_dict() for result in self.per_test],
            "all_passed": self.all_passed,
            "wall_time": self.wall_time,
        }


@dataclass(frozen=True)
class ReviewAnalysis:
    """The reviewer's two outputs: why the tests fail and what to change."""

    cause_analysis: str
    fix_plan: str

    def __post_init__(self) -> None:
        if not self.cause_analysis.strip() or not self.fix_plan.strip():
            raise ValueError("cause_analysis and fix_plan must both be non-empty")

    def to_dict(self) -> dict[str, Any]:
        return {"cause_analysis": self.cause_analysis, "fix_plan": self.fix_plan}


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for one pipeline run; validation happens at construction."""

    tau: float = 95.0
    max_rounds: int = 3
    max_debug_iterations: int = 5
    enable_debate: bool = True
    enable_reviewer: bool = True
    enable_debugger: bool = True
    sandbox_timeout: float = 10.0
    stderr_truncation: int = 4096
    parse_retries: int = 2

    def __post_init__(self) -> None:
        if not (0 <= self.tau <= 100):
            raise ConfigError(f"tau must lie in [0, 100], got {self.tau!r}")
        if self.max_rounds < 1:
            raise ConfigError(f"max_rounds must be >= 1, got {self.max_rounds}")
        if self.max_debug_iterations < 0:
            raise ConfigError(f"max_debug_iterations must be >= 0, got {self.max_debug_iterations}")
        if self.sandbox_timeout <= 0:
            raise ConfigError(f"sandbox_timeout must be positive, got {self.sandbox_timeout}")
        if self.stderr_truncation < 0:
            raise ConfigError(f"stderr_truncation must be >= 0, got {self.stderr_truncation}")
        if self.parse_retries < 0:
            raise ConfigError(f"parse_retries must be >= 0, got {self.parse_retries}")
        if self.enable_reviewer and not self.enable_debugger:
            raise InvalidAblation("a reviewer without a debugger has no consumer")

    def fingerprint(self) -> str:
        """Identifies one ablation row: the three toggles plus tau and the round cap."""
        return (
            f"debate={int(self.enable_debate)},reviewer={int(self.enable_reviewer)},"
            f"debugger={int(self.enable_debugger)},tau={self.tau:g},R={self.max_rounds}"
        )


def default_config() -> PipelineConfig:
    """The standard configuration: tau=95, R=3, every module enabled."""
    return PipelineConfig()


def ablation_config(debate: bool, reviewer: bool, debugger: bool) -> PipelineConfig:
    """A default config with the three module toggles set.

    All-false reproduces the direct baseline (a single generation call).
    Raises InvalidAblation for reviewer-without-debugger.
    """
    return replace(default_config(), enable_debate=debate, enable_reviewer=reviewer, enable_debugger=debugger)


@dataclass(frozen=True)
class RunMetrics:
    """Per-problem accounting: call and token totals plus the per-stage call split."""

    api_calls: int
    prompt_tokens: int
    completion_tokens: int
    passed: bool
    per_stage_calls: Mapping[Stage, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if min((self.api_calls, self.prompt_tokens, self.completion_tokens), default=0) < 0:
            raise ValueError("counters must be non-negative")
        if any(count < 0 for count in self.per_stage_calls.values()):
            raise ValueError("per-stage counts must be non-negative")
        if self.api_calls != sum(self.per_stage_calls.values()):
            raise ValueError("api_calls must equal the sum of per-stage counts")

    def to_dict(self) -> dict[str, Any]:
        return {
            "api_calls": self.api_calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "passed": self.passed,
            "per_stage_calls": {stage.value: count for stage, count in self.per_stage_calls.items()},
        }
