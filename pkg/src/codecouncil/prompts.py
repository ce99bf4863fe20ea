"""Prompt rendering and structured-response parsing.

This is the single place where free text becomes typed data. All renderers
are pure functions of their inputs; templates live in plain-text files so
operators can swap the wording without touching code.

Response contracts:
  * planning/deliberation replies end with a fenced JSON object
    ``{"plan": str, "confidence": number}``;
  * reviewer replies end with a fenced JSON object
    ``{"cause_analysis": str, "fix_plan": str}``;
  * code replies carry the program in a fenced block (first block wins).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .core import (
    DEBATE_ROLES,
    AgentPersona,
    CandidateCode,
    Extraction,
    MasterPlan,
    PlanRecord,
    ProblemInstance,
    ReviewAnalysis,
    Role,
    Stage,
    TestReport,
)
from .errors import EmptyCompletion, ParseFailure, PromptError

#: Placeholder vocabulary templates may reference. Rendering substitutes these
#: tokens only; every other brace (e.g. the JSON format example) passes through.
PLACEHOLDERS = ("problem", "persona_focus", "peer_plans", "master_plan", "code", "test_log", "analysis")

TEMPLATE_FILES: dict[Stage, str] = {
    Stage.INITIAL_PLAN: "initial_plan.txt",
    Stage.DELIBERATION: "deliberation.txt",
    Stage.SYNTHESIS: "synthesis.txt",
    Stage.CODEGEN: "codegen.txt",
    Stage.REVIEW: "reviewer.txt",
    Stage.DEBUG: "debugger.txt",
}

DEFAULT_STDERR_LIMIT = 4096

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")
_FENCE_RE = re.compile(r"```[ \t]*[a-zA-Z0-9_+.-]*[ \t]*\r?\n(.*?)```", re.DOTALL)


@dataclass(frozen=True)
class PromptTemplate:
    """One stage's skeleton text with named placeholders."""

    stage: Stage
    skeleton: str

    def placeholders(self) -> tuple[str, ...]:
        return tuple(dict.fromkeys(_PLACEHOLDER_RE.findall(self.skeleton)))

    def render(self, values: Mapping[str, str]) -> str:
        def substitute(match: re.Match[str]) -> str:
            name = match.group(1)
            if name not in values:
                raise PromptError(f"template {self.stage.value!r} references unfilled placeholder {{{name}}}")
            return values[name]

        return _PLACEHOLDER_RE.sub(substitute, self.skeleton)


class PromptLibrary:
    """The six stage templates, loaded from a directory of plain-text files."""

    def __init__(self, templates: Mapping[Stage, PromptTemplate]):
        missing = [stage.value for stage in TEMPLATE_FILES if stage not in templates]
        if missing:
            raise PromptError(f"prompt library is missing templates for: {', '.join(missing)}")
        self._templates = dict(templates)

    def template(self, stage: Stage) -> PromptTemplate:
        return self._templates[stage]

    @classmethod
    def load(cls, directory: str | Path | None = None) -> "PromptLibrary":
        """Load templates from ``directory``, or the packaged defaults when omitted."""
        templates: dict[Stage, PromptTemplate] = {}
        if directory is None:
            root = resources.files(__package__) / "templates"
            for stage, filename in TEMPLATE_FILES.items():
                templates[stage] = PromptTemplate(stage, (root / filename).read_text(encoding="utf-8"))
            return cls(templates)
        base = Path(directory)
        for stage, filename in TEMPLATE_FILES.items():
            path = base / filename
            if not path.is_file():
                raise PromptError(f"template file not found: {path}")
            templates[stage] = PromptTemplate(stage, path.read_text(encoding="utf-8"))
        return cls(templates)


_default_library: PromptLibrary | None = None


def default_library() -> PromptLibrary:
    global _default_library
    if _default_library is None:
        _default_library = PromptLibrary.load()
    return _default_library


def _lib(library: PromptLibrary | None) -> PromptLibrary:
    return library if library is not None else default_library()


def format_problem(problem: ProblemInstance) -> str:
    """The problem block shared by every renderer: statement, entry point, examples."""
    parts = [problem.prompt.rstrip()]
    if problem.entry_point:
        parts.append(f"Required entry point: {problem.entry_point}")
    if problem.visible_tests:
        parts.append("Known example tests:\n" + "\n".join(problem.visible_tests))
    return "\n\n".join(parts)


def _format_peer_plans(records: Sequence[PlanRecord]) -> str:
    by_role: dict[Role, PlanRecord] = {}
    for record in records:
        if record.author in by_role:
            raise PromptError(f"duplicate plan for role {record.author.value}")
        by_role[record.author] = record
    sections = []
    for role in DEBATE_ROLES:
        record = by_role.pop(role, None)
        if record is None:
            raise PromptError(f"missing plan for role {role.value}")
        sections.append(f"[{role.value} | confidence {record.confidence:g}]\n{record.plan_text}")
    if by_role:
        extras = ", ".join(role.value for role in by_role)
        raise PromptError(f"unexpected plans from non-debating roles: {extras}")
    return "\n\n".join(sections)


def _format_test_log(report: TestReport, stderr_limit: int) -> str:
    if not report.per_test:
        return "(no tests were executed)"
    lines = []
    for result in report.per_test:
        lines.append(f"{result.test_id}: {result.outcome.value.upper()}")
        if result.stderr_excerpt:
            # Keep the tail: tracebacks put the failing assertion last.
            lines.append(result.stderr_excerpt[-stderr_limit:] if stderr_limit else "")
    return "\n".join(lines)


def _format_code(code: CandidateCode) -> str:
    return f"```\n{code.source}\n```"


def render_planning(
    problem: ProblemInstance, persona: AgentPersona, library: PromptLibrary | None = None
) -> str:
    """Round-1 prompt: the task plus the persona's focus, demanding plan + confidence."""
    if persona.role not in DEBATE_ROLES:
        raise PromptError(f"planning prompts are for debating personas, not {persona.role.value}")
    return _lib(library).template(Stage.INITIAL_PLAN).render(
        {"problem": format_problem(problem), "persona_focus": persona.focus}
    )


def render_deliberation(
    problem: ProblemInstance,
    peer_plans: Sequence[PlanRecord],
    persona: AgentPersona,
    library: PromptLibrary | None = None,
) -> str:
    """Round r > 1 prompt embedding the complete previous round, in UA, TA, QA order."""
    if persona.role not in DEBATE_ROLES:
        raise PromptError(f"deliberation prompts are for debating personas, not {persona.role.value}")
    return _lib(library).template(Stage.DELIBERATION).render(
        {
            "problem": format_problem(problem),
            "persona_focus": persona.focus,
            "peer_plans": _format_peer_plans(peer_plans),
        }
    )


def render_synthesis(
    problem: ProblemInstance,
    terminal_plans: Sequence[PlanRecord],
    library: PromptLibrary | None = None,
) -> str:
    """Fusion prompt over the terminal round's full plan set."""
    if not terminal_plans:
        raise PromptError("synthesis needs at least one round of plans")
    return _lib(library).template(Stage.SYNTHESIS).render(
        {"problem": format_problem(problem), "peer_plans": _format_peer_plans(terminal_plans)}
    )


def render_codegen(
    problem: ProblemInstance,
    master_plan: MasterPlan | None = None,
    library: PromptLibrary | None = None,
) -> str:
    """Code-generation prompt; without a master plan it is the direct baseline prompt."""
    if master_plan is None:
        plan_block = "There is no separate plan. Implement directly from the task statement above."
    else:
        plan_block = "Master plan (follow it as the definitive instruction set):\n" + master_plan.text
    return _lib(library).template(Stage.CODEGEN).render(
        {"problem": format_problem(problem), "master_plan": plan_block}
    )


def render_reviewer(
    problem: ProblemInstance,
    code: CandidateCode,
    report: TestReport,
    stderr_limit: int = DEFAULT_STDERR_LIMIT,
    library: PromptLibrary | None = None,
) -> str:
    """Reviewer prompt over the triplet: problem, candidate code, test log."""
    if report.all_passed:
        raise PromptError("the reviewer only sees failing reports")
    return _lib(library).template(Stage.REVIEW).render(
        {
            "problem": format_problem(problem),
            "code": _format_code(code),
            "test_log": _format_test_log(report, stderr_limit),
        }
    )


def render_debugger(
    problem: ProblemInstance,
    code: CandidateCode,
    report: TestReport,
    analysis: ReviewAnalysis | None = None,
    stderr_limit: int = DEFAULT_STDERR_LIMIT,
    library: PromptLibrary | None = None,
) -> str:
    """Debugger prompt; embeds the reviewer analysis when one exists."""
    if report.all_passed:
        raise PromptError("the debugger only sees failing reports")
    if analysis is None:
        analysis_block = ""
    else:
        analysis_block = (
            "Reviewer analysis.\n"
            f"Cause: {analysis.cause_analysis}\n"
            f"Fix plan: {analysis.fix_plan}"
        )
    return _lib(library).template(Stage.DEBUG).render(
        {
            "problem": format_problem(problem),
            "code": _format_code(code),
            "test_log": _format_test_log(report, stderr_limit),
            "analysis": analysis_block,
        }
    )


def _fenced_blocks(text: str) -> list[str]:
    return [match.group(1) for match in _FENCE_RE.finditer(text)]


def _last_json_object(text: str) -> dict | None:
    for block in reversed(_fenced_blocks(text)):
        try:
            obj = json.loads(block)
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            obj = json.loads(stripped)
        except json.JSONDecodeError:
            return None
        if isinstance(obj, dict):
            return obj
    return None


def parse_plan_response(text: str) -> tuple[str, float]:
    """Extract ``(plan_text, confidence)`` from a planning/deliberation reply.

    Raises ParseFailure on a missing structure, missing field, or a
    confidence outside [0, 100]; the caller owns retry and fallback policy.
    """
    obj = _last_json_object(text)
    if obj is None:
        raise ParseFailure("no JSON object found in the reply")
    plan = obj.get("plan")
    confidence = obj.get("confidence")
    if not isinstance(plan, str) or not plan.strip():
        raise ParseFailure("reply lacks a non-empty 'plan' field")
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise ParseFailure("reply lacks a numeric 'confidence' field")
    if not (0 <= confidence <= 100):
        raise ParseFailure(f"confidence {confidence} lies outside [0, 100]")
    return plan, float(confidence)


def parse_review_response(text: str) -> ReviewAnalysis:
    """Extract the reviewer's cause analysis and fix plan from a reply."""
    obj = _last_json_object(text)
    if obj is None:
        raise ParseFailure("no JSON object found in the reply")
    cause = obj.get("cause_analysis")
    fix = obj.get("fix_plan")
    if not isinstance(cause, str) or not cause.strip():
        raise ParseFailure("reply lacks a non-empty 'cause_analysis' field")
    if not isinstance(fix, str) or not fix.strip():
        raise ParseFailure("reply lacks a non-empty 'fix_plan' field")
    return ReviewAnalysis(cause_analysis=cause, fix_plan=fix)


def extract_code(text: str) -> CandidateCode:
    """Pull the program out of a completion.

    The first non-empty fenced block wins (later blocks are typically example
    usage); with no usable fence the whole completion is the program.
    """
    if not text or not text.strip():
        raise EmptyCompletion("completion is blank")
    for block in _fenced_blocks(text):
        source = block.strip("\n").rstrip()
        if source.strip():
            return CandidateCode(source=source, extraction=Extraction.FENCED_BLOCK, revision=0)
    return CandidateCode(source=text.strip(), extraction=Extraction.WHOLE_COMPLETION, revision=0)
