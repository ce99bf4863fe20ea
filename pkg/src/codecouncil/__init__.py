"""codecouncil: a multi-agent debate pipeline for LLM code generation.

Three persona agents draft plans in parallel, a confidence gate decides
whether they need to deliberate, a synthesis agent fuses the terminal plans
into one master plan that drives code generation, and a reviewer-guided
debugging loop repairs the program against visible tests. A scripted backend
makes every pipeline trace reproducible offline, and the harness evaluates
pass@1 over HumanEval/MBPP-style datasets with exact call and token
accounting.
"""

from .backend import (
    Backend,
    CompletionRequest,
    CompletionResponse,
    HttpBackend,
    RecordingBackend,
    ScriptedBackend,
    ScriptEntry,
    UsageLedger,
    UsageSource,
    http_backend,
    load_script,
    scripted_backend,
)
from .core import (
    DEBATE_ROLES,
    AgentPersona,
    CandidateCode,
    DebateTranscript,
    ExitReason,
    Extraction,
    MasterPlan,
    Outcome,
    PipelineConfig,
    PlanRecord,
    ProblemInstance,
    ProblemSource,
    ReviewAnalysis,
    Role,
    RunMetrics,
    Stage,
    TestReport,
    TestResult,
    ablation_config,
    default_config,
    default_personas,
)
from .harness import (
    BenchmarkReport,
    ReportFormat,
    ablation_sweep,
    emit_report,
    evaluate,
    load_dataset,
    load_humaneval,
    load_mbpp,
    load_report,
)
from .orchestrator import (
    DebugOutcome,
    GateDecision,
    PipelineResult,
    collective_confidence,
    debug_loop,
    deliberate,
    gate,
    generate_code,
    initial_planning,
    run_pipeline,
    synthesize,
)
from .prompts import PromptLibrary, extract_code, parse_plan_response, parse_review_response
from .sandbox import Sandbox, assemble_program, execute, run_tests

__version__ = "0.1.0"

__all__ = [
    "AgentPersona",
    "Backend",
    "BenchmarkReport",
    "CandidateCode",
    "CompletionRequest",
    "CompletionResponse",
    "DEBATE_ROLES",
    "DebateTranscript",
    "DebugOutcome",
    "ExitReason",
    "Extraction",
    "GateDecision",
    "HttpBackend",
    "MasterPlan",
    "Outcome",
    "PipelineConfig",
    "PipelineResult",
    "PlanRecord",
    "ProblemInstance",
    "ProblemSource",
    "PromptLibrary",
    "RecordingBackend",
    "ReportFormat",
    "ReviewAnalysis",
    "Role",
    "RunMetrics",
    "Sandbox",
    "ScriptEntry",
    "ScriptedBackend",
    "Stage",
    "TestReport",
    "TestResult",
    "UsageLedger",
    "UsageSource",
    "ablation_config",
    "ablation_sweep",
    "assemble_program",
    "collective_confidence",
    "debug_loop",
    "default_config",
    "default_personas",
    "deliberate",
    "emit_report",
    "evaluate",
    "execute",
    "extract_code",
    "gate",
    "generate_code",
    "http_backend",
    "initial_planning",
    "load_dataset",
    "load_humaneval",
    "load_mbpp",
    "load_report",
    "load_script",
    "parse_plan_response",
    "parse_review_response",
    "run_pipeline",
    "run_tests",
    "scripted_backend",
    "synthesize",
]
