"""Verifier-guided hybrid step-level search over remote LLM backends."""

from .accounting import ModelProfile, UsageStats, accumulate, flops_estimate
from .aggregate import (
    PassVerdict,
    ReasoningPath,
    fallback_equivalent,
    maj_at_k,
    pass_at_k,
    rm_at_k,
    solution_prm_sum,
)
from .backends import (
    Generation,
    GenerationRequest,
    HttpPolicyClient,
    HttpVerifierClient,
    MockPolicy,
    MockVerifier,
    ScriptedResponse,
    load_mock_fixture,
    make_mock_policy,
    make_mock_verifier,
)
from .config import RunConfig, load_config
from .grading import GradeResponse, GraderClient, GraderUnavailable
from .harness import QuestionRecord, Report, RunManifest, build_report, load_dataset, make_manifest, run
from .refine import (
    RefinementConfig,
    RefinementTrace,
    refine_solution,
    refine_step,
    should_reflect,
    should_stop,
)
from .search import Node, QuestionRun, SearchConfig, Tree, expand_step, puct_score, run_question, select_best
from .stepgen import (
    ExtractedAnswer,
    SamplingParams,
    StepDelimiterPolicy,
    extract_answer,
    is_terminal,
    next_step,
    split_steps,
)

__version__ = "0.1.0"
