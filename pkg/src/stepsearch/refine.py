"""Verifier-gated self-refinement at step level and at solution level.

The state machine: reflection only runs when the verifier score is below
the skip threshold; each iteration critiques the current text, rewrites it,
scores the rewrite, and (under the prm_cover rule) adopts it only on strict
improvement over the best score so far. It stops when the best score passes
the stop threshold, when the iteration budget is spent, or when the score
gain over the last ``gap_window`` iterations stays below ``gap_min``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import accounting
from .accounting import UsageStats
from .backends import (
    GenerationRequest,
    PolicyBackend,
    ROLE_CRITIQUE,
    ROLE_REWRITE,
    VerifierBackend,
)
from .errors import ConfigError
from .prompts import PromptSet
from .stepgen import SamplingParams, StepDelimiterPolicy, build_context, split_steps

UPDATE_PRM_COVER = "prm_cover"
UPDATE_COVER = "cover"

STOP_SKIPPED = "skipped_high_confidence"
STOP_SCORE = "score_exceeded"
STOP_GAP = "gap_stalled"
STOP_MAX = "max_iterations"
STOP_ACCEPTED = "accepted_then_threshold"

# The critic prompt demands a short reflection; this cap enforces it with headroom.
CRITIQUE_MAX_TOKENS = 200


@dataclass(frozen=True)
class RefinementConfig:
    max_iterations: int = 5
    skip_threshold: float = 0.9
    stop_threshold: float = 0.9
    gap_window: int = 2
    gap_min: float = 0.2
    update_rule: str = UPDATE_PRM_COVER

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not 0 <= self.skip_threshold <= 1:
            raise ConfigError("skip_threshold must be in [0, 1]")
        if self.gap_window < 1:
            raise ConfigError("gap_window must be >= 1")
        if self.update_rule not in (UPDATE_PRM_COVER, UPDATE_COVER):
            raise ConfigError(f"unknown update_rule {self.update_rule!r}")


@dataclass
class RefinementIteration:
    critique: str
    rewrite: str
    score: float | None
    accepted: bool
    well_formed: bool = True

    def to_dict(self) -> dict:
        return {
            "critique": self.critique,
            "rewrite": self.rewrite,
            "score": self.score,
            "accepted": self.accepted,
            "well_formed": self.well_formed,
        }


@dataclass
class RefinementTrace:
    initial_score: float
    final_text: str
    final_score: float
    stop_reason: str
    iterations: list[RefinementIteration] = field(default_factory=list)

    @property
    def accepted_any(self) -> bool:
        return any(it.accepted for it in self.iterations)

    def to_dict(self) -> dict:
        return {
            "initial_score": self.initial_score,
            "final_text": self.final_text,
            "final_score": self.final_score,
            "stop_reason": self.stop_reason,
            "iterations": [it.to_dict() for it in self.iterations],
        }


def should_reflect(score: float, cfg: RefinementConfig) -> bool:
    """Reflection triggers strictly below the skip threshold; equality skips."""
    return score < cfg.skip_threshold


def should_stop(history: list[float], cfg: RefinementConfig) -> str | None:
    """Stop decision over the best-so-far score history (index 0 = initial).

    On the final budgeted iteration the budget reason wins over a
    simultaneous gap stall.
    """
    iterations_done = len(history) - 1
    if history[-1] > cfg.stop_threshold:
        return STOP_SCORE
    if iterations_done >= cfg.max_iterations:
        return STOP_MAX
    if len(history) >= cfg.gap_window + 1:
        if history[-1] - history[-1 - cfg.gap_window] < cfg.gap_min:
            return STOP_GAP
    return None


def refine_step(
    question: str,
    prior_steps: list[str],
    step: str,
    score: float,
    cfg: RefinementConfig,
    policy: PolicyBackend,
    verifier: VerifierBackend,
    delim: StepDelimiterPolicy,
    prompts: PromptSet,
    sampling: SamplingParams,
    usage: UsageStats | None = None,
) -> RefinementTrace:
    """Refine one reasoning step given its verifier score."""
    hook = accounting.hook_for(usage)

    def critique_of(current: str) -> str:
        context = build_context(question, prompts.cot, [*prior_steps, current, prompts.critic], delim)
        request = GenerationRequest(
            context_text=context,
            stop_sequences=[],
            max_new_tokens=CRITIQUE_MAX_TOKENS,
            role=ROLE_CRITIQUE,
        )
        gen = policy.generate(request, hook)
        if usage is not None:
            accounting.accumulate(usage, gen, ROLE_CRITIQUE)
        return gen.text.strip()

    def rewrite_of(current: str, critique: str) -> str:
        context = build_context(
            question, prompts.cot, [*prior_steps, current, prompts.critic, critique, prompts.rewrite], delim
        )
        request = GenerationRequest(
            context_text=context,
            stop_sequences=[delim.pause_delimiter],
            max_new_tokens=sampling.max_new_tokens,
            temperature=sampling.temperature,
            role=ROLE_REWRITE,
        )
        gen = policy.generate(request, hook)
        if usage is not None:
            accounting.accumulate(usage, gen, ROLE_REWRITE)
        return gen.text.strip()

    def score_of(rewrite: str) -> tuple[float, bool]:
        # A rewrite is scored as raw text even when it is not a clean single
        # step; the trace flags it instead of filtering it out.
        well_formed = delim.pause_delimiter not in rewrite
        value = verifier.score_steps(question, [*prior_steps, rewrite], hook)[-1]
        return value, well_formed

    return _refine_loop(step, score, cfg, critique_of, rewrite_of, score_of)


def refine_solution(
    question: str,
    solution: str,
    cfg: RefinementConfig,
    policy: PolicyBackend,
    verifier: VerifierBackend,
    delim: StepDelimiterPolicy,
    prompts: PromptSet,
    sampling: SamplingParams,
    usage: UsageStats | None = None,
) -> RefinementTrace:
    """Whole-solution refinement; a solution's score is its final step's score."""
    hook = accounting.hook_for(usage)

    def solution_score(text: str) -> float:
        steps = split_steps(text, delim)
        if not steps:
            raise ValueError("cannot score an empty solution")
        return verifier.score_steps(question, steps, hook)[-1]

    def critique_of(current: str) -> str:
        context = build_context(question, prompts.cot, [current, prompts.critic], delim)
        request = GenerationRequest(
            context_text=context,
            stop_sequences=[],
            max_new_tokens=CRITIQUE_MAX_TOKENS,
            role=ROLE_CRITIQUE,
        )
        gen = policy.generate(request, hook)
        if usage is not None:
            accounting.accumulate(usage, gen, ROLE_CRITIQUE)
        return gen.text.strip()

    def rewrite_of(current: str, critique: str) -> str:
        context = build_context(
            question, prompts.cot, [current, prompts.critic, critique, prompts.rewrite], delim
        )
        request = GenerationRequest(
            context_text=context,
            stop_sequences=[],
            max_new_tokens=sampling.max_new_tokens,
            temperature=sampling.temperature,
            role=ROLE_REWRITE,
        )
        gen = policy.generate(request, hook)
        if usage is not None:
            accounting.accumulate(usage, gen, ROLE_REWRITE)
        return gen.text.strip()

    def score_of(rewrite: str) -> tuple[float, bool]:
        steps = split_steps(rewrite, delim)
        if not steps:
            raise ValueError("rewrite produced no scoreable steps")
        return verifier.score_steps(question, steps, hook)[-1], True

    initial = solution_score(solution)
    return _refine_loop(solution, initial, cfg, critique_of, rewrite_of, score_of)


def _refine_loop(
    text: str,
    initial_score: float,
    cfg: RefinementConfig,
    critique_of: Callable[[str], str],
    rewrite_of: Callable[[str, str], str],
    score_of: Callable[[str], tuple[float, bool]],
) -> RefinementTrace:
    if not should_reflect(initial_score, cfg):
        return RefinementTrace(
            initial_score=initial_score,
            final_text=text,
            final_score=initial_score,
            stop_reason=STOP_SKIPPED,
        )

    best_text, best_score = text, initial_score
    last_text, last_score = text, initial_score
    current = text
    history = [initial_score]
    iterations: list[RefinementIteration] = []
    stop_reason = STOP_MAX

    while True:
        critique = critique_of(current)
        rewrite = rewrite_of(current, critique) if critique else ""
        if not rewrite:
            # Degenerate output: recorded, not accepted, consumes the iteration.
            iterations.append(RefinementIteration(critique=critique, rewrite=rewrite,
                                                  score=None, accepted=False, well_formed=False))
            history.append(best_score)
        else:
            score, well_formed = score_of(rewrite)
            accepted = score > best_score
            if accepted:
                best_text, best_score = rewrite, score
            last_text, last_score = rewrite, score
            iterations.append(RefinementIteration(critique=critique, rewrite=rewrite,
                                                  score=score, accepted=accepted,
                                                  well_formed=well_formed))
            history.append(best_score)

        if cfg.update_rule == UPDATE_PRM_COVER:
            current = best_text
        else:
            current = last_text

        reason = should_stop(history, cfg)
        if reason is not None:
            if reason == STOP_SCORE and iterations[-1].accepted:
                reason = STOP_ACCEPTED
            stop_reason = reason
            break

    if cfg.update_rule == UPDATE_PRM_COVER:
        final_text, final_score = best_text, best_score
    else:
        final_text, final_score = last_text, last_score
    return RefinementTrace(
        initial_score=initial_score,
        final_text=final_text,
        final_score=final_score,
        stop_reason=stop_reason,
        iterations=iterations,
    )
