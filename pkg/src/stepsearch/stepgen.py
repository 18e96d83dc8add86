"""Step-granular generation control, terminal detection and answer extraction.

Generation pauses at a step delimiter (default a blank line), the context is
re-extended with a resume suffix (default a single newline), and the loop
ends at the backend's end-of-sequence or once a well-formed boxed answer
appears. Answers are read from the last balanced ``boxed{...}`` occurrence,
since rewrites may restate earlier boxed values.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .backends import (
    FINISH_EOS,
    Generation,
    GenerationRequest,
    PolicyBackend,
    ROLE_STEP,
    UsageHook,
)
from .errors import ConfigError, StepGenerationError
from .prompts import MATH_BOXED, MULTIPLE_CHOICE

_BOXED_RE = re.compile(r"\\?boxed\s*\{")
_TRAILING_PUNCT = ".,;:!?"


@dataclass(frozen=True)
class StepDelimiterPolicy:
    pause_delimiter: str = "\n\n"
    resume_suffix: str = "\n"
    terminator_token: str = "<eos>"

    def __post_init__(self) -> None:
        if not self.pause_delimiter:
            raise ConfigError("pause_delimiter must be non-empty")
        # A resume suffix that already contains the pause delimiter would end
        # the next step immediately with empty text.
        if self.pause_delimiter in self.resume_suffix:
            raise ConfigError("resume_suffix must not contain the pause delimiter")


@dataclass(frozen=True)
class SamplingParams:
    max_new_tokens: int = 512
    temperature: float | None = None


@dataclass(frozen=True)
class ExtractedAnswer:
    raw: str
    normalized: str
    kind: str


def split_steps(solution_text: str, delim: StepDelimiterPolicy) -> list[str]:
    """Split on the pause delimiter, dropping empty or whitespace-only parts."""
    parts = [p.strip() for p in solution_text.split(delim.pause_delimiter)]
    return [p for p in parts if p]


def join_steps(steps: list[str], delim: StepDelimiterPolicy) -> str:
    return delim.pause_delimiter.join(steps)


def build_context(
    question: str, cot_prompt: str, prior_steps: list[str], delim: StepDelimiterPolicy
) -> str:
    """Question, chain-of-thought prompt, then prior steps, resume suffix last."""
    blocks = [question]
    if cot_prompt:
        blocks.append(cot_prompt)
    blocks.extend(prior_steps)
    return delim.pause_delimiter.join(blocks) + delim.resume_suffix


def next_step(
    question: str,
    prior_steps: list[str],
    policy: PolicyBackend,
    delim: StepDelimiterPolicy,
    sampling: SamplingParams,
    *,
    cot_prompt: str = "",
    usage_hook: UsageHook | None = None,
) -> Generation:
    """Generate exactly one reasoning step continuing ``prior_steps``.

    An empty step (after trimming) is resampled once; a second empty result
    raises StepGenerationError.
    """
    for step in prior_steps:
        if delim.pause_delimiter in step:
            raise ValueError("a prior step contains the pause delimiter")

    request = GenerationRequest(
        context_text=build_context(question, cot_prompt, prior_steps, delim),
        stop_sequences=[delim.pause_delimiter],
        max_new_tokens=sampling.max_new_tokens,
        temperature=sampling.temperature,
        want_logprobs=True,
        role=ROLE_STEP,
    )
    for _ in range(2):
        gen = policy.generate(request, usage_hook)
        text = gen.text.strip()
        if text:
            return replace(gen, text=text)
    raise StepGenerationError("policy produced an empty step twice in a row")


def extract_answer(solution_text: str, kind: str) -> ExtractedAnswer | None:
    """Pull the final answer out of ``boxed{...}``; None when there is none.

    The last occurrence wins; nested braces are matched, so the last regex hit
    is also the innermost. A malformed (unbalanced) trailing occurrence falls
    back to the previous one. Total: never raises on weird input.
    """
    matches = list(_BOXED_RE.finditer(solution_text))
    for match in reversed(matches):
        content = _balanced_braces(solution_text, match.end() - 1)
        if content is None:
            continue
        if kind == MULTIPLE_CHOICE:
            letter = _choice_letter(content)
            if letter is not None:
                return ExtractedAnswer(raw=content, normalized=letter, kind=kind)
        else:
            normalized = normalize_answer(content)
            if normalized:
                return ExtractedAnswer(raw=content, normalized=normalized, kind=MATH_BOXED)
    return None


def normalize_answer(text: str) -> str:
    """Trim, collapse internal whitespace, strip trailing punctuation."""
    out = re.sub(r"\s+", " ", text.strip())
    return out.rstrip(_TRAILING_PUNCT).strip()


def is_terminal(step: Generation, answer_kind: str) -> bool:
    """A path ends at end-of-sequence or when the step carries a final answer."""
    if step.finish == FINISH_EOS:
        return True
    return extract_answer(step.text, answer_kind) is not None


def _balanced_braces(text: str, open_idx: int) -> str | None:
    """Content of the brace pair opening at ``open_idx``, or None if unbalanced."""
    depth = 0
    for i in range(open_idx, len(text)):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[open_idx + 1 : i]
    return None


def _choice_letter(content: str) -> str | None:
    stripped = re.sub(r"[^0-9A-Za-z]", "", content)
    if len(stripped) == 1 and stripped.upper() in "ABCD":
        return stripped.upper()
    return None
