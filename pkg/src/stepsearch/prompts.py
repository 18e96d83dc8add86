"""Default meta-prompt templates.

Three prompt roles drive the engine: the chain-of-thought prompt that opens
every context, the critic prompt that asks for a reflection on a weak piece
of reasoning, and the rewrite prompt that asks for the corrected text.
Step-level and solution-level refinement use different critic prompts, and
multiple-choice questions use a boxed-letter answer format. All values are
plain config data and can be overridden from the run configuration file.
"""

from dataclasses import dataclass

MATH_BOXED = "math_boxed"
MULTIPLE_CHOICE = "multiple_choice_letter"

_COT_MATH = "Please reason step by step, and put your final answer within boxed{}."
_COT_CHOICE = (
    "Please reason step by step, and put your final answer within boxed{LETTER}"
    "(without quotes) where LETTER is one of ABCD."
)

_CRITIC_STEP = (
    "There is a weak reasoning step in the solution, please provide a strict "
    "reflection to correct only this one step with less than 150 tokens. "
    "Don't output the complete solution."
)
_CRITIC_SOLUTION = "There is a weak solution, please provide a strict reflection to correct it."

_REWRITE_MATH = (
    "Please refine the weak answer according to your Reflection. "
    "Not allowed to use code to solve the question. "
    "Please reason step by step, and put your final answer within boxed{}."
)
_REWRITE_CHOICE = (
    "Please refine the weak answer according to your Reflection. "
    "Not allowed to use code to solve the question. "
    "Please reason step by step, and put your final answer within boxed{LETTER}"
    "(without quotes) where LETTER is one of ABCD."
)


@dataclass(frozen=True)
class PromptSet:
    """The three prompts used for one (refinement level, answer kind) pair."""

    cot: str
    critic: str
    rewrite: str


# Keyed by (level, answer_kind); level is "step" or "solution".
DEFAULT_PROMPTS: dict[tuple[str, str], PromptSet] = {
    ("step", MATH_BOXED): PromptSet(_COT_MATH, _CRITIC_STEP, _REWRITE_MATH),
    ("solution", MATH_BOXED): PromptSet(_COT_MATH, _CRITIC_SOLUTION, _REWRITE_MATH),
    ("step", MULTIPLE_CHOICE): PromptSet(_COT_CHOICE, _CRITIC_STEP, _REWRITE_CHOICE),
    ("solution", MULTIPLE_CHOICE): PromptSet(_COT_CHOICE, _CRITIC_SOLUTION, _REWRITE_CHOICE),
}


def prompts_for(level: str, answer_kind: str) -> PromptSet:
    try:
        return DEFAULT_PROMPTS[(level, answer_kind)]
    except KeyError:
        raise KeyError(f"no prompt set for level={level!r} kind={answer_kind!r}") from None
