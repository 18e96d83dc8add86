"""Answer aggregation: majority vote, reward-model selection, pass@k.

Paths with a missing answer count toward k but never vote; they still
participate in reward-model selection through their minimum step score.
The verifier-sum of a path doubles as a question difficulty indicator.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .accounting import UsageStats
from .grading import GraderUnavailable
from .prompts import MULTIPLE_CHOICE
from .stepgen import ExtractedAnswer, normalize_answer


@dataclass
class ReasoningPath:
    steps: list[str]
    step_scores: list[float]
    answer: ExtractedAnswer | None
    solution_text: str = ""
    aborted: bool = False
    usage: UsageStats | None = None
    traces: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.steps) != len(self.step_scores):
            raise ValueError("steps and step_scores must have equal length")

    @property
    def min_score(self) -> float:
        """Minimum step score; 0.0 for a path that never produced a step."""
        return min(self.step_scores) if self.step_scores else 0.0

    def to_dict(self) -> dict:
        return {
            "steps": list(self.steps),
            "step_scores": list(self.step_scores),
            "answer": None if self.answer is None else {
                "raw": self.answer.raw,
                "normalized": self.answer.normalized,
                "kind": self.answer.kind,
            },
            "solution_text": self.solution_text,
            "aborted": self.aborted,
            "min_score": self.min_score,
            "traces": self.traces,
        }


@dataclass(frozen=True)
class PassVerdict:
    correct: bool
    fallback_graded: bool


def maj_at_k(paths: list[ReasoningPath]) -> str | None:
    """Most frequent normalized answer; missing answers do not vote.

    Ties go to the answer whose best supporting path has the highest minimum
    step score, then to the lower path index.
    """
    if not paths:
        raise ValueError("maj_at_k needs at least one path")
    votes = [(i, p.answer.normalized) for i, p in enumerate(paths) if p.answer is not None]
    if not votes:
        return None
    counts = Counter(answer for _, answer in votes)
    top = max(counts.values())
    tied = [answer for answer, n in counts.items() if n == top]
    if len(tied) == 1:
        return tied[0]

    def support(answer: str) -> tuple[float, int]:
        best_score, best_idx = -1.0, len(paths)
        for i, a in votes:
            if a == answer:
                score = paths[i].min_score
                if score > best_score:
                    best_score, best_idx = score, i
        return best_score, -best_idx

    return max(tied, key=support)


def rm_at_k(paths: list[ReasoningPath]) -> ReasoningPath:
    """Path with the maximum per-path minimum step score; first wins ties."""
    if not paths:
        raise ValueError("rm_at_k needs at least one path")
    best = paths[0]
    for path in paths[1:]:
        if path.min_score > best.min_score:
            best = path
    return best


def pass_at_k(paths: list[ReasoningPath], gold: str, kind: str, grader=None) -> PassVerdict:
    """True when any path's answer grades as equivalent to gold.

    ``grader`` exposes ``grade(gold, predicted, kind)`` returning an object
    with an ``equivalent`` flag and raises GraderUnavailable when dead; the
    built-in normalizer then takes over and the verdict is flagged.
    """
    fallback = grader is None
    correct = False
    for path in paths:
        if path.answer is None:
            continue
        predicted = path.answer.normalized
        if not fallback:
            try:
                if grader.grade(gold, predicted, kind).equivalent:
                    correct = True
                    break
                continue
            except GraderUnavailable:
                fallback = True
        if fallback_equivalent(gold, predicted, kind):
            correct = True
            break
    return PassVerdict(correct=correct, fallback_graded=fallback)


def solution_prm_sum(path: ReasoningPath) -> float:
    """Sum of a path's step scores (difficulty indicator)."""
    if not path.step_scores:
        raise ValueError("solution_prm_sum needs at least one step score")
    return sum(path.step_scores)


def question_prm_sum(paths: list[ReasoningPath]) -> float | None:
    """Mean solution score-sum over the question's scoreable paths."""
    sums = [solution_prm_sum(p) for p in paths if p.step_scores]
    if not sums:
        return None
    return sum(sums) / len(sums)


def fallback_equivalent(gold: str, predicted: str, kind: str) -> bool:
    """Built-in equivalence: normalized exact match, then numeric at 1e-9."""
    if kind == MULTIPLE_CHOICE:
        return normalize_answer(gold).casefold() == normalize_answer(predicted).casefold()
    a = normalize_answer(gold)
    b = normalize_answer(predicted)
    if a.casefold() == b.casefold():
        return True
    x = _parse_number(a)
    y = _parse_number(b)
    if x is not None and y is not None:
        return abs(x - y) <= 1e-9 * max(1.0, abs(x), abs(y))
    return False


def _parse_number(text: str) -> float | None:
    s = text.strip().replace(",", "").lstrip("$").rstrip("$")
    try:
        return float(s)
    except ValueError:
        pass
    if s.count("/") == 1:
        num, _, den = s.partition("/")
        try:
            d = float(den)
            return float(num) / d if d else None
        except ValueError:
            return None
    return None
