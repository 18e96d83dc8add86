"""Step-level tree search: sample N candidates, pick one by PUCT, refine it.

One tree is shared across all search paths of a question. Each expansion
samples ``n_samples`` candidate steps from the leaf's context, scores them
with the verifier, merges exact-text duplicates with existing children, and
selects by the PUCT rule; the winner then passes through the conditional
refinement gate. Visit counts are bumped once per finished path along its
route, so they count path traversals, not expansions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import accounting
from .accounting import UsageStats
from .aggregate import ReasoningPath
from .backends import (
    FINISH_LENGTH,
    GenerationRequest,
    PolicyBackend,
    ROLE_SOLUTION,
    ROLE_STEP,
    VerifierBackend,
)
from .errors import ConfigError, ExpansionError, StepGenerationError
from .prompts import MATH_BOXED, PromptSet, prompts_for
from .refine import RefinementConfig, RefinementTrace, refine_solution, refine_step
from .stepgen import (
    SamplingParams,
    StepDelimiterPolicy,
    build_context,
    extract_answer,
    is_terminal,
    join_steps,
    next_step,
    split_steps,
)

MODE_HYBRID = "hybrid"
MODE_MCTS_BON = "mcts_bon"
MODE_BON_REFINE = "bon_refine"
MODE_SOLUTION_LEVEL = "solution_level"
MODE_BEST_OF_1 = "best_of_1"
MODES = (MODE_HYBRID, MODE_MCTS_BON, MODE_BON_REFINE, MODE_SOLUTION_LEVEL, MODE_BEST_OF_1)


@dataclass(frozen=True)
class SearchConfig:
    n_paths: int = 4
    n_samples: int = 4
    c1: float = 1.25
    c2: float = 19652.0
    max_steps: int = 64
    mode: str = MODE_HYBRID
    refinement: RefinementConfig = field(default_factory=RefinementConfig)

    def __post_init__(self) -> None:
        if self.n_paths < 1 or self.n_samples < 1:
            raise ConfigError("n_paths and n_samples must be >= 1")
        if self.c1 <= 0 or self.c2 <= 0:
            raise ConfigError("c1 and c2 must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")

    @property
    def refines(self) -> bool:
        return self.mode in (MODE_HYBRID, MODE_BON_REFINE, MODE_SOLUTION_LEVEL)

    @property
    def effective_paths(self) -> int:
        if self.mode in (MODE_BON_REFINE, MODE_BEST_OF_1):
            return 1
        return self.n_paths

    @property
    def effective_samples(self) -> int:
        return 1 if self.mode == MODE_BEST_OF_1 else self.n_samples


@dataclass
class Node:
    id: int
    parent: int | None
    step_text: str
    q_value: float
    prior: float
    visits: int = 0
    children: list[int] = field(default_factory=list)
    terminal: bool = False
    finish: str | None = None
    trace: RefinementTrace | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "step_text": self.step_text,
            "q_value": self.q_value,
            "prior": self.prior,
            "visits": self.visits,
            "children": list(self.children),
            "terminal": self.terminal,
            "finish": self.finish,
            "trace": None if self.trace is None else self.trace.to_dict(),
        }


class Tree:
    """Shared reasoning tree; node 0 is the question root."""

    def __init__(self) -> None:
        self.nodes: list[Node] = [Node(id=0, parent=None, step_text="", q_value=0.0, prior=1.0)]

    @property
    def root(self) -> Node:
        return self.nodes[0]

    def add_child(self, parent: Node, step_text: str, q_value: float, prior: float,
                  terminal: bool, finish: str | None) -> Node:
        node = Node(id=len(self.nodes), parent=parent.id, step_text=step_text,
                    q_value=q_value, prior=prior, terminal=terminal, finish=finish)
        self.nodes.append(node)
        parent.children.append(node.id)
        return node

    def find_child(self, parent: Node, step_text: str) -> Node | None:
        for child_id in parent.children:
            if self.nodes[child_id].step_text == step_text:
                return self.nodes[child_id]
        return None

    def route(self, node: Node) -> list[Node]:
        """Nodes from root to ``node`` inclusive."""
        chain = []
        cursor: Node | None = node
        while cursor is not None:
            chain.append(cursor)
            cursor = self.nodes[cursor.parent] if cursor.parent is not None else None
        chain.reverse()
        return chain

    def path_steps(self, node: Node) -> list[str]:
        return [n.step_text for n in self.route(node)[1:]]

    def bump_route(self, node: Node) -> None:
        for n in self.route(node):
            n.visits += 1

    def to_records(self) -> list[dict]:
        return [n.to_dict() for n in self.nodes]


def puct_score(q: float, prior: float, parent_visits: int, child_visits: int,
               c1: float, c2: float) -> float:
    """Value plus prior-weighted exploration bonus (natural log)."""
    exploration = (
        prior
        * math.sqrt(parent_visits)
        / (1 + child_visits)
        * (c1 + math.log((parent_visits + c2 + 1) / c2))
    )
    return q + exploration


def select_best(candidates: list[Node], parent_visits: int, cfg: SearchConfig) -> Node:
    """Candidate maximizing the PUCT score; earlier sample index wins ties."""
    if not candidates:
        raise ValueError("select_best needs at least one candidate")
    return max(
        candidates,
        key=lambda n: puct_score(n.q_value, n.prior, parent_visits, n.visits, cfg.c1, cfg.c2),
    )


def candidate_priors(mean_logprobs: list[float | None]) -> list[float]:
    """Softmax over candidate mean logprobs; uniform when any is missing.

    How the policy's prior should be derived is deliberately isolated here.
    """
    n = len(mean_logprobs)
    if n == 0:
        return []
    if any(lp is None for lp in mean_logprobs):
        return [1.0 / n] * n
    peak = max(mean_logprobs)  # type: ignore[type-var]
    weights = [math.exp(lp - peak) for lp in mean_logprobs]  # type: ignore[operator]
    total = sum(weights)
    return [w / total for w in weights]


def expand_step(
    tree: Tree,
    leaf: Node,
    question: str,
    cfg: SearchConfig,
    policy: PolicyBackend,
    verifier: VerifierBackend,
    *,
    answer_kind: str = MATH_BOXED,
    delim: StepDelimiterPolicy | None = None,
    prompts: PromptSet | None = None,
    sampling: SamplingParams | None = None,
    usage: UsageStats | None = None,
) -> Node:
    """Grow one step below ``leaf`` and return the selected child."""
    delim = delim or StepDelimiterPolicy()
    prompts = prompts or prompts_for("step", answer_kind)
    sampling = sampling or SamplingParams()
    hook = accounting.hook_for(usage)
    if leaf.terminal:
        raise ValueError("cannot expand a terminal node")

    prior_steps = tree.path_steps(leaf)

    # Stage 1a: sample candidates, merging exact-text duplicates.
    merged: dict[str, dict] = {}
    failures = 0
    for sample_index in range(cfg.effective_samples):
        try:
            gen = next_step(question, prior_steps, policy, delim, sampling,
                            cot_prompt=prompts.cot, usage_hook=hook)
        except StepGenerationError:
            failures += 1
            continue
        if usage is not None:
            accounting.accumulate(usage, gen, ROLE_STEP)
        if gen.text not in merged:
            merged[gen.text] = {"generation": gen, "sample_index": sample_index}
    if not merged:
        raise ExpansionError(f"all {cfg.effective_samples} candidates failed ({failures} errors)")

    # Stage 1b: verifier scores for fresh candidates, priors for the whole set.
    entries = list(merged.values())
    priors = candidate_priors([e["generation"].mean_token_logprob for e in entries])
    candidates: list[Node] = []
    for entry, prior in zip(entries, priors):
        gen = entry["generation"]
        existing = tree.find_child(leaf, gen.text)
        if existing is not None:
            existing.prior = prior
            candidates.append(existing)
            continue
        q = verifier.score_steps(question, [*prior_steps, gen.text], hook)[-1]
        terminal = is_terminal(gen, answer_kind) or gen.finish == FINISH_LENGTH
        candidates.append(tree.add_child(leaf, gen.text, q, prior, terminal, gen.finish))

    chosen = select_best(candidates, leaf.visits, cfg)

    # Stage 2: conditional refinement of the winner.
    if cfg.refines:
        trace = refine_step(question, prior_steps, chosen.step_text, chosen.q_value,
                            cfg.refinement, policy, verifier, delim, prompts, sampling, usage)
        if trace.accepted_any:
            chosen.step_text = trace.final_text
            chosen.q_value = trace.final_score
        if trace.iterations:
            chosen.trace = trace
    return chosen


@dataclass
class QuestionRun:
    paths: list[ReasoningPath]
    tree: Tree
    usage: UsageStats
    errors: list[str] = field(default_factory=list)


def run_question(
    question: str,
    cfg: SearchConfig,
    policy: PolicyBackend,
    verifier: VerifierBackend,
    *,
    answer_kind: str = MATH_BOXED,
    delim: StepDelimiterPolicy | None = None,
    sampling: SamplingParams | None = None,
) -> QuestionRun:
    """Produce ``n_paths`` reasoning paths over one shared tree."""
    delim = delim or StepDelimiterPolicy()
    sampling = sampling or SamplingParams()
    usage = UsageStats()
    tree = Tree()
    run = QuestionRun(paths=[], tree=tree, usage=usage)

    if cfg.mode == MODE_SOLUTION_LEVEL:
        _run_solution_level(question, cfg, policy, verifier, answer_kind, delim, sampling, run)
        return run

    prompts = prompts_for("step", answer_kind)
    for _ in range(cfg.effective_paths):
        current = tree.root
        aborted = False
        while not current.terminal:
            if len(tree.path_steps(current)) >= cfg.max_steps:
                aborted = True
                break
            try:
                current = expand_step(tree, current, question, cfg, policy, verifier,
                                      answer_kind=answer_kind, delim=delim,
                                      prompts=prompts, sampling=sampling, usage=usage)
            except (ExpansionError, StepGenerationError) as exc:
                run.errors.append(str(exc))
                aborted = True
                break

        tree.bump_route(current)
        route = tree.route(current)[1:]
        steps = [n.step_text for n in route]
        scores = [n.q_value for n in route]
        solution_text = join_steps(steps, delim)
        if aborted or current.finish == FINISH_LENGTH:
            answer = None
        else:
            answer = extract_answer(solution_text, answer_kind)
        run.paths.append(ReasoningPath(steps=steps, step_scores=scores, answer=answer,
                                       solution_text=solution_text, aborted=aborted, usage=usage))
    return run


def _run_solution_level(
    question: str,
    cfg: SearchConfig,
    policy: PolicyBackend,
    verifier: VerifierBackend,
    answer_kind: str,
    delim: StepDelimiterPolicy,
    sampling: SamplingParams,
    run: QuestionRun,
) -> None:
    """Whole solutions as single nodes, refined at the solution level."""
    prompts = prompts_for("solution", answer_kind)
    hook = accounting.hook_for(run.usage)
    for _ in range(cfg.effective_paths):
        request = GenerationRequest(
            context_text=build_context(question, prompts.cot, [], delim),
            stop_sequences=[],
            max_new_tokens=sampling.max_new_tokens,
            temperature=sampling.temperature,
            role=ROLE_SOLUTION,
        )
        gen = policy.generate(request, hook)
        accounting.accumulate(run.usage, gen, ROLE_SOLUTION)
        text = gen.text.strip()
        traces: list[dict] = []
        if not text:
            run.errors.append("empty solution sample")
            run.paths.append(ReasoningPath(steps=[], step_scores=[], answer=None,
                                           solution_text="", aborted=True, usage=run.usage))
            continue

        if cfg.refines:
            trace = refine_solution(question, text, cfg.refinement, policy, verifier,
                                    delim, prompts, sampling, run.usage)
            text = trace.final_text
            if trace.iterations:
                traces.append(trace.to_dict())

        steps = split_steps(text, delim)
        scores = verifier.score_steps(question, steps, hook)
        node = run.tree.add_child(run.tree.root, text, scores[-1],
                                  1.0 / cfg.effective_paths, True, gen.finish)
        run.tree.bump_route(node)
        answer = None if gen.finish == FINISH_LENGTH else extract_answer(text, answer_kind)
        run.paths.append(ReasoningPath(steps=steps, step_scores=scores, answer=answer,
                                       solution_text=join_steps(steps, delim),
                                       aborted=False, usage=run.usage, traces=traces))
