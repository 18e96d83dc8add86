import random

import pytest

from stepsearch.errors import ConfigError
from stepsearch.prompts import prompts_for
from stepsearch.refine import (
    STOP_ACCEPTED,
    STOP_GAP,
    STOP_MAX,
    STOP_SCORE,
    STOP_SKIPPED,
    RefinementConfig,
    refine_solution,
    refine_step,
    should_reflect,
    should_stop,
)
from stepsearch.stepgen import SamplingParams, StepDelimiterPolicy

from conftest import policy_from, verifier_from

DELIM = StepDelimiterPolicy()
SAMPLING = SamplingParams(max_new_tokens=256)
PROMPTS = prompts_for("step", "math_boxed")
SOL_PROMPTS = prompts_for("solution", "math_boxed")
CFG = RefinementConfig()


def run_refine(step, score, entries, table, cfg=CFG, prior=()):
    policy = policy_from(entries)
    verifier = verifier_from(table)
    trace = refine_step("q", list(prior), step, score, cfg, policy, verifier,
                        DELIM, PROMPTS, SAMPLING)
    return trace, policy


class TestShouldReflect:
    def test_high_confidence_skips(self):
        assert not should_reflect(0.95, CFG)

    def test_low_score_reflects(self):
        assert should_reflect(0.50, CFG)

    def test_boundary_exactly_at_threshold_skips(self):
        assert not should_reflect(0.90, CFG)


class TestShouldStop:
    def test_gap_stall(self):
        assert should_stop([0.30, 0.35, 0.42], CFG) == STOP_GAP

    def test_score_exceeded(self):
        assert should_stop([0.30, 0.95], CFG) == STOP_SCORE

    def test_budget_exhaustion(self):
        history = [0.30, 0.45, 0.61, 0.78, 0.89, 0.895]
        assert should_stop(history, CFG) == STOP_MAX

    def test_boundary_stop_is_strict(self):
        # 0.9 is not > 0.9: no score_exceeded; 2 entries, no gap window yet.
        assert should_stop([0.5, 0.9], CFG) is None

    def test_no_stop_early(self):
        assert should_stop([0.1, 0.4], CFG) is None


class TestRefineStep:
    def test_skip_high_confidence_zero_calls(self):
        trace, policy = run_refine("good step", 0.92, [], {})
        assert trace.stop_reason == STOP_SKIPPED
        assert trace.final_text == "good step"
        assert trace.iterations == []
        assert policy.calls_by_role["critique"] == 0
        assert policy.calls_by_role["rewrite"] == 0

    def test_accepted_rewrite(self):
        entries = [
            ("critique", "The grouping direction is wrong."),
            ("rewrite", "Group from the right: 010 101 001 110.\n\n"),
            ("critique", "Nothing further."),
            ("rewrite", "Some worse idea.\n\n"),
            ("critique", "Nothing further."),
            ("rewrite", "Another worse idea.\n\n"),
        ]
        table = {
            "Group from the right: 010 101 001 110.": 0.8711,
            "Some worse idea.": 0.3,
            "Another worse idea.": 0.3,
        }
        trace, _ = run_refine("bad grouping", 0.0596, entries, table)
        assert trace.iterations[0].accepted
        assert trace.final_score == 0.8711
        assert trace.final_text == "Group from the right: 010 101 001 110."
        assert trace.stop_reason == STOP_GAP

    def test_rejected_rewrite_keeps_original(self):
        entries = [("critique", "c1"), ("rewrite", "weaker attempt.\n\n")] * 2
        table = {"weaker attempt.": 0.3}
        trace, _ = run_refine("original step", 0.5, entries, table)
        assert not trace.iterations[0].accepted
        assert trace.final_text == "original step"
        assert trace.final_score == 0.5
        assert trace.stop_reason == STOP_GAP

    def test_score_exceeded_stop(self):
        entries = [("critique", "c"), ("rewrite", "great fix.\n\n")]
        trace, _ = run_refine("step", 0.4, entries, {"great fix.": 0.95})
        assert trace.stop_reason == STOP_ACCEPTED
        assert trace.final_score == 0.95

    def test_score_exceeded_without_acceptance(self):
        # split thresholds: skip at 0.95, stop above 0.9
        cfg = RefinementConfig(skip_threshold=0.95, stop_threshold=0.9)
        entries = [("critique", "c"), ("rewrite", "worse.\n\n")]
        trace, _ = run_refine("step", 0.92, entries, {"worse.": 0.2}, cfg=cfg)
        assert trace.stop_reason == STOP_SCORE
        assert trace.final_text == "step"

    def test_budget_invariant(self):
        rng = random.Random(5)
        for trial in range(20):
            cfg = RefinementConfig(max_iterations=rng.randint(1, 5), gap_min=0.0)
            entries = []
            table = {}
            for i in range(cfg.max_iterations):
                text = f"rw {trial}.{i}."
                entries.append(("critique", f"c{i}"))
                entries.append(("rewrite", text + "\n\n"))
                table[text] = round(rng.uniform(0, 0.89), 4)
            trace, policy = run_refine("step", 0.1, entries, table, cfg=cfg)
            assert len(trace.iterations) <= cfg.max_iterations
            assert policy.calls_by_role["critique"] + policy.calls_by_role["rewrite"] \
                <= 2 * cfg.max_iterations

    def test_best_so_far_monotone_under_prm_cover(self):
        rng = random.Random(11)
        for trial in range(30):
            entries = []
            table = {}
            for i in range(5):
                text = f"mono {trial}.{i}."
                entries.append(("critique", f"c{i}"))
                entries.append(("rewrite", text + "\n\n"))
                table[text] = round(rng.random(), 4)
            trace, _ = run_refine("step", round(rng.uniform(0, 0.89), 4), entries, table,
                                  cfg=RefinementConfig(gap_min=0.0))
            best = trace.initial_score
            for it in trace.iterations:
                if it.accepted:
                    assert it.score > best
                    best = it.score
                elif it.score is not None:
                    assert it.score <= best
            assert trace.final_score == best
            assert trace.final_score >= trace.initial_score

    def test_cover_mode_takes_last_rewrite(self):
        cfg = RefinementConfig(update_rule="cover", gap_min=0.0, max_iterations=2)
        entries = [
            ("critique", "c1"), ("rewrite", "better.\n\n"),
            ("critique", "c2"), ("rewrite", "regression.\n\n"),
        ]
        table = {"better.": 0.8, "regression.": 0.1}
        trace, _ = run_refine("step", 0.5, entries, table, cfg=cfg)
        assert trace.final_text == "regression."
        assert trace.final_score == 0.1

    def test_degenerate_rewrite_recorded_not_accepted(self):
        entries = [("critique", "c"), ("rewrite", "<eos>"),
                   ("critique", "c2"), ("rewrite", "fine.\n\n")]
        table = {"fine.": 0.2}
        trace, _ = run_refine("step", 0.5, entries, table,
                              cfg=RefinementConfig(max_iterations=2, gap_min=0.0))
        assert trace.iterations[0].score is None
        assert not trace.iterations[0].well_formed
        assert not trace.iterations[0].accepted

    def test_zero_iterations_disallowed(self):
        with pytest.raises(ConfigError):
            RefinementConfig(max_iterations=0)


class TestRefineSolution:
    def test_rejected_rewrite_keeps_original(self):
        solution = "step one\n\nwrong final boxed{5236_8}"
        entries = [("critique", "weak"), ("rewrite", "still wrong boxed{5236_8}")] * 2
        table = {
            "step one": 0.9,
            "wrong final boxed{5236_8}": 0.3,
            "still wrong boxed{5236_8}": 0.2,
        }
        policy = policy_from(entries)
        verifier = verifier_from(table)
        trace = refine_solution("q", solution, CFG, policy, verifier, DELIM, SOL_PROMPTS, SAMPLING)
        assert trace.initial_score == 0.3
        assert trace.final_text == solution
        assert not trace.accepted_any

    def test_accepted_rewrite_improves_final_step_score(self):
        solution = "partial\n\nweak end boxed{1}"
        entries = [
            ("critique", "fixable"), ("rewrite", "partial\n\nstrong end boxed{2}"),
            ("critique", "na"), ("rewrite", "partial\n\nweak end boxed{1}"),
            ("critique", "na"), ("rewrite", "partial\n\nweak end boxed{1}"),
        ]
        table = {
            "partial": 0.8,
            "weak end boxed{1}": 0.4,
            "strong end boxed{2}": 0.7,
        }
        policy = policy_from(entries)
        verifier = verifier_from(table)
        trace = refine_solution("q", solution, CFG, policy, verifier, DELIM, SOL_PROMPTS, SAMPLING)
        assert trace.iterations[0].accepted
        assert trace.final_text == "partial\n\nstrong end boxed{2}"
        assert trace.final_score == 0.7

    def test_skip_when_final_step_confident(self):
        solution = "a\n\nconfident end boxed{9}"
        policy = policy_from([])
        verifier = verifier_from({"a": 0.2, "confident end boxed{9}": 0.95})
        trace = refine_solution("q", solution, CFG, policy, verifier, DELIM, SOL_PROMPTS, SAMPLING)
        assert trace.stop_reason == STOP_SKIPPED
        assert policy.calls_by_role["critique"] == 0
