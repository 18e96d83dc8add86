import pytest

from stepsearch.accounting import ModelProfile, UsageStats, accumulate, flops_estimate, hook_for
from stepsearch.backends import FINISH_STOP, Generation

PROFILE = ModelProfile(param_count=3.09e9, n_layer=36, d_model=2048)


class TestFlopsEstimate:
    def test_reference_point(self):
        value = flops_estimate(PROFILE, 9580.23)
        assert value == pytest.approx(7.59e9, rel=0.01)
        # within 5% of the published 7.41e9 for this model/token budget
        assert abs(value - 7.41e9) / 7.41e9 < 0.05

    def test_zero_tokens(self):
        assert flops_estimate(PROFILE, 0) == 2 * PROFILE.param_count

    def test_doubling_tokens_adds_exact_linear_term(self):
        t = 1234
        delta = flops_estimate(PROFILE, 2 * t) - flops_estimate(PROFILE, t)
        assert delta == 2 * PROFILE.n_layer * t * PROFILE.d_model

    def test_affinity_exact(self):
        slope = 2 * PROFILE.n_layer * PROFILE.d_model
        for a, b in [(0, 10), (100, 244), (4096, 512)]:
            assert flops_estimate(PROFILE, a + b) - flops_estimate(PROFILE, a) == slope * b

    def test_run_average_equals_estimate_at_mean(self):
        tokens = [128, 256, 384, 512]
        mean = sum(tokens) / len(tokens)
        avg = sum(flops_estimate(PROFILE, t) for t in tokens) / len(tokens)
        assert avg == flops_estimate(PROFILE, mean)

    def test_negative_tokens_rejected(self):
        with pytest.raises(ValueError):
            flops_estimate(PROFILE, -1)

    def test_profile_validation(self):
        with pytest.raises(ValueError):
            ModelProfile(param_count=0, n_layer=1, d_model=1)


class TestAccumulate:
    def gen(self, tokens):
        return Generation(text="x " * tokens, token_count=tokens, finish=FINISH_STOP)

    def test_role_counter(self):
        usage = UsageStats()
        accumulate(usage, self.gen(100), "step")
        assert usage.tokens_by_role["step"] == 100
        assert usage.total_generated == 100

    def test_accumulations_commute(self):
        a = UsageStats()
        accumulate(a, self.gen(30), "step")
        accumulate(a, self.gen(70), "critique")
        b = UsageStats()
        accumulate(b, self.gen(70), "critique")
        accumulate(b, self.gen(30), "step")
        assert a.total_generated == b.total_generated
        assert a.tokens_by_role == b.tokens_by_role

    def test_unknown_role_rejected(self):
        with pytest.raises(ValueError):
            accumulate(UsageStats(), self.gen(1), "narrator")

    def test_wasted_routing_keeps_roles_clean(self):
        usage = UsageStats()
        hook = hook_for(usage)
        hook("wasted_tokens", 50)
        assert usage.wasted_tokens == 50
        assert usage.total_generated == 0

    def test_verifier_events(self):
        usage = UsageStats()
        hook = hook_for(usage)
        hook("verifier_tokens", 12)
        hook("verifier_tokens", 8)
        assert usage.verifier_calls == 2
        assert usage.verifier_tokens == 20

    def test_merge(self):
        a = UsageStats()
        accumulate(a, self.gen(10), "step")
        b = UsageStats()
        accumulate(b, self.gen(5), "rewrite")
        b.wasted_tokens = 3
        a.merge(b)
        assert a.total_generated == 15
        assert a.wasted_tokens == 3
