import pytest

from stepsearch.backends import ScriptedResponse, make_mock_policy, make_mock_verifier
from stepsearch.refine import RefinementConfig
from stepsearch.search import SearchConfig
from stepsearch.stepgen import StepDelimiterPolicy

DELIM = StepDelimiterPolicy()


def policy_from(entries, **kwargs):
    """Build a mock policy from a list of (role, text-or-ScriptedResponse)."""
    script = {}
    counters = {}
    for role, resp in entries:
        idx = counters.get(role, 0)
        counters[role] = idx + 1
        script[(role, idx, 0)] = resp if isinstance(resp, ScriptedResponse) else ScriptedResponse(text=resp)
    return make_mock_policy(script, **kwargs)


def verifier_from(table, **kwargs):
    return make_mock_verifier(dict(table), **kwargs)


@pytest.fixture
def delim():
    return DELIM


def search_config(**kwargs):
    refinement = kwargs.pop("refinement", None) or RefinementConfig()
    return SearchConfig(refinement=refinement, **kwargs)
