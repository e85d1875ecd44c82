import pytest

from ggpi.environments import random_mdp, random_policy
from ggpi.sampling import rng_stream


@pytest.fixture
def rng():
    return rng_stream(1234)


@pytest.fixture(params=[0, 1, 2])
def small_mdp(request):
    """Three fixed random MDPs with 5 to 7 states."""
    seed = request.param
    n_states, n_actions = [(5, 2), (6, 3), (7, 2)][seed]
    return random_mdp(n_states, n_actions, rng=rng_stream(100 + seed), gamma=0.9)


@pytest.fixture
def policy_set(small_mdp):
    """Two stochastic policies and one deterministic one on ``small_mdp``."""
    mdp = small_mdp
    r = rng_stream(500)
    return {
        "pi_a": random_policy(mdp.n_states, mdp.n_actions, r, name="pi_a"),
        "pi_b": random_policy(mdp.n_states, mdp.n_actions, r, deterministic=True, name="pi_b"),
        "pi_c": random_policy(mdp.n_states, mdp.n_actions, r, name="pi_c"),
    }


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, with the recorded numbers."""
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance" not in rep.nodeid or rep.when != "call":
                continue
            detail = dict(rep.user_properties).get("verdict", "")
            name = rep.nodeid.split("::")[-1]
            lines.append((name, "PASS" if outcome == "passed" else "FAIL", detail))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, status, detail in sorted(lines):
            terminalreporter.write_line(f"{status}  {name}: {detail}")
