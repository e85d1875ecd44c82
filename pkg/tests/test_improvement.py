import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ggpi.environments import random_mdp, random_policy, suffix_closure_tree
from ggpi.gsp import GhmRegistry, Gsp
from ggpi.improvement import (
    GspSet,
    NotSuffixClosedError,
    SampledQ,
    close_suffixes,
    depth_m_set,
    ggpi,
    gpi,
    greedy,
    is_suffix_closed,
    verify_improvement,
)
from ggpi.mdp import exact_q
from ggpi.sampling import rng_stream


def test_greedy_ties_go_to_lowest_action():
    q = np.array([[1.0, 1.0, 0.5], [0.0, 2.0, 2.0 + 1e-12]])
    imp = greedy(q)
    assert imp.actions.tolist() == [0, 1]
    assert imp.tie_sets == ((0, 1), (1, 2))


def test_gpi_takes_pointwise_max_and_records_winner():
    q1 = np.array([[1.0, 0.0], [0.0, 0.0]])
    q2 = np.array([[0.0, 3.0], [0.0, 0.0]])
    imp = gpi([q1, q2])
    assert imp.actions.tolist() == [1, 0]
    assert imp.winners == (1, 0)
    assert imp.provenance(0)["q"] == [1.0, 3.0]
    with pytest.raises(ValueError):
        gpi([])


def test_gsp_set_is_canonical_and_sorted():
    s = GspSet.of([("b",), ("a", "b", "b"), ("a", "b")], 0.1)
    assert [str(g) for g in s] == ["a->b", "b"]
    assert Gsp(("a", "b", "b", "b"), 0.1) in s
    with pytest.raises(ValueError):
        GspSet([Gsp(("a",), 0.1), Gsp(("b",), 0.2)])


def test_depth_m_set_sizes_and_closure():
    base = ["p", "q", "r"]
    full = depth_m_set(base, 0.1, 3)
    # x->y->y is stored as x->y and x->x->x as x; the map is one-to-one
    assert len(full) == 27
    assert sorted(g.depth for g in full).count(3) == 18
    assert Gsp(("p", "q"), 0.1) in full and Gsp(("p", "p", "q"), 0.1) in full
    assert is_suffix_closed(full).closed
    newest = depth_m_set(base, 0.1, 3, ending_in="r")
    assert all(g.last == "r" for g in newest)
    assert is_suffix_closed(newest).closed
    with pytest.raises(OverflowError):
        depth_m_set(base, 0.1, 3, cap=5)


def test_close_suffixes_adds_missing():
    s = GspSet.of([("a", "b", "c")], 0.5)
    check = is_suffix_closed(s)
    assert not check.closed
    assert [str(g) for g in check.missing] == ["b->c"]
    closed = close_suffixes(s)
    assert [str(g) for g in closed] == ["a->b->c", "b->c", "c"]
    assert is_suffix_closed(closed).closed


def test_ggpi_refuses_unclosed_sets():
    tree, pl, pr = suffix_closure_tree()
    pols = {"pi_L": pl, "pi_R": pr}
    lone = GspSet([Gsp(("pi_L", "pi_L", "pi_R"), 1.0)])
    with pytest.raises(NotSuffixClosedError):
        ggpi(lone, tree, pols)
    assert ggpi(lone, tree, pols, unsafe=True).actions[0] == 1


def test_depth_one_ggpi_is_gpi(small_mdp, policy_set):
    s = depth_m_set(sorted(policy_set), 0.2, 1)
    a = ggpi(s, small_mdp, policy_set)
    b = gpi([exact_q(small_mdp, policy_set[p]) for p in sorted(policy_set)])
    assert np.array_equal(a.actions, b.actions)


def test_improvement_over_every_member(small_mdp, policy_set):
    s = depth_m_set(sorted(policy_set), 0.3, 2)
    imp = ggpi(s, small_mdp, policy_set)
    assert verify_improvement(s, imp, small_mdp, policy_set).margin >= -1e-9


def test_sampled_q_counts_every_draw(small_mdp, policy_set):
    reg = GhmRegistry(policy_set, small_mdp.gamma, 0.3, small_mdp)
    sq = SampledQ(reg, 10, rng_stream(0))
    s = GspSet.of([("pi_a", "pi_b"), ("pi_b",)], 0.3)
    ggpi(s, small_mdp, policy_set, q_source=sq)
    assert sq.draws == 10 * (2 + 1) * small_mdp.n_pairs


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(2, 4), st.integers(1, 3), st.floats(0.05, 1.0),
       st.integers(0, 10 ** 6))
def test_ggpi_improves_on_random_closed_sets(n_states, n_actions, depth, alpha, seed):
    r = np.random.default_rng(seed)
    mdp = random_mdp(n_states, n_actions, rng=r, gamma=0.9)
    pols = {f"p{i}": random_policy(n_states, n_actions, r, deterministic=bool(i % 2), name=f"p{i}")
            for i in range(3)}
    members = [Gsp(tuple(r.choice(sorted(pols), size=depth)), alpha) for _ in range(3)]
    s = close_suffixes(GspSet(members, alpha))
    imp = ggpi(s, mdp, pols)
    assert verify_improvement(s, imp, mdp, pols).margin >= -1e-9
