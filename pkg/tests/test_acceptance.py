"""Acceptance suite: one test per criterion, each recording a one-line verdict.

The verdicts are printed at the end of the run by the terminal-summary hook in
``conftest.py``. Tolerances are the stated ones; nothing here is tuned to pass.
"""

import time
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from ggpi.algorithms import (
    alpha_for_beta,
    coverage,
    ggpi_policy_iteration,
    policy_iteration,
    steps_to_optimal,
)
from ggpi.cetd import StepSchedule, run_learners
from ggpi.cli import DEFAULTS, counterexample_checks, run_policy_iter_sweep
from ggpi.environments import (
    chain,
    cetd_fixtures,
    four_rooms,
    greedy_nonmarkov_q,
    random_mdp,
    random_policy,
)
from ggpi.ghm import exact_ghm, successor_features_check
from ggpi.gsp import (
    GhmRegistry,
    composed_ghm,
    exact_gsp_q,
    geom_fixed_sum_check,
    geom_sum_pmf_check,
    geometric_sum_occupancy,
    gsp_q_table_estimate,
    switch_beta,
)
from ggpi.improvement import GspSet, close_suffixes, depth_m_set, ggpi, is_suffix_closed, verify_improvement
from ggpi.mdp import MarkovPolicy, sample_actions, sample_transitions
from ggpi.sampling import rng_stream


def verdict(record_property, text):
    record_property("verdict", text)


# --- 1: composed-GHM estimator is unbiased ------------------------------------

def _estimator_fixtures():
    out = []
    for i, (S, A, alpha) in enumerate([(5, 2, 0.1), (8, 3, 0.3), (12, 2, 0.7)]):
        mdp = random_mdp(S, A, rng=rng_stream(900 + i), gamma=0.9)
        r = rng_stream(950 + i)
        pols = {p: random_policy(S, A, r, deterministic=(p == "q"), name=p) for p in ("p", "q", "s")}
        out.append((mdp, pols, alpha))
    return out


def test_criterion_01_estimator_unbiased(record_property):
    start = time.perf_counter()
    n_samples = 100_000
    probes = exceed = 0
    worst = 0.0
    n_gsps = 0
    for k, (mdp, pols, alpha) in enumerate(_estimator_fixtures()):
        reg = GhmRegistry(pols, mdp.gamma, alpha, mdp)
        gsps = [g for m in (1, 2, 3) for g in depth_m_set(sorted(pols), alpha, m)]
        gsps = sorted({g.canonical() for g in gsps})
        n_gsps = min(n_gsps, len(gsps)) if n_gsps else len(gsps)
        for j, g in enumerate(gsps):
            exact = exact_gsp_q(g, mdp, pols)
            est, se = gsp_q_table_estimate(g, reg, mdp, n_samples, rng_stream(k, j))
            z = np.abs(est - exact) / np.maximum(se, 1e-300)
            z[np.abs(est - exact) < 1e-12] = 0.0
            probes += z.size
            exceed += int((z > 3).sum())
            worst = max(worst, float(z.max()))
    elapsed = time.perf_counter() - start
    frac = exceed / probes
    verdict(record_property, f"{probes} probes over 3 MDPs x {n_gsps} GSPs, {exceed} beyond 3 se "
                             f"({frac:.2%}), max |z| {worst:.2f}, {elapsed:.0f}s")
    assert n_gsps >= 10
    assert frac <= 0.02
    assert elapsed <= 300


# --- 2: GGPI improves on every member of a suffix-closed set ------------------

def test_criterion_02_improvement(record_property):
    start = time.perf_counter()
    rng = rng_stream(2024)
    worst = np.inf
    sizes = []
    for trial in range(100):
        S = int(rng.integers(2, 11))
        A = int(rng.integers(1, 5))
        mdp = random_mdp(S, A, rng=rng_stream(3000 + trial), gamma=float(rng.uniform(0.5, 0.95)))
        k = int(rng.integers(1, 4))
        pols = {f"b{i}": random_policy(S, A, rng, deterministic=bool(rng.integers(2)), name=f"b{i}")
                for i in range(k)}
        alpha = float(rng.uniform(0.05, 1.0))
        seeds = []
        for _ in range(int(rng.integers(1, 4))):
            depth = int(rng.integers(1, 4))
            seeds.append(tuple(str(p) for p in rng.choice(sorted(pols), size=depth)))
        gsps = close_suffixes(GspSet.of(seeds, alpha))
        assert is_suffix_closed(gsps).closed
        sizes.append(len(gsps))
        improved = ggpi(gsps, mdp, pols)
        worst = min(worst, verify_improvement(gsps, improved, mdp, pols).margin)
    elapsed = time.perf_counter() - start
    verdict(record_property, f"100 MDPs, set sizes {min(sizes)}-{max(sizes)}, "
                             f"min Q' - max Q^nu = {worst:.3g}, {elapsed:.0f}s")
    assert worst >= -1e-9
    assert elapsed <= 120


# --- 3: counterexamples -------------------------------------------------------

def test_criterion_03_counterexamples(record_property):
    checks = counterexample_checks(101)
    bad = [c["check"] for c in checks if not c["match"]]
    # the preference flip is exact in rational arithmetic
    half = Fraction(1, 2)
    qa, qb = greedy_nonmarkov_q(half)
    flip = qa == qb == 1 and greedy_nonmarkov_q(half + Fraction(1, 1000))[1] > 1 \
        and greedy_nonmarkov_q(half - Fraction(1, 1000))[1] < 1
    verdict(record_property, f"{len(checks) - len(bad)}/{len(checks)} checks match, "
                             f"exact flip at gamma=1/2: {flip}")
    assert not bad, bad
    assert flip


# --- 4: four-rooms coverage -----------------------------------------------------

def test_criterion_04_four_rooms_coverage(record_property):
    start = time.perf_counter()
    grid = four_rooms(0.9)
    results = coverage(grid.mdp, grid.policies, alpha_for_beta(0.9, 0.8))
    counts = [r.n_optimal for r in results]
    n = results[0].n_states
    elapsed = time.perf_counter() - start
    verdict(record_property, f"optimal-action states by depth {counts} of {n}, "
                             f"depth 3 covers {counts[2] / n:.1%}, {elapsed:.0f}s")
    assert counts[0] < counts[1] < counts[2]
    assert counts[2] / n >= 0.9
    assert elapsed <= 600


# --- 5: sampled GGPI policy iteration across depths ----------------------------

@pytest.mark.slow
def test_criterion_05_depth_sweep(record_property):
    start = time.perf_counter()
    config = dict(DEFAULTS["policy-iter"])
    rows, summary = run_policy_iter_sweep(config)
    elapsed = time.perf_counter() - start
    steps = [summary[d]["iterations"]["mean"] for d in (1, 2, 3)]
    samples = [summary[d]["total_samples"]["mean"] for d in (1, 2, 3)]
    reached = [summary[d]["reached_optimal"] for d in (1, 2, 3)]
    verdict(record_property, f"{config['seeds']} seeds, mean steps {[round(s, 2) for s in steps]}, "
                             f"mean samples {[f'{s:.3g}' for s in samples]}, "
                             f"reached optimal {reached}, {elapsed:.0f}s")
    assert config["seeds"] >= 20 and config["samples"] == 1000
    assert steps[0] > steps[1] > steps[2]
    assert int(np.argmin(samples)) == 1
    assert elapsed <= 1800


# --- 6: chain example ------------------------------------------------------------

@pytest.mark.parametrize("k", [3, 5, 10])
def test_criterion_06_chain(record_property, k):
    mdp, pi0 = chain(k)
    classic = steps_to_optimal(mdp, policy_iteration(mdp, pi0))
    rec = ggpi_policy_iteration(mdp, pi0, 2, 0.1, None, 50, rng_stream(0))
    pi1 = MarkovPolicy.deterministic(rec.policies[1], mdp.n_actions)
    pair = GspSet.of([("pi_0", "pi_1"), ("pi_1",)], 0.1)
    closed = is_suffix_closed(pair).closed
    improved = ggpi(pair, mdp, {"pi_0": pi0, "pi_1": pi1})
    direct = steps_to_optimal(mdp, [pi0.actions(), pi1.actions(), improved.actions])
    verdict(record_property, f"k={k}: policy iteration {classic} steps, "
                             f"GGPI with {{pi_0->pi_1, pi_1}} {direct} steps, suffix-closed {closed}")
    assert closed
    assert direct == 2 and rec.first_optimal == 2
    assert classic >= 3


# --- 7 and 11: CETD convergence and the LL2TD ranking ----------------------------

SEEDS = list(range(20))
ITERS = 100_000
CHECKPOINTS = (1_000, 10_000, 100_000)


@pytest.fixture(scope="module")
def cetd_runs():
    mdp1, mdp2, phi0 = cetd_fixtures()
    schedule = StepSchedule("polynomial", 0.75, 0.6)
    out = {}
    start = time.perf_counter()
    for label, mdp, method in (("1/cetd", mdp1, "cetd"), ("2/cetd", mdp2, "cetd"),
                               ("1/ll2td", mdp1, "ll2td")):
        pol = MarkovPolicy.uniform(mdp.n_states, mdp.n_actions)
        logits, traces = run_learners(method, mdp, pol, 0.9, schedule, ITERS,
                                      [rng_stream(s) for s in SEEDS], 1_000, phi0)
        out[label] = (logits, traces)
    out["elapsed"] = time.perf_counter() - start
    return out


def _median_ratio(traces, k):
    i = traces[0].iteration.index(k)
    return float(np.median([t.lyapunov[i] / t.lyapunov[0] for t in traces]))


def test_criterion_07_cetd_convergence(record_property, cetd_runs):
    traces1 = cetd_runs["1/cetd"][1]
    traces2 = cetd_runs["2/cetd"][1]
    tv = float(np.median([t.final_tv for t in traces1]))
    ratio = _median_ratio(traces1, ITERS)
    r1 = [_median_ratio(traces1, k) for k in CHECKPOINTS]
    r2 = [_median_ratio(traces2, k) for k in CHECKPOINTS]
    final1 = float(np.median([t.final_lyapunov for t in traces1]))
    final2 = float(np.median([t.final_lyapunov for t in traces2]))
    slower = all(b > a for a, b in zip(r1, r2)) and final2 > final1
    verdict(record_property, f"fixture 1 median max-TV {tv:.4f}, final/initial Lyapunov {ratio:.2e}; "
                             f"relative Lyapunov at {CHECKPOINTS}: #1 {[f'{r:.2e}' for r in r1]}, "
                             f"#2 {[f'{r:.2e}' for r in r2]}; final Lyapunov #1 {final1:.2e}, #2 {final2:.2e}; "
                             f"{cetd_runs['elapsed']:.0f}s for all runs")
    assert tv <= 0.05
    assert ratio <= 0.1
    assert slower
    assert cetd_runs["elapsed"] <= 600


def test_criterion_11_ll2td_ranking(record_property, cetd_runs):
    ll_logits, ll_traces = cetd_runs["1/ll2td"]
    cetd_tv = float(np.median([t.final_tv for t in cetd_runs["1/cetd"][1]]))
    ll_tv = float(np.median([t.final_tv for t in ll_traces]))
    finite = bool(np.all(np.isfinite(ll_logits)))
    verdict(record_property, f"fixture 1 median final max-TV: CETD {cetd_tv:.4f}, LL2TD {ll_tv:.4f}, "
                             f"LL2TD finite {finite}")
    assert finite
    assert cetd_tv <= ll_tv


# --- 8: geometric-sum identities ----------------------------------------------

def test_criterion_08_geometric_identities(record_property):
    start = time.perf_counter()
    grid = [(b, g, n) for (b, g) in [(0.0, 0.5), (0.2, 0.6), (0.5, 0.9), (0.81, 0.9), (0.9, 0.99)]
            for n in (1, 2, 3, 5)]
    random_sum = max(geom_sum_pmf_check(b, g) for b, g, _ in grid)
    fixed_sum = max(geom_fixed_sum_check(b, g, n) for b, g, n in grid)
    tv = 0.0
    for S in (3, 5, 8):
        mdp = random_mdp(S, 2, rng=rng_stream(70 + S), gamma=0.9)
        pol = random_policy(S, 2, rng_stream(80 + S))
        for beta in (0.0, 0.5, 0.8):
            table = exact_ghm(mdp, pol, beta)
            for n in (1, 2, 4):
                diff = composed_ghm(table, pol, n) - geometric_sum_occupancy(mdp, pol, beta, n)
                tv = max(tv, float(0.5 * np.abs(diff).sum(axis=-1).max()))
    elapsed = time.perf_counter() - start
    verdict(record_property, f"{len(grid)}-point grid: random-sum pmf error {random_sum:.1e}, "
                             f"fixed-sum pmf error {fixed_sum:.1e}; composed-GHM TV {tv:.1e}; {elapsed:.1f}s")
    assert len(grid) == 20
    assert random_sum <= 1e-9 and fixed_sum <= 1e-9 and tv <= 1e-9
    assert elapsed <= 60


# --- 9: zero-discount GHMs and alpha = 1 chains --------------------------------

def test_criterion_09_one_step_limit(record_property):
    worst = 0.0
    for i, (S, A) in enumerate([(4, 2), (6, 3), (9, 2)]):
        mdp = random_mdp(S, A, rng=rng_stream(60 + i), gamma=0.9)
        pol = random_policy(S, A, rng_stream(65 + i))
        worst = max(worst, float(np.max(np.abs(exact_ghm(mdp, pol, 0.0).dist - mdp.transition))))

    mdp = random_mdp(6, 2, rng=rng_stream(61), gamma=0.9)
    r = rng_stream(62)
    pols = {p: random_policy(6, 2, r, name=p) for p in ("p", "q", "s")}
    assert switch_beta(mdp.gamma, 1.0) == 0.0
    reg = GhmRegistry(pols, mdp.gamma, 1.0, mdp)
    n = 50_000
    x0, a0 = 2, 1
    xs = np.full(n, x0)
    acts = np.full(n, a0)
    # GSP chain p -> q -> s: intermediate states come from the beta = 0 GHMs
    rng = rng_stream(63)
    g1 = reg.get("p", "beta").sample(xs, acts, rng)
    b1 = sample_actions(pols["q"], g1, rng)
    g2 = reg.get("q", "beta").sample(g1, b1, rng)
    # the same two steps simulated with the transition kernel
    rng = rng_stream(64)
    s1 = sample_transitions(mdp, xs, acts, rng)
    c1 = sample_actions(pols["q"], s1, rng)
    s2 = sample_transitions(mdp, s1, c1, rng)
    chain_joint = np.bincount(g1 * 6 + g2, minlength=36)
    roll_joint = np.bincount(s1 * 6 + s2, minlength=36)
    table = np.stack([chain_joint, roll_joint])
    table = table[:, table.sum(axis=0) > 0]
    p_value = float(chi2_contingency(table).pvalue)
    verdict(record_property, f"max |mu_0 - P| = {worst:.1e}; alpha=1 chain vs rollout joint of "
                             f"two hops: chi2 p = {p_value:.3f}")
    assert worst <= 1e-12
    assert p_value > 0.01


# --- 10: successor features ------------------------------------------------------

def test_criterion_10_successor_features(record_property):
    fixtures = []
    for i, (S, A) in enumerate([(5, 2), (6, 3), (7, 2)]):
        mdp = random_mdp(S, A, rng=rng_stream(100 + i), gamma=0.9)
        fixtures.append((mdp, random_policy(S, A, rng_stream(110 + i))))
    grid = four_rooms(0.9)
    fixtures += [(grid.mdp, p) for p in grid.policies.values()]
    mdp, pi0 = chain(10)
    fixtures.append((mdp, pi0))
    for mdp in cetd_fixtures()[:2]:
        fixtures.append((mdp, MarkovPolicy.uniform(mdp.n_states, mdp.n_actions)))
    worst = max(successor_features_check(m, p, g) for m, p in fixtures for g in (0.5, 0.9))
    verdict(record_property, f"{len(fixtures)} fixtures, max |psi - mu| = {worst:.1e}")
    assert worst <= 1e-9
