"""Geometric switching policies (GSPs): definition, sampled and exact evaluation.

A GSP ``pi_1 -> pi_2 -> ... -> pi_n`` follows ``pi_1`` for a
``Geometric(alpha)`` number of steps (the overridden first action counts as
one), then ``pi_2`` for another independent ``Geometric(alpha)`` stretch, and
so on; ``pi_n`` runs forever. Policies are referred to by string ids that
resolve in a ``dict[str, MarkovPolicy]`` registry.

Sampled evaluation composes GHMs of the base policies: ``mu_beta`` for the
first ``n - 1`` hops with ``beta = gamma (1 - alpha)`` and ``mu_gamma`` of the
final policy for the last hop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence

import numpy as np

from ggpi.ghm import GhmTable, compose, exact_ghm
from ggpi.mdp import (
    MarkovPolicy,
    Mdp,
    policy_reward,
    sample_actions,
    solve_pairs,
    state_transition,
    transition_operator,
)

BETA_TOL = 1e-12
PMF_TAIL = 1e-13


@dataclass(frozen=True, order=True)
class Gsp:
    policies: tuple[str, ...]
    alpha: float

    def __post_init__(self):
        policies = tuple(self.policies)
        if not policies:
            raise ValueError("a GSP needs at least one base policy")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"switch probability must lie in (0, 1], got {self.alpha}")
        object.__setattr__(self, "policies", policies)
        object.__setattr__(self, "alpha", float(self.alpha))

    @classmethod
    def parse(cls, text: str, alpha: float) -> "Gsp":
        """Parse ``"piL->piL->piR"`` (``>`` or ``,`` also accepted as separators)."""
        parts = [p.strip() for p in text.replace("->", ",").replace(">", ",").split(",")]
        if not parts or any(not p for p in parts):
            raise ValueError(f"malformed GSP spec {text!r}; expected e.g. 'piA->piB'")
        return cls(tuple(parts), alpha)

    @property
    def depth(self) -> int:
        return len(self.policies)

    @property
    def first(self) -> str:
        return self.policies[0]

    @property
    def last(self) -> str:
        return self.policies[-1]

    def canonical(self) -> "Gsp":
        """Drop trailing repeats: ``... -> pi -> pi`` behaves exactly like ``... -> pi``."""
        p = list(self.policies)
        while len(p) > 1 and p[-1] == p[-2]:
            p.pop()
        return Gsp(tuple(p), self.alpha)

    def suffix(self) -> Optional["Gsp"]:
        if self.depth == 1:
            return None
        return Gsp(self.policies[1:], self.alpha)

    def suffixes(self) -> list["Gsp"]:
        return [Gsp(self.policies[i:], self.alpha) for i in range(self.depth)]

    def __str__(self) -> str:
        return "->".join(self.policies)


def switch_beta(gamma: float, alpha: float) -> float:
    return gamma * (1.0 - alpha)


class GspSamplePath(NamedTuple):
    states: tuple[int, ...]   # X^(0) .. X^(n-1)
    actions: tuple[int, ...]  # A^(0) .. A^(n-1)
    final: int                # X'


@dataclass(frozen=True)
class EstimatorWeights:
    head: np.ndarray  # weights of the n - 1 intermediate hops
    tail: float
    prefactor: float

    @property
    def total(self) -> float:
        return float(self.head.sum() + self.tail)


def estimator_weights(gamma: float, beta: float, n: int) -> EstimatorWeights:
    if n < 1:
        raise ValueError("n must be at least 1")
    if not gamma < 1.0:
        raise ValueError("gamma must be below 1")
    if not 0.0 <= beta < gamma:
        raise ValueError(f"need 0 <= beta < gamma, got beta={beta}, gamma={gamma}")
    ratio = (gamma - beta) / (1.0 - beta)
    head = (1.0 - gamma) / (1.0 - beta) * ratio ** np.arange(n - 1)
    return EstimatorWeights(head, ratio ** (n - 1), gamma / (1.0 - gamma))


class GhmRegistry:
    """Per-policy GHMs at the two horizons GSP evaluation needs.

    ``tables`` may be pre-filled with learned models; missing ones are built
    exactly from ``mdp`` on first use when ``mdp`` is given. ``builds``
    counts exact constructions, which lets callers assert that nothing is
    recomputed when a new reward is revealed.
    """

    def __init__(self, policies: Mapping[str, MarkovPolicy], gamma: float, alpha: float,
                 mdp: Optional[Mdp] = None):
        self.policies = dict(policies)
        self.gamma = float(gamma)
        self.alpha = float(alpha)
        self.beta = switch_beta(self.gamma, self.alpha)
        self.mdp = mdp
        self.tables: dict[tuple[str, str], GhmTable] = {}
        self.builds = 0

    def add_policy(self, pid: str, policy: MarkovPolicy) -> None:
        self.policies[pid] = policy

    def put(self, pid: str, horizon: str, table: GhmTable) -> None:
        expected = self.beta if horizon == "beta" else self.gamma
        if abs(table.beta - expected) > BETA_TOL:
            raise ValueError(f"{horizon}-model for {pid!r} has discount {table.beta}, expected {expected}")
        self.tables[(pid, horizon)] = table

    def get(self, pid: str, horizon: str) -> GhmTable:
        key = (pid, horizon)
        table = self.tables.get(key)
        if table is None:
            if self.mdp is None or pid not in self.policies:
                raise KeyError(f"no {horizon}-GHM registered for policy {pid!r}")
            discount = self.beta if horizon == "beta" else self.gamma
            table = exact_ghm(self.mdp, self.policies[pid], discount, pid)
            self.builds += 1
            self.tables[key] = table
        return table

    def check(self, gsp: Gsp) -> None:
        if abs(switch_beta(self.gamma, gsp.alpha) - self.beta) > BETA_TOL:
            raise ValueError(
                f"GSP switch probability {gsp.alpha} implies beta "
                f"{switch_beta(self.gamma, gsp.alpha)}, registry holds {self.beta}"
            )
        for pid in gsp.policies:
            if pid not in self.policies:
                raise KeyError(f"unknown policy {pid!r}")


def _policy(registry: GhmRegistry, pid: str) -> MarkovPolicy:
    return registry.policies[pid]


def sample_gsp_chain(gsp: Gsp, registry: GhmRegistry, x: int, a: int,
                     rng: np.random.Generator) -> GspSamplePath:
    """One draw of ``(X^(0), A^(0), ..., X^(n-1), A^(n-1), X')``."""
    registry.check(gsp)
    states, actions = [int(x)], [int(a)]
    for m in range(1, gsp.depth):
        nxt = int(registry.get(gsp.policies[m - 1], "beta").sample([states[-1]], [actions[-1]], rng)[0])
        states.append(nxt)
        actions.append(int(sample_actions(_policy(registry, gsp.policies[m]), [nxt], rng)[0]))
    final = int(registry.get(gsp.last, "gamma").sample([states[-1]], [actions[-1]], rng)[0])
    return GspSamplePath(tuple(states), tuple(actions), final)


def _estimator_values(policies: Sequence[str], alpha: float, beta: float, registry: GhmRegistry,
                      mdp: Mdp, xs: np.ndarray, acts: np.ndarray,
                      rng: np.random.Generator) -> np.ndarray:
    """One composed-GHM estimate per start pair in ``(xs, acts)``.

    Action-dependent rewards use the switch-aware reward
    ``(1 - alpha) r^{pi_m} + alpha r^{pi_{m+1}}`` at intermediate states; with
    state-only rewards this is just ``r(X^(m))``.
    """
    gamma = mdp.gamma
    n = len(policies)
    value = mdp.reward[xs, acts].astype(float)
    if n == 1:
        w = EstimatorWeights(np.zeros(0), 1.0, gamma / (1.0 - gamma))
    else:
        w = estimator_weights(gamma, beta, n)
    state_only = mdp.state_reward_only
    state_reward = mdp.reward[:, 0]
    rewards = {pid: policy_reward(mdp, _policy(registry, pid)) for pid in set(policies)}
    acc = np.zeros(xs.shape)
    state, act = xs, acts
    for m in range(1, n):
        cur, nxt = policies[m - 1], policies[m]
        state = registry.get(cur, "beta").sample(state, act, rng)
        if state_only:
            acc += w.head[m - 1] * state_reward[state]
        else:
            acc += w.head[m - 1] * ((1.0 - alpha) * rewards[cur][state] + alpha * rewards[nxt][state])
        act = sample_actions(_policy(registry, nxt), state, rng)
    final = registry.get(policies[-1], "gamma").sample(state, act, rng)
    tail = state_reward[final] if state_only else rewards[policies[-1]][final]
    acc += w.tail * tail
    return value + w.prefactor * acc


def _summary(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return mean, se


def gsp_q_estimate(gsp: Gsp, registry: GhmRegistry, mdp: Mdp, x: int, a: int,
                   n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Mean and standard error of ``n_samples`` composed-GHM estimates of ``Q^nu(x, a)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    registry.check(gsp)
    xs = np.full(n_samples, x, dtype=np.int64)
    acts = np.full(n_samples, a, dtype=np.int64)
    values = _estimator_values(gsp.policies, gsp.alpha, registry.beta, registry, mdp, xs, acts, rng)
    return _summary(values)


def markov_q_estimate(pid: str, registry: GhmRegistry, mdp: Mdp, x: int, a: int, n: int,
                      n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """``n``-hop composed estimate of a Markov policy's ``Q(x, a)``.

    ``n = 1`` is the single-sample ``r(x, a) + gamma/(1-gamma) r^pi(X')``.
    """
    if n_samples < 1 or n < 1:
        raise ValueError("n and n_samples must be positive")
    xs = np.full(n_samples, x, dtype=np.int64)
    acts = np.full(n_samples, a, dtype=np.int64)
    values = _estimator_values((pid,) * n, registry.alpha, registry.beta, registry, mdp, xs, acts, rng)
    return _summary(values)


def gsp_q_table_estimate(gsp: Gsp, registry: GhmRegistry, mdp: Mdp, n_samples: int,
                         rng: np.random.Generator, states=None,
                         chunk: int = 200_000) -> tuple[np.ndarray, np.ndarray]:
    """Sampled ``Q^nu`` and standard errors for every action of ``states`` (default: all)."""
    registry.check(gsp)
    S, A = mdp.n_states, mdp.n_actions
    states = np.arange(S) if states is None else np.asarray(states, dtype=np.int64)
    cells_x = np.repeat(states, A)
    cells_a = np.tile(np.arange(A), states.size)
    n_cells = cells_x.size
    mean = np.zeros(n_cells)
    sq = np.zeros(n_cells)
    per_chunk = max(1, chunk // n_cells)
    done = 0
    while done < n_samples:
        k = min(per_chunk, n_samples - done)
        xs = np.repeat(cells_x, k)
        acts = np.repeat(cells_a, k)
        vals = _estimator_values(gsp.policies, gsp.alpha, registry.beta, registry, mdp,
                                 xs, acts, rng).reshape(n_cells, k)
        mean += vals.sum(axis=1)
        sq += (vals ** 2).sum(axis=1)
        done += k
    mean /= n_samples
    var = np.maximum(sq / n_samples - mean ** 2, 0.0) * n_samples / max(n_samples - 1, 1)
    se = np.sqrt(var / n_samples)
    shape = (states.size, A)
    return mean.reshape(shape), se.reshape(shape)


def exact_gsp_q_all(gsp: Gsp, mdp: Mdp, policies: Mapping[str, MarkovPolicy]) -> list[np.ndarray]:
    """``[Q^{nu_1}, ..., Q^{nu_n}]`` for every suffix ``nu_i = pi_i -> ... -> pi_n``.

    Backward recursion: ``Q^{nu_n}`` is the Markov value of ``pi_n``; for
    ``i < n``, ``Q^{nu_i} = r + gamma P[(1 - alpha) pi_i Q^{nu_i} + alpha pi_{i+1} Q^{nu_{i+1}}]``
    is a linear system in ``Q^{nu_i}``.
    """
    alpha, gamma = gsp.alpha, mdp.gamma
    ops = {pid: transition_operator(mdp, policies[pid]) for pid in set(gsp.policies)}
    qs = [solve_pairs(mdp, gamma * ops[gsp.last], mdp.reward)]
    for i in range(gsp.depth - 2, -1, -1):
        nxt = qs[0].reshape(-1)
        rhs = mdp.reward.reshape(-1) + gamma * alpha * (ops[gsp.policies[i + 1]] @ nxt)
        qs.insert(0, solve_pairs(mdp, gamma * (1.0 - alpha) * ops[gsp.policies[i]], rhs))
    return qs


def exact_gsp_q(gsp: Gsp, mdp: Mdp, policies: Mapping[str, MarkovPolicy]) -> np.ndarray:
    return exact_gsp_q_all(gsp, mdp, policies)[0]


def exact_gsp_q_augmented(gsp: Gsp, mdp: Mdp, policies: Mapping[str, MarkovPolicy]) -> np.ndarray:
    """Independent oracle: evaluate the GSP as a Markov chain on (pair, active index).

    From pair ``(x, a)`` with policy index ``i`` active, the next state is
    drawn from ``P``; the index advances with probability ``alpha`` (never
    past ``n``) and the next action comes from the then-active policy.
    """
    S, A, n = mdp.n_states, mdp.n_actions, gsp.depth
    K = S * A
    alpha = gsp.alpha
    big = np.zeros((n * K, n * K))
    for i in range(n):
        stay = transition_operator(mdp, policies[gsp.policies[i]])
        if i == n - 1:
            big[i * K:(i + 1) * K, i * K:(i + 1) * K] = stay
            continue
        move = transition_operator(mdp, policies[gsp.policies[i + 1]])
        big[i * K:(i + 1) * K, i * K:(i + 1) * K] = (1.0 - alpha) * stay
        big[i * K:(i + 1) * K, (i + 1) * K:(i + 2) * K] = alpha * move
    r = np.tile(mdp.reward.reshape(-1), n)
    keep = np.tile(np.repeat(mdp.nonterminal, A), n)
    q = np.zeros(n * K)
    sub = mdp.gamma * big[np.ix_(keep, keep)]
    q[keep] = np.linalg.solve(np.eye(sub.shape[0]) - sub, r[keep])
    return q[:K].reshape(S, A)


def gsp_estimator_mean(gsp: Gsp, registry: GhmRegistry, mdp: Mdp) -> np.ndarray:
    """Exact expectation of the composed-GHM estimator, by propagating hop distributions.

    Deterministic counterpart of :func:`gsp_q_table_estimate`; equal to
    ``Q^nu`` exactly when the estimator is unbiased.
    """
    registry.check(gsp)
    S, A = mdp.n_states, mdp.n_actions
    n, alpha, gamma = gsp.depth, gsp.alpha, mdp.gamma
    w = (EstimatorWeights(np.zeros(0), 1.0, gamma / (1.0 - gamma)) if n == 1
         else estimator_weights(gamma, registry.beta, n))
    rewards = {pid: policy_reward(mdp, _policy(registry, pid)) for pid in set(gsp.policies)}
    # pair distribution over (X^(m-1), A^(m-1)) for every start pair
    pairs = np.eye(S * A).reshape(S * A, S, A)
    acc = np.zeros(S * A)
    for m in range(1, n):
        cur, nxt = gsp.policies[m - 1], gsp.policies[m]
        states = np.einsum("kxa,xay->ky", pairs, registry.get(cur, "beta").dist)
        acc += w.head[m - 1] * states @ ((1.0 - alpha) * rewards[cur] + alpha * rewards[nxt])
        pairs = states[:, :, None] * _policy(registry, nxt).probs[None]
    final = np.einsum("kxa,xay->ky", pairs, registry.get(gsp.last, "gamma").dist)
    acc += w.tail * final @ rewards[gsp.last]
    return mdp.reward + w.prefactor * acc.reshape(S, A)


# --- geometric random sums -------------------------------------------------

def geometric_pmf(p: float, length: int) -> np.ndarray:
    """``pmf[t] = P(T = t)`` for ``T ~ Geometric(p)`` on ``{1, 2, ...}``; index 0 holds ``P(T = 0) = 0``."""
    t = np.arange(length)
    pmf = np.zeros(length)
    pmf[1:] = p * (1.0 - p) ** (t[1:] - 1)
    return pmf


def _horizon(gamma: float, truncation: Optional[int]) -> int:
    if truncation is not None:
        return int(truncation)
    if gamma == 0.0:
        return 4
    return int(math.ceil(math.log(PMF_TAIL) / math.log(gamma))) + 2


def _check_order(beta: float, gamma: float) -> None:
    if not 0.0 <= beta < gamma < 1.0:
        raise ValueError(f"need 0 <= beta < gamma < 1, got beta={beta}, gamma={gamma}")


def _sum_pmfs(hop: np.ndarray, count: int) -> list[np.ndarray]:
    """pmfs of sums of ``0..count`` independent hops, truncated to ``len(hop)``."""
    length = hop.size
    out = [np.zeros(length)]
    out[0][0] = 1.0
    for _ in range(count):
        out.append(np.convolve(out[-1], hop)[:length])
    return out


def geom_random_sum_pmf(beta: float, gamma: float, length: int) -> np.ndarray:
    """pmf of ``sum_{i<=N} T_i`` with ``T_i ~ Geom(1-beta)``, ``N ~ Geom((1-gamma)/(1-beta))``."""
    q = (1.0 - gamma) / (1.0 - beta)
    hop = geometric_pmf(1.0 - beta, length)
    pmf = np.zeros(length)
    cur = np.zeros(length)
    cur[0] = 1.0
    k = 0
    while (1.0 - q) ** k > PMF_TAIL * 1e-2:
        k += 1
        cur = np.convolve(cur, hop)[:length]
        pmf += q * (1.0 - q) ** (k - 1) * cur
    return pmf


def geom_sum_pmf_check(beta: float, gamma: float, truncation: Optional[int] = None) -> float:
    """Max pmf deviation between the geometric random sum and ``Geometric(1 - gamma)``."""
    _check_order(beta, gamma)
    length = _horizon(gamma, truncation)
    pmf = geom_random_sum_pmf(beta, gamma, length)
    return float(np.max(np.abs(pmf - geometric_pmf(1.0 - gamma, length))))


def geom_fixed_sum_pmf(beta: float, gamma: float, n: int, length: int) -> np.ndarray:
    """pmf of ``sum_{i<=min(N', n-1)} T_i + 1{N' = n} T'`` with ``N'`` the estimator weights."""
    w = estimator_weights(gamma, beta, n)
    sums = _sum_pmfs(geometric_pmf(1.0 - beta, length), n - 1)
    pmf = np.zeros(length)
    for m in range(1, n):
        pmf += w.head[m - 1] * sums[m]
    pmf += w.tail * np.convolve(sums[n - 1], geometric_pmf(1.0 - gamma, length))[:length]
    return pmf


def geom_fixed_sum_check(beta: float, gamma: float, n: int,
                         truncation: Optional[int] = None) -> float:
    _check_order(beta, gamma)
    if n < 1:
        raise ValueError("n must be at least 1")
    length = _horizon(gamma, truncation)
    pmf = geom_fixed_sum_pmf(beta, gamma, n, length)
    return float(np.max(np.abs(pmf - geometric_pmf(1.0 - gamma, length))))


def composed_ghm(table: GhmTable, policy: MarkovPolicy, n: int) -> np.ndarray:
    """``n``-fold self-composition of a GHM through ``policy``."""
    out = table.dist
    for _ in range(n - 1):
        out = compose(table, policy, out)
    return out


def geometric_sum_occupancy(mdp: Mdp, policy: MarkovPolicy, beta: float, n: int) -> np.ndarray:
    """Distribution of ``X_{T_1 + ... + T_n}`` with i.i.d. ``T_i ~ Geometric(1 - beta)``.

    Built from the pmf of the hop sum and the ``t``-step occupancies of the
    chain, truncated once the remaining pmf mass is below ``1e-13``.
    """
    S, A = mdp.n_states, mdp.n_actions
    length = n + 1
    while True:
        pmf = _sum_pmfs(geometric_pmf(1.0 - beta, length), n)[n]
        if 1.0 - pmf.sum() < PMF_TAIL:
            break
        length *= 2
    P_pi = state_transition(mdp, policy)
    occ = mdp.transition.reshape(S * A, S).copy()  # X_1
    out = pmf[1] * occ
    for t in range(2, length):
        occ = occ @ P_pi
        out += pmf[t] * occ
    return out.reshape(S, A, S)
