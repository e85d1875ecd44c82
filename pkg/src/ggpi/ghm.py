"""Geometric horizon models: discounted future state-visitation distributions.

``dist[x, a, y]`` is the probability that the state visited ``T`` steps after
taking ``a`` in ``x`` is ``y``, where ``T ~ Geometric(1 - beta)`` on
``{1, 2, ...}`` and the policy is followed after the first action.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ggpi.mdp import (
    MarkovPolicy,
    Mdp,
    _check_policy,
    sample_actions,
    sample_transitions,
    state_transition,
    transition_operator,
)
from ggpi.sampling import RowSampler, geometric_times

ROW_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GhmTable:
    policy: str
    beta: float
    dist: np.ndarray

    def __post_init__(self):
        dist = np.array(self.dist, dtype=float)
        if dist.ndim != 3 or dist.shape[0] != dist.shape[2]:
            raise ValueError(f"GHM table must have shape (S, A, S), got {dist.shape}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if np.any(dist < -ROW_TOL) or np.any(np.abs(dist.sum(axis=2) - 1.0) > ROW_TOL):
            raise ValueError("GHM rows must be probability vectors")
        dist.setflags(write=False)
        object.__setattr__(self, "dist", dist)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def n_states(self) -> int:
        return self.dist.shape[0]

    @property
    def n_actions(self) -> int:
        return self.dist.shape[1]

    @property
    def sampler(self) -> RowSampler:
        cached = self.__dict__.get("_sampler")
        if cached is None:
            cached = RowSampler(np.clip(self.dist, 0.0, None))
            object.__setattr__(self, "_sampler", cached)
        return cached

    def sample(self, xs, acts, rng: np.random.Generator) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        return self.sampler.sample(xs * self.n_actions + np.asarray(acts, dtype=np.int64), rng)


class HorizonSample(NamedTuple):
    state: int
    hops: int


def _check_beta(beta: float) -> None:
    if not 0.0 <= beta < 1.0:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")


def exact_ghm(mdp: Mdp, policy: MarkovPolicy, beta: float, policy_id: str = "") -> GhmTable:
    """Exact ``mu^pi_beta`` through a state-level linear solve.

    With ``d(.|y) = sum_b pi(b|y) mu(.|y, b)`` the fixed point reads
    ``d = (1 - beta) P_pi + beta P_pi d``, and then
    ``mu(.|x, a) = (1 - beta) P(.|x, a) + beta sum_y P(y|x, a) d(.|y)``.
    """
    _check_beta(beta)
    _check_policy(mdp, policy)
    S = mdp.n_states
    P = mdp.transition
    if beta == 0.0:
        return GhmTable(policy_id or policy.name, 0.0, P)
    P_pi = state_transition(mdp, policy)
    d = np.linalg.solve(np.eye(S) - beta * P_pi, (1.0 - beta) * P_pi)
    dist = (1.0 - beta) * P + beta * np.einsum("xay,yz->xaz", P, d)
    dist = np.clip(dist, 0.0, None)
    dist /= dist.sum(axis=2, keepdims=True)
    return GhmTable(policy_id or policy.name, beta, dist)


def bellman_residual(table: GhmTable, mdp: Mdp, policy: MarkovPolicy) -> float:
    """``max |mu - (1 - beta) P - beta (mu composed through P)|``."""
    beta = table.beta
    target = (1.0 - beta) * mdp.transition + beta * np.einsum(
        "xay,yb,ybz->xaz", mdp.transition, policy.probs, table.dist
    )
    return float(np.max(np.abs(table.dist - target)))


def compose(mu2, policy: MarkovPolicy, mu1) -> np.ndarray:
    """Distribution of a two-hop draw: ``y ~ mu1(.|x,a)``, ``b ~ pi(.|y)``, ``z ~ mu2(.|y,b)``."""
    d2 = mu2.dist if isinstance(mu2, GhmTable) else np.asarray(mu2, dtype=float)
    d1 = mu1.dist if isinstance(mu1, GhmTable) else np.asarray(mu1, dtype=float)
    if d1.shape != d2.shape or policy.probs.shape != d1.shape[:2]:
        raise ValueError(
            f"shape mismatch: mu1 {d1.shape}, mu2 {d2.shape}, policy {policy.probs.shape}"
        )
    return np.einsum("xay,yb,ybz->xaz", d1, policy.probs, d2)


def sample_ghm(table: GhmTable, x: int, a: int, rng: np.random.Generator) -> int:
    if not (0 <= x < table.n_states and 0 <= a < table.n_actions):
        raise IndexError(f"state-action ({x}, {a}) out of range")
    return int(table.sample([x], [a], rng)[0])


def rollout_ghm_samples(mdp: Mdp, policy: MarkovPolicy, beta: float, xs, acts,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Environment rollouts stopped after ``T ~ Geometric(1 - beta)`` steps.

    Vectorised over start pairs; returns ``(states, hops)``.
    """
    _check_beta(beta)
    xs = np.asarray(xs, dtype=np.int64)
    hops = geometric_times(1.0 - beta, xs.shape, rng)
    state = sample_transitions(mdp, xs, acts, rng)
    remaining = hops - 1
    active = np.flatnonzero(remaining > 0)
    while active.size:
        act = sample_actions(policy, state[active], rng)
        state[active] = sample_transitions(mdp, state[active], act, rng)
        remaining[active] -= 1
        active = active[remaining[active] > 0]
    return state, hops


def rollout_ghm_sample(mdp: Mdp, policy: MarkovPolicy, beta: float, x: int, a: int,
                       rng: np.random.Generator) -> HorizonSample:
    states, hops = rollout_ghm_samples(mdp, policy, beta, [x], [a], rng)
    return HorizonSample(int(states[0]), int(hops[0]))


def successor_features(mdp: Mdp, policy: MarkovPolicy, gamma: float) -> np.ndarray:
    """Successor features for the base features ``(1 - gamma) onehot(x')``.

    Solves ``psi = Phi + gamma P^pi psi`` over state-action pairs, where
    ``Phi(x, a) = E[(1 - gamma) onehot(X')] = (1 - gamma) P(.|x, a)``.
    """
    _check_beta(gamma)
    S, A = mdp.n_states, mdp.n_actions
    phi = (1.0 - gamma) * mdp.transition.reshape(S * A, S)
    op = transition_operator(mdp, policy)
    psi = np.linalg.solve(np.eye(S * A) - gamma * op, phi)
    return psi.reshape(S, A, S)


def successor_features_check(mdp: Mdp, policy: MarkovPolicy, gamma: float) -> float:
    """Max deviation between successor features and :func:`exact_ghm`."""
    psi = successor_features(mdp, policy, gamma)
    return float(np.max(np.abs(psi - exact_ghm(mdp, policy, gamma).dist)))
