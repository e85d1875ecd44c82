"""Finite MDPs, Markov policies and exact evaluation of Markov policies.

Conventions used across the package:

* ``transition[x, a, y]`` is ``P(y | x, a)``; ``reward[x, a]`` is ``r(x, a)``.
* Q-functions are plain ``(n_states, n_actions)`` float arrays.
* State-action pairs are flattened as ``x * n_actions + a``.
* Terminal states are absorbing with zero reward. Their Q-values are pinned
  to zero, which also makes ``gamma == 1`` usable for episodic problems in
  which every evaluated policy terminates with probability one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ggpi.sampling import RowSampler

ROW_TOL = 1e-12
RESIDUAL_TOL = 1e-10


class MdpValidationError(ValueError):
    """Raised by :func:`validate`; ``problems`` lists every violation found."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid MDP:\n  " + "\n  ".join(self.problems))


class SolverError(RuntimeError):
    pass


def _frozen(array, dtype=float) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Mdp:
    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    state_reward_only: bool = False
    terminal: tuple[int, ...] = ()
    labels: Optional[dict[int, str]] = None

    def __post_init__(self):
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise ValueError(f"reward shape {r.shape} does not match transition {P.shape}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "terminal", tuple(sorted(int(x) for x in self.terminal)))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    @property
    def nonterminal(self) -> np.ndarray:
        mask = np.ones(self.n_states, dtype=bool)
        mask[list(self.terminal)] = False
        return mask

    def with_reward(self, reward, state_reward_only: Optional[bool] = None) -> "Mdp":
        """Same dynamics, new reward table (used when a task reward is revealed)."""
        return Mdp(
            self.transition,
            reward,
            self.gamma,
            self.state_reward_only if state_reward_only is None else state_reward_only,
            self.terminal,
            self.labels,
        )

    def with_gamma(self, gamma: float) -> "Mdp":
        return Mdp(self.transition, self.reward, gamma, self.state_reward_only,
                   self.terminal, self.labels)

    def label(self, x: int) -> str:
        if self.labels and x in self.labels:
            return self.labels[x]
        return str(x)

    @property
    def sampler(self) -> RowSampler:
        cached = self.__dict__.get("_sampler")
        if cached is None:
            cached = RowSampler(self.transition)
            object.__setattr__(self, "_sampler", cached)
        return cached


@dataclass(frozen=True, eq=False)
class MarkovPolicy:
    probs: np.ndarray
    name: str = ""

    def __post_init__(self):
        probs = _frozen(self.probs)
        if probs.ndim != 2:
            raise ValueError(f"policy table must be (S, A), got shape {probs.shape}")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_TOL):
            raise ValueError(f"policy {self.name!r} rows must be probability vectors")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int, name: str = "") -> "MarkovPolicy":
        actions = np.asarray(actions, dtype=np.int64)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs, name)

    @classmethod
    def constant(cls, action: int, n_states: int, n_actions: int, name: str = "") -> "MarkovPolicy":
        return cls.deterministic([action] * n_states, n_actions, name)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int, name: str = "uniform") -> "MarkovPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions), name)

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    @property
    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def actions(self) -> np.ndarray:
        """Most likely action per state (the action itself for deterministic policies)."""
        return np.argmax(self.probs, axis=1)

    def same_as(self, other: "MarkovPolicy") -> bool:
        return self.probs.shape == other.probs.shape and np.array_equal(self.probs, other.probs)

    @property
    def sampler(self) -> RowSampler:
        cached = self.__dict__.get("_sampler")
        if cached is None:
            cached = RowSampler(self.probs)
            object.__setattr__(self, "_sampler", cached)
        return cached


def validate(mdp: Mdp) -> None:
    """Check every structural invariant of ``mdp``; raise with all violations listed."""
    problems = []
    P, r = mdp.transition, mdp.reward
    S, A = mdp.n_states, mdp.n_actions
    for x, a, y in zip(*np.nonzero(P < 0)):
        problems.append(f"negative probability P({y}|{x},{a}) = {P[x, a, y]!r}")
    for x, a in zip(*np.nonzero(~np.isfinite(P).all(axis=2))):
        problems.append(f"non-finite transition row at ({x},{a})")
    sums = P.sum(axis=2)
    for x, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_TOL)):
        problems.append(f"row-sum violation at ({x},{a}): sums to {sums[x, a]!r}")
    for x, a in zip(*np.nonzero(np.isnan(r))):
        problems.append(f"NaN reward at ({x},{a})")
    for x, a in zip(*np.nonzero(np.isinf(r))):
        problems.append(f"infinite reward at ({x},{a})")
    if mdp.state_reward_only:
        for x in range(S):
            row = r[x]
            if np.isfinite(row).all() and np.any(row != row[0]):
                problems.append(f"state_reward_only set but reward({x},.) varies over actions: {row.tolist()}")
    for x in mdp.terminal:
        if not 0 <= x < S:
            problems.append(f"terminal state {x} out of range")
            continue
        if not np.all(P[x, :, x] == 1.0):
            problems.append(f"terminal state {x} is not absorbing")
        if np.any(r[x] != 0.0):
            problems.append(f"terminal state {x} has non-zero reward")
    g = mdp.gamma
    if not (0.0 <= g < 1.0 or (g == 1.0 and mdp.terminal)):
        problems.append(f"discount {g} outside [0, 1) (1 is only allowed with terminal states)")
    if mdp.labels is not None:
        bad = [k for k in mdp.labels if not 0 <= int(k) < S]
        if bad:
            problems.append(f"labels for unknown states {bad}")
    if A < 1 or S < 1:
        problems.append("MDP needs at least one state and one action")
    if problems:
        raise MdpValidationError(problems)


def _check_policy(mdp: Mdp, policy: MarkovPolicy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})"
        )


def policy_reward(mdp: Mdp, policy: MarkovPolicy) -> np.ndarray:
    """``r^pi(x) = sum_a pi(a|x) r(x, a)``."""
    _check_policy(mdp, policy)
    return np.einsum("xa,xa->x", policy.probs, mdp.reward)


def state_transition(mdp: Mdp, policy: MarkovPolicy) -> np.ndarray:
    """State-to-state chain ``P_pi(y|x) = sum_a pi(a|x) P(y|x, a)``."""
    _check_policy(mdp, policy)
    return np.einsum("xa,xay->xy", policy.probs, mdp.transition)


def transition_operator(mdp: Mdp, policy: MarkovPolicy) -> np.ndarray:
    """Pair-to-pair chain with entry ``((x,a),(y,b)) = P(y|x,a) pi(b|y)``."""
    _check_policy(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    op = mdp.transition[:, :, :, None] * policy.probs[None, None, :, :]
    return op.reshape(S * A, S * A)


def solve_pairs(mdp: Mdp, operator: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``Q = rhs + operator @ Q`` over state-action pairs.

    Terminal pairs are pinned to zero, so ``operator`` may carry total weight
    one (undiscounted episodic problems) as long as non-terminal pairs leave
    the transient set with probability one.
    """
    S, A = mdp.n_states, mdp.n_actions
    rhs = np.asarray(rhs, dtype=float).reshape(S * A)
    keep = np.repeat(mdp.nonterminal, A)
    q = np.zeros(S * A)
    sub = operator[np.ix_(keep, keep)]
    lhs = np.eye(sub.shape[0]) - sub
    try:
        q[keep] = np.linalg.solve(lhs, rhs[keep])
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            "singular evaluation system (a policy that never terminates under gamma = 1?)"
        ) from exc
    residual = np.max(np.abs(q - rhs - operator @ q), initial=0.0)
    scale = max(1.0, np.max(np.abs(q), initial=0.0))
    if not np.isfinite(residual) or residual > RESIDUAL_TOL * scale:
        raise SolverError(f"evaluation residual {residual:.3e} above tolerance")
    return q.reshape(S, A)


def exact_q(mdp: Mdp, policy: MarkovPolicy) -> np.ndarray:
    """Solve ``Q = r + gamma P^pi Q`` by dense factorisation."""
    op = mdp.gamma * transition_operator(mdp, policy)
    return solve_pairs(mdp, op, mdp.reward)


def q_bound(mdp: Mdp) -> float:
    """``max|r| / (1 - gamma)``; infinite for undiscounted problems."""
    if mdp.gamma >= 1.0:
        return np.inf
    return float(np.max(np.abs(mdp.reward), initial=0.0) / (1.0 - mdp.gamma))


@dataclass(frozen=True, eq=False)
class OptimalSolution:
    q: np.ndarray
    optimal: np.ndarray  # bool (S, A): actions within tolerance of the max
    policy: MarkovPolicy
    sweeps: int = 0

    def optimal_actions(self, x: int) -> tuple[int, ...]:
        return tuple(int(a) for a in np.flatnonzero(self.optimal[x]))

    def is_optimal(self, actions: np.ndarray, states=None) -> np.ndarray:
        """Per-state flag: is the given action in the optimal set."""
        actions = np.asarray(actions)
        idx = np.arange(actions.size) if states is None else np.asarray(states)
        return self.optimal[idx, actions[idx]]


def _greedy_actions(q: np.ndarray) -> np.ndarray:
    return np.argmax(q, axis=1)


def value_iteration(mdp: Mdp, tol: float = 1e-10, tie_tol: float = 1e-9,
                    max_sweeps: int = 100_000) -> OptimalSolution:
    """Optimal Q-function and optimal-action sets.

    Runs value iteration until the sup-norm Bellman residual is at most
    ``tol``, then polishes with exact policy iteration from the greedy policy
    so the returned ``q`` is the exact value of an optimal policy. Actions
    within ``tie_tol`` of the state maximum form the optimal set.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P, r, g = mdp.transition, mdp.reward, mdp.gamma
    nonterminal = mdp.nonterminal
    q = np.zeros_like(r)
    sweeps = 0
    while True:
        v = q.max(axis=1)
        v[~nonterminal] = 0.0
        new = r + g * P @ v
        new[~nonterminal] = 0.0
        residual = np.max(np.abs(new - q), initial=0.0)
        q = new
        sweeps += 1
        if residual <= tol:
            break
        if sweeps >= max_sweeps:
            raise SolverError(f"value iteration did not reach residual {tol} in {max_sweeps} sweeps")

    actions = _greedy_actions(q)
    for _ in range(1000):
        policy = MarkovPolicy.deterministic(actions, mdp.n_actions, "optimal")
        q = exact_q(mdp, policy)
        best = q.max(axis=1, keepdims=True)
        improvable = q[np.arange(mdp.n_states), actions] < best[:, 0] - tie_tol
        if not improvable.any():
            break
        actions = np.where(improvable, _greedy_actions(q), actions)
    optimal = q >= q.max(axis=1, keepdims=True) - tie_tol
    return OptimalSolution(q, optimal, policy, sweeps)


def sample_transition(mdp: Mdp, x: int, a: int, rng: np.random.Generator) -> int:
    if not (0 <= x < mdp.n_states and 0 <= a < mdp.n_actions):
        raise IndexError(f"state-action ({x}, {a}) out of range")
    return int(mdp.sampler.sample(np.array([x * mdp.n_actions + a]), rng)[0])


def sample_transitions(mdp: Mdp, xs, acts, rng: np.random.Generator) -> np.ndarray:
    """Vectorised next-state draws for arrays of states and actions."""
    xs = np.asarray(xs, dtype=np.int64)
    return mdp.sampler.sample(xs * mdp.n_actions + np.asarray(acts, dtype=np.int64), rng)


def sample_actions(policy: MarkovPolicy, xs, rng: np.random.Generator) -> np.ndarray:
    """Action draws; deterministic policies are looked up without consuming randomness."""
    xs = np.asarray(xs, dtype=np.int64)
    table = policy.__dict__.get("_action_table")
    if table is None:
        table = policy.actions() if policy.is_deterministic else False
        object.__setattr__(policy, "_action_table", table)
    if table is not False:
        return table[xs]
    return policy.sampler.sample(xs, rng)
