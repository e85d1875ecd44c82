"""Composite procedures: GGPI policy iteration, GGPI transfer and four-rooms coverage."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ggpi.cetd import DEFAULT_SCHEDULE, StepSchedule, run_learner, softmax
from ggpi.ghm import GhmTable
from ggpi.gsp import GhmRegistry, Gsp, exact_gsp_q, gsp_q_table_estimate, switch_beta
from ggpi.improvement import (
    GspSet,
    ImprovedPolicy,
    SampledQ,
    depth_m_set,
    ggpi,
    greedy,
    gsp_values,
)
from ggpi.mdp import MarkovPolicy, Mdp, OptimalSolution, exact_q, value_iteration

@dataclass(frozen=True)
class CetdGhmConfig:
    """Learn each GHM with synchronous CETD instead of solving for it."""

    iters: int = 20_000
    schedule: StepSchedule = DEFAULT_SCHEDULE


@dataclass
class PiRunRecord:
    depth: int
    iterations: int                   # improvement steps performed
    policies: list                    # action array of every iterate, starting with the initial one
    total_samples: int
    converged: bool
    optimal: bool                     # final policy VI-optimal in every non-terminal state
    first_optimal: Optional[int]      # first iteration whose policy is VI-optimal
    optimal_counts: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "depth": self.depth,
            "iterations": self.iterations,
            "policies": [p.tolist() for p in self.policies],
            "total_samples": self.total_samples,
            "converged": self.converged,
            "optimal": self.optimal,
            "first_optimal": self.first_optimal,
            "optimal_counts": self.optimal_counts,
        }


def optimal_state_mask(mdp: Mdp, actions: np.ndarray, solution: OptimalSolution) -> np.ndarray:
    """Per non-terminal state: is the chosen action in the optimal set."""
    flags = solution.is_optimal(actions)
    return flags[mdp.nonterminal]


def _learn_ghm(mdp: Mdp, policy: MarkovPolicy, discount: float, pid: str,
               config: CetdGhmConfig, rng: np.random.Generator) -> GhmTable:
    logits, _ = run_learner("cetd", mdp, policy, discount, config.schedule, config.iters, rng,
                            eval_every=config.iters)
    return GhmTable(pid, discount, softmax(logits))


def _find_policy(pool: Mapping[str, MarkovPolicy], policy: MarkovPolicy) -> Optional[str]:
    for pid, p in pool.items():
        if p.same_as(policy):
            return pid
    return None


def ggpi_policy_iteration(mdp: Mdp, initial: MarkovPolicy, depth: int, alpha: float,
                          n_samples: Optional[int], n_iter: int, rng: np.random.Generator,
                          ghm_mode="exact", newest_only: bool = True,
                          solution: Optional[OptimalSolution] = None,
                          stop_when_optimal: bool = False) -> PiRunRecord:
    """Policy iteration whose improvement step is GGPI over depth-``depth`` compositions.

    Every distinct policy seen so far joins the base set. With ``newest_only``
    the GSP set is restricted to compositions ending in the newest policy
    (these dominate the others with the same prefix); the restricted set is
    still suffix-closed. ``n_samples=None`` evaluates GSPs exactly; otherwise
    every GSP is estimated at every state-action pair with ``n_samples``
    composed-GHM draws, and each individual GHM draw is counted.
    ``ghm_mode`` is ``"exact"`` or a :class:`CetdGhmConfig`.

    Stops at a fixed point, after ``n_iter`` improvement steps, or (with
    ``stop_when_optimal``) once an optimal policy is reached. With exact
    evaluation a fixed point is one unchanged step; with sampled evaluation
    the policy must come back unchanged twice in a row.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if n_iter < 1:
        raise ValueError("n_iter must be at least 1")
    solution = value_iteration(mdp) if solution is None else solution
    exact_ghms = ghm_mode == "exact"
    registry = GhmRegistry({}, mdp.gamma, alpha, mdp if exact_ghms else None)
    sampler = None if n_samples is None else SampledQ(registry, n_samples, rng)
    pool: dict[str, MarkovPolicy] = {}

    policy = initial
    history = [initial.actions()]
    counts = [int(optimal_state_mask(mdp, history[0], solution).sum())]
    first_optimal = 0 if counts[0] == mdp.nonterminal.sum() else None
    converged = False
    needed = 1 if n_samples is None else 2
    streak = 0
    i = 0
    while i < n_iter:
        pid = _find_policy(pool, policy)
        if pid is None:
            pid = f"pi_{len(pool)}"
            policy = MarkovPolicy(policy.probs, pid)
            pool[pid] = policy
            registry.add_policy(pid, policy)
            if not exact_ghms:
                for horizon, discount in (("gamma", mdp.gamma), ("beta", registry.beta)):
                    registry.put(pid, horizon, _learn_ghm(mdp, policy, discount, pid, ghm_mode, rng))
        gsps = depth_m_set(list(pool), alpha, depth, ending_in=pid if newest_only else None)
        if n_samples is None:
            values = {g: exact_gsp_q(g, mdp, pool) for g in gsps}
        else:
            values = gsp_values(gsps, mdp, pool, sampler)
        improved = ggpi(gsps, mdp, pool, values=values, name="candidate")
        i += 1
        new_actions = improved.actions
        history.append(new_actions)
        counts.append(int(optimal_state_mask(mdp, new_actions, solution).sum()))
        if first_optimal is None and counts[-1] == mdp.nonterminal.sum():
            first_optimal = i
        if np.array_equal(new_actions, policy.actions()) and policy.is_deterministic:
            streak += 1
            converged = streak >= needed
        else:
            streak = 0
            policy = improved.policy
        if converged or (stop_when_optimal and first_optimal is not None):
            break
    final = history[-1]
    return PiRunRecord(
        depth=depth,
        iterations=i,
        policies=history,
        total_samples=0 if sampler is None else sampler.draws,
        converged=converged,
        optimal=bool(optimal_state_mask(mdp, final, solution).all()),
        first_optimal=first_optimal,
        optimal_counts=counts,
    )


def policy_iteration(mdp: Mdp, initial: MarkovPolicy, n_iter: int = 1000) -> list[np.ndarray]:
    """Classical exact policy iteration; returns every iterate's actions (lowest-index ties)."""
    actions = [initial.actions()]
    policy = initial
    for _ in range(n_iter):
        new = greedy(exact_q(mdp, policy)).actions
        if np.array_equal(new, actions[-1]) and policy.is_deterministic:
            break
        actions.append(new)
        policy = MarkovPolicy.deterministic(new, mdp.n_actions)
    return actions


def steps_to_optimal(mdp: Mdp, iterates: Sequence[np.ndarray],
                     solution: Optional[OptimalSolution] = None) -> Optional[int]:
    """Index of the first iterate that is optimal in every non-terminal state."""
    solution = value_iteration(mdp) if solution is None else solution
    for i, acts in enumerate(iterates):
        if optimal_state_mask(mdp, acts, solution).all():
            return i
    return None


def random_deterministic_policy(mdp: Mdp, rng: np.random.Generator, name: str = "pi_init") -> MarkovPolicy:
    return MarkovPolicy.deterministic(rng.integers(mdp.n_actions, size=mdp.n_states), mdp.n_actions, name)


# --- transfer --------------------------------------------------------------

@dataclass
class TransferStep:
    state: int
    action: int
    gsp: str
    reward: float


@dataclass
class TransferRunRecord:
    steps: list
    episode_return: float
    reached_goal: bool

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "steps": [vars(s) for s in self.steps],
            "episode_return": self.episode_return,
            "n_steps": self.n_steps,
            "reached_goal": self.reached_goal,
        }


def transfer_q(gsps: GspSet, registry: GhmRegistry, mdp: Mdp, x: int,
               n_samples: Optional[int], rng: np.random.Generator) -> dict[Gsp, np.ndarray]:
    """``Q^nu(x, .)`` for every member, exact (``n_samples=None``) or sampled."""
    out = {}
    for g in gsps:
        if n_samples is None:
            out[g] = exact_gsp_q(g, mdp, registry.policies)[x][None, :]
        else:
            out[g] = gsp_q_table_estimate(g, registry, mdp, n_samples, rng, [x])[0]
    return out


def ggpi_transfer(mdp: Mdp, registry: GhmRegistry, depth: int, n_samples: Optional[int],
                  start: int, episode_cap: int, rng: np.random.Generator,
                  gsps: Optional[GspSet] = None, stop_states: Sequence[int] = ()) -> TransferRunRecord:
    """Act greedily w.r.t. GGPI at every encountered state; no learning in the episode.

    ``mdp`` carries the newly revealed reward; ``registry`` holds the
    reward-free GHMs of the base policies and is reused as is. The episode
    ends at a terminal state, at any of ``stop_states`` or after
    ``episode_cap`` steps.
    """
    if episode_cap < 1:
        raise ValueError("episode_cap must be at least 1")
    if gsps is None:
        gsps = depth_m_set(sorted(registry.policies), registry.alpha, depth)
    members = list(gsps)
    done = set(mdp.terminal) | {int(s) for s in stop_states}
    # exact values do not depend on the visited state, so solve them once
    tables = None
    if n_samples is None:
        tables = np.stack([exact_gsp_q(g, mdp, registry.policies) for g in members])
    steps = []
    x = int(start)
    ret, discount = 0.0, 1.0
    while len(steps) < episode_cap and x not in done:
        if tables is None:
            qs = transfer_q(gsps, registry, mdp, x, n_samples, rng)
            stack = np.stack([qs[g][0] for g in members])
        else:
            stack = tables[:, x]
        best = stack.max(axis=0)
        a = int(np.argmax(best >= best.max() - 1e-10))
        winner = members[int(np.argmax(stack[:, a] >= best[a] - 1e-10))]
        r = float(mdp.reward[x, a])
        steps.append(TransferStep(x, a, str(winner), r))
        ret += discount * r
        discount *= mdp.gamma
        x = int(rng.choice(mdp.n_states, p=mdp.transition[x, a]))
    return TransferRunRecord(steps, ret, x in done)


# --- four-rooms coverage ---------------------------------------------------

@dataclass
class CoverageResult:
    depth: int
    actions: np.ndarray
    optimal: np.ndarray       # per state, chosen action in the optimal set
    n_optimal: int            # over non-terminal states
    n_states: int             # non-terminal states
    improved: ImprovedPolicy = field(repr=False)

    @property
    def fraction(self) -> float:
        return self.n_optimal / self.n_states


def coverage(mdp: Mdp, policies: Mapping[str, MarkovPolicy], alpha: float,
             depths: Sequence[int] = (1, 2, 3),
             solution: Optional[OptimalSolution] = None) -> list[CoverageResult]:
    """Exact GGPI over the full depth-``m`` composition set, compared with VI-optimal actions."""
    solution = value_iteration(mdp) if solution is None else solution
    out = []
    cache: dict[Gsp, np.ndarray] = {}
    for m in depths:
        gsps = depth_m_set(sorted(policies), alpha, m)
        for g in gsps:
            if g not in cache:
                cache[g] = exact_gsp_q(g, mdp, policies)
        improved = ggpi(gsps, mdp, policies, values=cache, name=f"ggpi_depth{m}")
        flags = solution.is_optimal(improved.actions)
        nonterminal = mdp.nonterminal
        out.append(CoverageResult(m, improved.actions, flags, int(flags[nonterminal].sum()),
                                  int(nonterminal.sum()), improved))
    return out


def alpha_for_beta(gamma: float, beta: float) -> float:
    """Switch probability giving ``beta = gamma (1 - alpha)``."""
    if not 0.0 < beta < gamma:
        raise ValueError("need 0 < beta < gamma")
    alpha = 1.0 - beta / gamma
    assert abs(switch_beta(gamma, alpha) - beta) < 1e-12
    return alpha
