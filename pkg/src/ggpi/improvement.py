"""Greedy improvement, GPI, GSP sets and geometric GPI (GGPI)."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from ggpi.gsp import GhmRegistry, Gsp, exact_gsp_q, gsp_q_table_estimate
from ggpi.mdp import MarkovPolicy, Mdp, exact_q

TIE_TOL = 1e-10
DEFAULT_SET_CAP = 100_000


class NotSuffixClosedError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ImprovedPolicy:
    policy: MarkovPolicy
    actions: np.ndarray
    q: np.ndarray                          # pointwise max over the improvement set
    tie_sets: tuple[tuple[int, ...], ...]  # argmax actions per state
    winners: tuple                         # per state: the source that attains the max

    def provenance(self, x: int) -> dict:
        return {
            "state": int(x),
            "action": int(self.actions[x]),
            "winner": self.winners[x],
            "ties": list(self.tie_sets[x]),
            "q": [float(v) for v in self.q[x]],
        }


def _argmax_with_ties(q: np.ndarray, tol: float) -> tuple[np.ndarray, tuple[tuple[int, ...], ...]]:
    best = q.max(axis=1, keepdims=True)
    mask = q >= best - tol
    actions = np.argmax(mask, axis=1)
    ties = tuple(tuple(int(a) for a in np.flatnonzero(row)) for row in mask)
    return actions, ties


def _improved(qs: Sequence[np.ndarray], labels: Sequence, tol: float, name: str) -> ImprovedPolicy:
    stack = np.stack([np.asarray(q, dtype=float) for q in qs])
    q_max = stack.max(axis=0)
    actions, ties = _argmax_with_ties(q_max, tol)
    states = np.arange(q_max.shape[0])
    # lowest-ordered source attaining the max at the chosen action
    attained = stack[:, states, actions] >= q_max[states, actions] - tol
    winners = tuple(labels[int(np.argmax(attained[:, x]))] for x in states)
    policy = MarkovPolicy.deterministic(actions, q_max.shape[1], name)
    return ImprovedPolicy(policy, actions, q_max, ties, winners)


def greedy(q: np.ndarray, tol: float = TIE_TOL, name: str = "greedy") -> ImprovedPolicy:
    """Deterministic greedy policy; ties go to the lowest action index."""
    return _improved([q], [0], tol, name)


def gpi(qs: Sequence[np.ndarray], tol: float = TIE_TOL, name: str = "gpi") -> ImprovedPolicy:
    """Greedy with respect to the pointwise maximum of several Q-functions."""
    if not len(qs):
        raise ValueError("GPI needs at least one Q-function")
    return _improved(list(qs), list(range(len(qs))), tol, name)


class GspSet:
    """Finite set of GSPs sharing one switch probability.

    Members are stored in canonical form (trailing repeats removed), so
    ``pi -> pi`` and ``pi`` are the same member.
    """

    def __init__(self, members: Iterable[Gsp], alpha: Optional[float] = None):
        members = [g.canonical() for g in members]
        if alpha is None:
            if not members:
                raise ValueError("an empty GSP set needs an explicit alpha")
            alpha = members[0].alpha
        self.alpha = float(alpha)
        for g in members:
            if g.alpha != self.alpha:
                raise ValueError(f"GSP {g} has alpha {g.alpha}, set uses {self.alpha}")
        self.members = tuple(sorted(set(members)))

    @classmethod
    def of(cls, specs: Iterable[Sequence[str]], alpha: float) -> "GspSet":
        return cls([Gsp(tuple(s), alpha) for s in specs], alpha)

    def __iter__(self):
        return iter(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, gsp: Gsp) -> bool:
        return gsp.canonical() in self.members

    def __repr__(self) -> str:
        return f"GspSet({[str(g) for g in self.members]}, alpha={self.alpha})"

    def policy_ids(self) -> set[str]:
        return {pid for g in self.members for pid in g.policies}


def depth_m_set(base: Sequence[str], alpha: float, m: int, cap: int = DEFAULT_SET_CAP,
                ending_in: Optional[str] = None) -> GspSet:
    """All ``m``-tuples of base policies as GSPs, optionally only those ending in ``ending_in``."""
    if m < 1:
        raise ValueError("depth must be at least 1")
    if not base:
        raise ValueError("need at least one base policy")
    k = len(base)
    count = k ** (m - 1) if ending_in is not None else k ** m
    if count > cap:
        raise OverflowError(f"{count} GSPs exceed the configured cap of {cap}")
    if ending_in is None:
        tuples = itertools.product(base, repeat=m)
    else:
        tuples = (p + (ending_in,) for p in itertools.product(base, repeat=m - 1))
    return GspSet([Gsp(t, alpha) for t in tuples], alpha)


class SuffixCheck(NamedTuple):
    closed: bool
    missing: tuple[Gsp, ...]


def is_suffix_closed(gsps: GspSet) -> SuffixCheck:
    missing = set()
    for g in gsps:
        s = g.suffix()
        if s is not None and s not in gsps:
            missing.add(s.canonical())
    return SuffixCheck(not missing, tuple(sorted(missing)))


def close_suffixes(gsps: GspSet) -> GspSet:
    """Smallest suffix-closed superset."""
    members = set(gsps.members)
    for g in gsps:
        members.update(s.canonical() for s in g.suffixes())
    return GspSet(members, gsps.alpha)


@dataclass
class SampledQ:
    """Estimate GSP values with ``n_samples`` composed-GHM draws per (state, action, GSP)."""

    registry: GhmRegistry
    n_samples: int
    rng: np.random.Generator
    draws: int = 0
    fair_total: bool = False  # split n_samples evenly over the set instead

    def table(self, gsp: Gsp, mdp: Mdp, n_members: int, states=None) -> np.ndarray:
        n = max(1, self.n_samples // n_members) if self.fair_total else self.n_samples
        q, _ = gsp_q_table_estimate(gsp, self.registry, mdp, n, self.rng, states)
        cells = (mdp.n_states if states is None else len(states)) * mdp.n_actions
        self.draws += n * gsp.depth * cells
        return q


def gsp_values(gsps: GspSet, mdp: Mdp, policies: Mapping[str, MarkovPolicy],
               q_source="exact", states=None) -> dict[Gsp, np.ndarray]:
    """Q-table of every member, exact or sampled (rows restricted to ``states`` if given)."""
    out = {}
    for g in gsps:
        if q_source == "exact":
            q = exact_gsp_q(g, mdp, policies)
            out[g] = q if states is None else q[np.asarray(states)]
        else:
            out[g] = q_source.table(g, mdp, len(gsps), states)
    return out


def ggpi(gsps: GspSet, mdp: Mdp, policies: Mapping[str, MarkovPolicy], q_source="exact",
         unsafe: bool = False, tol: float = TIE_TOL, name: str = "ggpi",
         values: Optional[Mapping[Gsp, np.ndarray]] = None) -> ImprovedPolicy:
    """Greedy Markov policy with respect to the max over the Q-functions of ``gsps``.

    ``q_source`` is ``"exact"`` or a :class:`SampledQ`. The set must be
    suffix-closed unless ``unsafe`` is set; without closure the improvement
    guarantee does not hold.
    """
    check = is_suffix_closed(gsps)
    if not check.closed and not unsafe:
        raise NotSuffixClosedError(
            f"GSP set is not suffix-closed; missing {[str(g) for g in check.missing]}"
        )
    if values is None:
        values = gsp_values(gsps, mdp, policies, q_source)
    members = list(gsps)  # sorted, so ties go to the lexicographically first GSP
    return _improved([values[g] for g in members], members, tol, name)


@dataclass(frozen=True)
class ImprovementReport:
    margin: float
    worst_pair: tuple[int, int]
    q_improved: np.ndarray = field(repr=False)
    q_max: np.ndarray = field(repr=False)


def verify_improvement(gsps: GspSet, improved: ImprovedPolicy, mdp: Mdp,
                       policies: Mapping[str, MarkovPolicy]) -> ImprovementReport:
    """``min_{x,a} Q^{pi'}(x,a) - max_nu Q^nu(x,a)`` with exact evaluation."""
    q_new = exact_q(mdp, improved.policy)
    q_max = np.max(np.stack([exact_gsp_q(g, mdp, policies) for g in gsps]), axis=0)
    gap = q_new - q_max
    x, a = np.unravel_index(int(np.argmin(gap)), gap.shape)
    return ImprovementReport(float(gap[x, a]), (int(x), int(a)), q_new, q_max)


def policy_return(mdp: Mdp, policy: MarkovPolicy, x: int) -> float:
    """Expected return from ``x`` when ``policy`` picks every action."""
    q = exact_q(mdp, policy)
    return float(policy.probs[x] @ q[x])
