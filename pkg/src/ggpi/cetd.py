"""Tabular GHM learning: synchronous CETD, CEMC and LL2TD on softmax logit tables.

A logit table is a ``(S, A, S)`` float array; its model is the row-wise
softmax. Every step updates all state-action pairs at once with independent
draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ggpi.ghm import GhmTable, exact_ghm, rollout_ghm_samples
from ggpi.mdp import MarkovPolicy, Mdp

RECENTRE_AT = 1e6
LOG_FLOOR = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _recentre(logits: np.ndarray) -> np.ndarray:
    if np.max(np.abs(logits)) > RECENTRE_AT:
        logits = logits - logits.max(axis=-1, keepdims=True)
    return logits


@dataclass(frozen=True)
class StepSchedule:
    """``eps_k = c`` (constant) or ``eps_k = c (k + 1)^(-p)`` (polynomial)."""

    kind: str = "polynomial"
    c: float = 0.75
    p: float = 0.6

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.c <= 0:
            raise ValueError("step-size scale must be positive")

    def __call__(self, k: int) -> float:
        if self.kind == "constant":
            return self.c
        return self.c * (k + 1.0) ** (-self.p)

    @property
    def robbins_monro(self) -> bool:
        return self.kind == "polynomial" and 0.5 < self.p <= 1.0


DEFAULT_SCHEDULE = StepSchedule("polynomial", 0.75, 0.6)


def _one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    return (idx[..., None] == np.arange(n)).astype(float)


def _draw_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw from each row of ``probs`` (``(..., S)``) given uniforms ``u``."""
    cdf = np.cumsum(probs, axis=-1)
    idx = ((u * cdf[..., -1])[..., None] >= cdf).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _pairs(mdp: Mdp) -> tuple[np.ndarray, np.ndarray]:
    xs = np.repeat(np.arange(mdp.n_states), mdp.n_actions)
    acts = np.tile(np.arange(mdp.n_actions), mdp.n_states)
    return xs, acts


# Every CETD / LL2TD step consumes three uniforms per pair: next state, next
# action and the bootstrap draw. Batched runs pre-draw these in blocks from
# each replicate's own generator, which reproduces the single-run stream.
DRAWS_PER_PAIR = 3


def _bootstrap_draws(model: np.ndarray, mdp: Mdp, policy: MarkovPolicy, u: np.ndarray):
    """``(x', a', x'')`` for every pair; ``model`` and ``u`` carry leading batch dims.

    ``model`` is ``(..., S, A, S)`` and ``u`` is ``(..., S * A, 3)``.
    """
    S, A = mdp.n_states, mdp.n_actions
    rows = np.arange(S * A)
    nxt = mdp.sampler.sample_with(np.broadcast_to(rows, u.shape[:-1]), u[..., 0])
    nxt_act = policy.sampler.sample_with(nxt, u[..., 1])
    flat = model.reshape(model.shape[:-3] + (S * A, S))
    succ = np.take_along_axis(flat, (nxt * A + nxt_act)[..., None], axis=-2)
    far = _draw_rows(succ, u[..., 2])
    return nxt, nxt_act, far


def _cetd_update(logits, mdp, policy, gamma, eps, u):
    S = mdp.n_states
    mu = softmax(logits)
    nxt, _, far = _bootstrap_draws(mu, mdp, policy, u)
    target = (1.0 - gamma) * _one_hot(nxt, S) + gamma * _one_hot(far, S)
    return _recentre(logits + eps * (target.reshape(mu.shape) - mu))


def _ll2td_update(logits, mdp, policy, gamma, eps, u, target_logits):
    S, A = mdp.n_states, mdp.n_actions
    mu = softmax(logits)
    mu_bar = softmax(target_logits)
    nxt, nxt_act, far = _bootstrap_draws(mu_bar, mdp, policy, u)
    xs, acts = _pairs(mdp)
    delta = ll2td_residual(mu, mdp, gamma, mu_bar, xs, acts, nxt, nxt_act, far)
    flat = mu.reshape(mu.shape[:-3] + (S * A, S))
    grad = delta[..., None] * (_one_hot(far, S) - flat)
    return _recentre(logits - eps * grad.reshape(mu.shape))


def cetd_target(logits: np.ndarray, mdp: Mdp, policy: MarkovPolicy, gamma: float,
                rng: np.random.Generator) -> np.ndarray:
    """Stochastic bootstrap targets ``(1 - gamma) e_{x'} + gamma e_{x''}`` for every pair."""
    S, A = mdp.n_states, mdp.n_actions
    nxt, _, far = _bootstrap_draws(softmax(logits), mdp, policy,
                                   rng.random((S * A, DRAWS_PER_PAIR)))
    target = (1.0 - gamma) * _one_hot(nxt, S) + gamma * _one_hot(far, S)
    return target.reshape(S, A, S)


def cetd_sync_step(logits: np.ndarray, mdp: Mdp, policy: MarkovPolicy, gamma: float,
                   eps: float, rng: np.random.Generator) -> np.ndarray:
    """One synchronous CETD update; returns a new logit table.

    Each pair draws ``x' ~ P(.|x,a)``, ``a' ~ pi(.|x')`` and
    ``x'' ~ softmax(logits)(.|x',a')`` independently, then moves its logits by
    ``eps * ((1 - gamma) e_{x'} + gamma e_{x''} - softmax(logits)(.|x,a))``.
    """
    if eps <= 0:
        raise ValueError("step size must be positive")
    u = rng.random((mdp.n_pairs, DRAWS_PER_PAIR))
    return _cetd_update(np.asarray(logits, dtype=float), mdp, policy, gamma, eps, u)


def cetd_expected_direction(logits: np.ndarray, mdp: Mdp, policy: MarkovPolicy,
                            gamma: float) -> np.ndarray:
    """Mean update direction ``T^pi mu - mu`` (zero at the fixed point)."""
    mu = softmax(logits)
    boot = (1.0 - gamma) * mdp.transition + gamma * np.einsum(
        "xay,yb,ybz->xaz", mdp.transition, policy.probs, mu
    )
    return boot - mu


def cemc_step(logits: np.ndarray, mdp: Mdp, policy: MarkovPolicy, gamma: float,
              eps: float, rng: np.random.Generator) -> np.ndarray:
    """Cross-entropy step towards true geometric-horizon rollout samples."""
    if eps <= 0:
        raise ValueError("step size must be positive")
    S, A = mdp.n_states, mdp.n_actions
    xs, acts = _pairs(mdp)
    far, _ = rollout_ghm_samples(mdp, policy, gamma, xs, acts, rng)
    target = _one_hot(far, S).reshape(S, A, S)
    return _recentre(logits + eps * (target - softmax(logits)))


def ll2td_residual(mu: np.ndarray, mdp: Mdp, gamma: float, mu_bar: np.ndarray,
                   xs, acts, nxt, nxt_act, far) -> np.ndarray:
    """``log mu(x''|x,a) - log((1 - gamma) P(x''|x,a) + gamma mu_bar(x''|x',a'))``.

    ``mu`` and ``mu_bar`` are distribution tables (``(..., S, A, S)``); the
    index arrays broadcast against their leading dims.
    """
    S, A = mdp.n_states, mdp.n_actions
    flat = mu.reshape(mu.shape[:-3] + (S * A, S))
    flat_bar = mu_bar.reshape(mu_bar.shape[:-3] + (S * A, S))
    model = np.take_along_axis(flat, far[..., None], axis=-1)[..., 0]
    succ = np.take_along_axis(flat_bar, (nxt * A + nxt_act)[..., None], axis=-2)
    boot = (1.0 - gamma) * mdp.transition[xs, acts, far] \
        + gamma * np.take_along_axis(succ, far[..., None], axis=-1)[..., 0]
    return np.log(np.maximum(model, LOG_FLOOR)) - np.log(np.maximum(boot, LOG_FLOOR))


def ll2td_step(logits: np.ndarray, mdp: Mdp, policy: MarkovPolicy, gamma: float, eps: float,
               rng: np.random.Generator, target_logits: np.ndarray) -> np.ndarray:
    """Gradient step on half the squared log-density residual.

    ``x''`` is drawn from the frozen target table at ``(x', a')``; the
    gradient of ``log softmax(phi)[x'']`` is ``e_{x''} - softmax(phi)``.
    """
    if eps <= 0:
        raise ValueError("step size must be positive")
    u = rng.random((mdp.n_pairs, DRAWS_PER_PAIR))
    return _ll2td_update(np.asarray(logits, dtype=float), mdp, policy, gamma, eps, u,
                         np.asarray(target_logits, dtype=float))


def kl_rows(target: np.ndarray, logits: np.ndarray) -> np.ndarray:
    """``KL(target(.|x,a) || softmax(logits)(.|x,a))`` per pair, with ``0 log 0 = 0``."""
    logq = log_softmax(logits)
    safe = np.where(target > 0, target, 1.0)
    return np.sum(np.where(target > 0, target * (np.log(safe) - logq), 0.0), axis=-1)


def lyapunov(logits: np.ndarray, target, weights: Optional[np.ndarray] = None) -> float:
    """Weighted KL from the true GHM to the softmax model (uniform weights by default)."""
    dist = target.dist if isinstance(target, GhmTable) else np.asarray(target)
    kl = kl_rows(dist, logits)
    if weights is None:
        weights = np.full(kl.shape, 1.0 / kl.size)
    weights = np.asarray(weights, dtype=float).reshape(kl.shape)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must be non-negative and sum to one")
    return float(np.sum(weights * kl))


def max_tv(logits: np.ndarray, target) -> float:
    dist = target.dist if isinstance(target, GhmTable) else np.asarray(target)
    return float(0.5 * np.abs(softmax(logits) - dist).sum(axis=-1).max())


@dataclass
class ConvergenceTrace:
    iteration: list = field(default_factory=list)
    lyapunov: list = field(default_factory=list)
    max_tv: list = field(default_factory=list)
    epsilon: list = field(default_factory=list)
    dists: list = field(default_factory=list)  # model snapshots, only if requested

    def record(self, k, logits, target, eps, keep_dist=False):
        self.iteration.append(int(k))
        self.lyapunov.append(lyapunov(logits, target))
        self.max_tv.append(max_tv(logits, target))
        self.epsilon.append(float(eps))
        if keep_dist:
            self.dists.append(softmax(logits))

    def rows(self) -> list[dict]:
        return [
            {"iteration": k, "lyapunov": l, "max_tv": tv, "epsilon": e}
            for k, l, tv, e in zip(self.iteration, self.lyapunov, self.max_tv, self.epsilon)
        ]

    @property
    def final_tv(self) -> float:
        return self.max_tv[-1]

    @property
    def final_lyapunov(self) -> float:
        return self.lyapunov[-1]


METHODS = ("cetd", "cemc", "ll2td")
UNIFORM_BLOCK = 1000


def _check_run(method: str, iters: int) -> None:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if iters < 1:
        raise ValueError("iters must be at least 1")


def run_learners(method: str, mdp: Mdp, policy: MarkovPolicy, gamma: float,
                 schedule: StepSchedule, iters: int, rngs: Sequence[np.random.Generator],
                 eval_every: int = 100, logits0: Optional[np.ndarray] = None,
                 target_period: int = 200, keep_dists: bool = False,
                 ) -> tuple[np.ndarray, list[ConvergenceTrace]]:
    """Independent runs of ``method``, one per generator, advanced together.

    Replicate ``i`` consumes only ``rngs[i]`` and reproduces exactly what
    :func:`run_learner` gives with that generator. Traces hold one record at
    iteration 0, one every ``eval_every`` iterations and one at the end.
    ``target_period`` applies to LL2TD only.
    """
    _check_run(method, iters)
    S, A = mdp.n_states, mdp.n_actions
    R = len(rngs)
    base = np.zeros((S, A, S)) if logits0 is None else np.array(logits0, dtype=float)
    if base.shape != (S, A, S):
        raise ValueError(f"initial logits must have shape {(S, A, S)}, got {base.shape}")
    logits = np.broadcast_to(base, (R, S, A, S)).copy()
    truth = exact_ghm(mdp, policy, gamma)
    traces = [ConvergenceTrace() for _ in range(R)]

    def record(k, eps):
        for i, tr in enumerate(traces):
            tr.record(k, logits[i], truth, eps, keep_dists)

    record(0, schedule(0))
    target_logits = logits.copy()
    u_block = None
    for k in range(iters):
        eps = schedule(k)
        if method == "cemc":
            logits = np.stack([cemc_step(logits[i], mdp, policy, gamma, eps, rng)
                               for i, rng in enumerate(rngs)])
        else:
            j = k % UNIFORM_BLOCK
            if j == 0:
                n = min(UNIFORM_BLOCK, iters - k)
                u_block = np.stack([rng.random((n, S * A, DRAWS_PER_PAIR)) for rng in rngs], axis=1)
            if method == "cetd":
                logits = _cetd_update(logits, mdp, policy, gamma, eps, u_block[j])
            else:
                logits = _ll2td_update(logits, mdp, policy, gamma, eps, u_block[j], target_logits)
                if (k + 1) % target_period == 0:
                    target_logits = logits.copy()
        if (k + 1) % eval_every == 0 or k + 1 == iters:
            record(k + 1, eps)
    return logits, traces


def run_learner(method: str, mdp: Mdp, policy: MarkovPolicy, gamma: float,
                schedule: StepSchedule, iters: int, rng: np.random.Generator,
                eval_every: int = 100, logits0: Optional[np.ndarray] = None,
                target_period: int = 200, keep_dists: bool = False,
                ) -> tuple[np.ndarray, ConvergenceTrace]:
    """Single run of ``method`` traced against the exact GHM."""
    logits, traces = run_learners(method, mdp, policy, gamma, schedule, iters, [rng],
                                  eval_every, logits0, target_period, keep_dists)
    return logits[0], traces[0]


def run_cetd(mdp: Mdp, policy: MarkovPolicy, gamma: float, schedule: StepSchedule, iters: int,
             rng: np.random.Generator, eval_every: int = 100,
             logits0: Optional[np.ndarray] = None) -> tuple[np.ndarray, ConvergenceTrace]:
    return run_learner("cetd", mdp, policy, gamma, schedule, iters, rng, eval_every, logits0)


def moving_average(values, window: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if window < 1 or window > values.size:
        raise ValueError("window must lie in [1, len(values)]")
    c = np.cumsum(np.insert(values, 0, 0.0))
    return (c[window:] - c[:-window]) / window
