"""Builders for the tabular environments, counterexamples and test fixtures."""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from typing import Optional, Sequence

import numpy as np

from ggpi.mdp import MarkovPolicy, Mdp, SolverError, exact_q

# --- four rooms ------------------------------------------------------------

FOUR_ROOMS_MAP = resources.files("ggpi.data").joinpath("four_rooms.txt").read_text().rstrip("\n")

LEFT, DOWN, RIGHT, UP = 0, 1, 2, 3
ACTION_NAMES = ("L", "D", "R", "U")
_MOVES = {LEFT: (0, -1), DOWN: (1, 0), RIGHT: (0, 1), UP: (-1, 0)}


@dataclass(frozen=True, eq=False)
class GridWorld:
    mdp: Mdp
    policies: dict[str, MarkovPolicy]
    cells: tuple[tuple[int, int], ...]  # (row, col) of every state
    goal: int
    layout: str

    @property
    def index(self) -> dict[tuple[int, int], int]:
        return {c: i for i, c in enumerate(self.cells)}

    def render(self, marks: dict[int, str]) -> str:
        """ASCII map with one character per state taken from ``marks``."""
        rows = [list(line) for line in self.layout.splitlines()]
        for s, (i, j) in enumerate(self.cells):
            rows[i][j] = marks.get(s, " ")
        return "\n".join("".join(r) for r in rows)


GOAL_MODES = ("terminal", "persistent")


def parse_grid(layout: str, goal_reward: float = 1.0, step_reward: float = 0.0,
               gamma: float = 0.9, slip: float = 0.0, goal_mode: str = "terminal") -> GridWorld:
    """Grid MDP from an ASCII map (``w`` wall, ``G`` goal, anything else free).

    Four moves L/D/R/U; bumping into a wall leaves the agent in place. With
    ``goal_mode="terminal"`` the ``goal_reward`` is paid on transitions
    entering the goal, which is absorbing with zero reward. With
    ``"persistent"`` the goal is an ordinary cell paying ``goal_reward`` on
    every step spent in it (a state reward). With ``slip > 0`` the intended
    move is replaced by a uniformly random move with that probability.
    """
    if goal_mode not in GOAL_MODES:
        raise ValueError(f"goal_mode must be one of {GOAL_MODES}")
    lines = layout.splitlines()
    cells = tuple((i, j) for i, line in enumerate(lines) for j, ch in enumerate(line) if ch != "w")
    goals = [k for k, (i, j) in enumerate(cells) if lines[i][j] == "G"]
    if len(goals) != 1:
        raise ValueError("layout needs exactly one goal cell 'G'")
    goal = goals[0]
    index = {c: k for k, c in enumerate(cells)}
    S, A = len(cells), 4
    moves = np.zeros((S, A), dtype=np.int64)
    for k, (i, j) in enumerate(cells):
        for a, (di, dj) in _MOVES.items():
            moves[k, a] = index.get((i + di, j + dj), k)
    _check_connected(moves, goal)
    P = np.zeros((S, A, S))
    for a in range(A):
        P[np.arange(S), a, moves[:, a]] += 1.0 - slip
        for b in range(A):
            P[np.arange(S), a, moves[:, b]] += slip / A
    labels = {k: f"({i},{j})" for k, (i, j) in enumerate(cells)}
    if goal_mode == "terminal":
        P[goal] = 0.0
        P[goal, :, goal] = 1.0
        r = np.full((S, A), step_reward) + (goal_reward - step_reward) * P[:, :, goal]
        r[goal] = 0.0
        mdp = Mdp(P, r, gamma, False, (goal,), labels)
    else:
        r = np.full((S, A), step_reward)
        r[goal] = goal_reward
        mdp = Mdp(P, r, gamma, True, (), labels)
    policies = {f"pi_{name}": MarkovPolicy.constant(a, S, A, f"pi_{name}")
                for a, name in enumerate(ACTION_NAMES)}
    return GridWorld(mdp, policies, cells, goal, layout)


def _check_connected(moves: np.ndarray, start: int) -> None:
    seen = {start}
    frontier = [start]
    # undirected reachability over the move graph
    neighbours = {k: set() for k in range(moves.shape[0])}
    for k in range(moves.shape[0]):
        for nxt in moves[k]:
            neighbours[k].add(int(nxt))
            neighbours[int(nxt)].add(k)
    while frontier:
        k = frontier.pop()
        for nxt in neighbours[k]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    if len(seen) != moves.shape[0]:
        raise ValueError("grid free cells are not connected")


def four_rooms(gamma: float = 0.9, slip: float = 0.0, goal_mode: str = "terminal") -> GridWorld:
    """11x11 four-rooms grid, goal in the top-right-most free cell."""
    return parse_grid(FOUR_ROOMS_MAP, gamma=gamma, slip=slip, goal_mode=goal_mode)


def bfs_distances(grid: GridWorld) -> np.ndarray:
    """Shortest number of moves from every state to the goal (deterministic grids)."""
    S = grid.mdp.n_states
    succ = np.argmax(grid.mdp.transition, axis=2)
    pred = {k: set() for k in range(S)}
    for k in range(S):
        if k == grid.goal:
            continue
        for nxt in succ[k]:
            pred[int(nxt)].add(k)
    dist = np.full(S, -1)
    dist[grid.goal] = 0
    frontier = [grid.goal]
    while frontier:
        nxt_frontier = []
        for k in frontier:
            for p in pred[k]:
                if dist[p] < 0:
                    dist[p] = dist[k] + 1
                    nxt_frontier.append(p)
        frontier = nxt_frontier
    return dist


# --- chain -----------------------------------------------------------------

CHAIN_RIGHT, CHAIN_UP = 0, 1


def chain(k: int = 10, big_reward: float = 10.0, distractors=0.1,
          gamma: float = 0.95) -> tuple[Mdp, MarkovPolicy]:
    """Chain ``x_0 .. x_k`` plus a terminal state, with actions right/up.

    Right moves along the chain (from ``x_k`` it collects ``big_reward`` and
    terminates); up exits immediately with the state's distractor reward.
    The returned initial policy moves right everywhere except ``x_k``.
    """
    if k < 2:
        raise ValueError("chain length k must be at least 2")
    d = np.broadcast_to(np.asarray(distractors, dtype=float), (k + 1,)) \
        if np.ndim(distractors) == 0 else np.asarray(distractors, dtype=float)
    if d.shape != (k + 1,):
        raise ValueError(f"need {k + 1} distractor rewards, got {d.shape[0]}")
    S, A = k + 2, 2
    end = k + 1
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))
    for i in range(k + 1):
        P[i, CHAIN_RIGHT, i + 1 if i < k else end] = 1.0
        P[i, CHAIN_UP, end] = 1.0
        r[i, CHAIN_UP] = d[i]
    r[k, CHAIN_RIGHT] = big_reward
    P[end, :, end] = 1.0
    labels = {i: f"x{i}" for i in range(k + 1)} | {end: "end"}
    mdp = Mdp(P, r, gamma, False, (end,), labels)
    start = [CHAIN_RIGHT] * k + [CHAIN_UP, CHAIN_UP]
    return mdp, MarkovPolicy.deterministic(start, A, "pi_0")


# --- counterexamples -------------------------------------------------------

ACT_A, ACT_B = 0, 1


def script_return(mdp: Mdp, x: int, script: Sequence[int], gamma=1) -> float:
    """Return of an open-loop action script on a deterministic MDP (stops at terminals)."""
    total, discount = 0, 1
    for a in script:
        if x in mdp.terminal:
            break
        total += discount * mdp.reward[x, a]
        discount *= gamma
        x = int(np.argmax(mdp.transition[x, a]))
    return total


def nonmarkov_q_example() -> Mdp:
    """Two states L, R (plus terminal), actions a, b; undiscounted.

    In L both actions move to R with reward 0. In R, ``a`` pays 1 and stays,
    ``b`` terminates with reward 0. The script ``bb`` from L earns 0 and the
    script ``aab`` from R earns 2, which no Markov policy reproduces jointly.
    """
    L, R, T = 0, 1, 2
    P = np.zeros((3, 2, 3))
    r = np.zeros((3, 2))
    P[L, ACT_A, R] = P[L, ACT_B, R] = 1.0
    P[R, ACT_A, R] = 1.0
    r[R, ACT_A] = 1.0
    P[R, ACT_B, T] = 1.0
    P[T, :, T] = 1.0
    return Mdp(P, r, 1.0, False, (T,), {L: "L", R: "R", T: "end"})


def markov_probe_values(mdp: Mdp, p_a_left: float, p_a_right: float) -> tuple[float, float]:
    """``(Q(L, b), Q(R, a))`` of the Markov policy with the given action-``a`` probabilities.

    Policies that keep taking ``a`` in R forever have unbounded value.
    """
    probs = np.array([[p_a_left, 1 - p_a_left], [p_a_right, 1 - p_a_right], [1.0, 0.0]])
    try:
        q = exact_q(mdp, MarkovPolicy(probs))
    except SolverError:
        return np.inf, np.inf
    return float(q[0, ACT_B]), float(q[1, ACT_A])


def nonmarkov_probe_targets(mdp: Mdp) -> tuple[float, float]:
    return script_return(mdp, 0, [ACT_B, ACT_B]), script_return(mdp, 1, [ACT_A, ACT_A, ACT_B])


def markov_match_sweep(mdp: Mdp, grid: int = 101, tol: float = 1e-9) -> list[tuple[float, float]]:
    """Markov policies (deterministic ones plus a probability grid) matching both probes."""
    targets = nonmarkov_probe_targets(mdp)
    matches = []
    points = sorted(set(np.linspace(0.0, 1.0, grid).tolist()) | {0.0, 1.0})
    for pl in points:
        for pr in points:
            qlb, qra = markov_probe_values(mdp, pl, pr)
            if abs(qlb - targets[0]) <= tol and abs(qra - targets[1]) <= tol:
                matches.append((pl, pr))
    return matches


def greedy_nonmarkov_example(gamma: float) -> Mdp:
    """One state, actions a (reward 1) and b (reward 0), both self-loops."""
    P = np.ones((1, 2, 1))
    r = np.array([[1.0, 0.0]])
    return Mdp(P, r, float(gamma), True)


def greedy_nonmarkov_q(gamma):
    """Values of the policy that plays ``a b b b ...`` after ``a`` and ``b a a a ...`` after ``b``.

    Exact for ``Fraction`` input.
    """
    return 1 + 0 * gamma, gamma / (1 - gamma)


def suffix_closure_tree() -> tuple[Mdp, MarkovPolicy, MarkovPolicy]:
    """Depth-3 binary tree, undiscounted; rewards are paid on the final move into a leaf.

    Internal nodes are indexed heap-style (node ``i`` has children ``2i+1``
    (left) and ``2i+2`` (right)); all leaves collapse into one terminal state.
    Leaf rewards by action path from the root: LLR +1, RLR +2, RLL -1,
    every other leaf 0.
    """
    n_internal = 7
    end = n_internal
    S, A = n_internal + 1, 2
    P = np.zeros((S, A, S))
    r = np.zeros((S, A))
    labels = {end: "end"}
    leaf_reward = {"LLR": 1.0, "RLR": 2.0, "RLL": -1.0}
    paths = {0: ""}
    for node in range(n_internal):
        path = paths[node]
        labels[node] = f"x[{path or 'root'}]"
        for a, step in ((0, "L"), (1, "R")):
            child = 2 * node + 1 + a
            if child < n_internal:
                P[node, a, child] = 1.0
                paths[child] = path + step
            else:
                P[node, a, end] = 1.0
                r[node, a] = leaf_reward.get(path + step, 0.0)
    P[end, :, end] = 1.0
    mdp = Mdp(P, r, 1.0, False, (end,), labels)
    return (mdp,
            MarkovPolicy.constant(0, S, A, "pi_L"),
            MarkovPolicy.constant(1, S, A, "pi_R"))


TREE_ROOT, TREE_RIGHT_CHILD = 0, 2


# --- CETD fixtures ---------------------------------------------------------

def _load_fixture(name: str) -> dict:
    return json.loads(resources.files("ggpi.data").joinpath(name).read_text())


def cetd_fixtures() -> tuple[Mdp, Mdp, np.ndarray]:
    """The two three-state single-action chains and the shared initial logits ``(3, 1, 3)``."""
    from ggpi.io import mdp_from_dict

    out = []
    for name in ("cetd_fixture_1.json", "cetd_fixture_2.json"):
        spec = _load_fixture(name)["mdp"]
        # published digits leave row sums off by up to 1e-9
        P = np.asarray(spec["transition"], dtype=float)
        spec = dict(spec, transition=(P / P.sum(axis=2, keepdims=True)).tolist())
        out.append(mdp_from_dict(spec))
    phi0 = np.asarray(_load_fixture("cetd_fixture_1.json")["initial_logits"], dtype=float)
    return out[0], out[1], phi0[:, None, :]


def cetd_fixture_raw(which: int) -> dict:
    """Fixture file contents exactly as shipped (``which`` is 1 or 2)."""
    return _load_fixture(f"cetd_fixture_{which}.json")


# --- random MDPs -----------------------------------------------------------

def random_mdp(n_states: int, n_actions: int, branching: Optional[int] = None,
               reward_scale: float = 1.0, rng: Optional[np.random.Generator] = None,
               gamma: float = 0.9, state_reward_only: bool = False) -> Mdp:
    """Dirichlet(1) transitions over ``branching`` random successors, uniform rewards."""
    rng = np.random.default_rng() if rng is None else rng
    branching = n_states if branching is None else int(branching)
    if not 1 <= branching <= n_states:
        raise ValueError("branching must lie in [1, n_states]")
    P = np.zeros((n_states, n_actions, n_states))
    for x in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=branching, replace=False)
            P[x, a, succ] = rng.dirichlet(np.ones(branching)) if branching > 1 else 1.0
    P /= P.sum(axis=2, keepdims=True)
    if state_reward_only:
        r = np.repeat(rng.uniform(-reward_scale, reward_scale, (n_states, 1)), n_actions, axis=1)
    else:
        r = rng.uniform(-reward_scale, reward_scale, (n_states, n_actions))
    return Mdp(P, r, gamma, state_reward_only)


def random_policy(n_states: int, n_actions: int, rng: np.random.Generator,
                  deterministic: bool = False, name: str = "") -> MarkovPolicy:
    if deterministic:
        return MarkovPolicy.deterministic(rng.integers(n_actions, size=n_states), n_actions, name)
    return MarkovPolicy(rng.dirichlet(np.ones(n_actions), size=n_states), name)


def fraction_or_float(x):
    return x if isinstance(x, Fraction) else float(x)
