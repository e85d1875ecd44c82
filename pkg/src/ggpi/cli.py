"""Command-line front end: ``ggpi <subcommand> [options]``.

Every subcommand writes its outputs into ``--out`` (created if needed), echoes
the effective configuration to ``config.json`` there, and renders its figures
as PNG files next to the CSV/JSON results. Precedence is command-line flag >
``--config`` JSON file > built-in default.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ggpi import io as gio
from ggpi.sampling import rng_stream

DEFAULTS = {
    "four-rooms": {"gamma": 0.9, "beta": 0.8, "alpha": None, "depth": [1, 2, 3], "slip": 0.0,
                   "goal_mode": "terminal"},
    "policy-iter": {"env": "four-rooms", "goal_mode": "persistent", "gamma": 0.95, "alpha": 0.1,
                    "depth": [1, 2, 3], "samples": 1000, "seeds": 20, "seed": 0, "n_iter": 400,
                    "newest_only": True, "chain_k": 10, "mdp": None, "bootstrap": 2000},
    "cetd": {"fixture": [1, 2], "method": ["cetd", "cemc", "ll2td"], "gamma": 0.9, "iters": 100_000,
             "seeds": 20, "seed": 0, "eval_every": 100, "target_period": 200,
             "schedule": "polynomial", "c": 0.75, "p": 0.6},
    "counterexamples": {"grid": 101},
    "eval-gsp": {"mdp": None, "policies": None, "gsp": None, "alpha": 0.1, "samples": 10_000,
                 "pairs": None, "seed": 0, "gamma": None},
    "transfer": {"gamma": 0.9, "alpha": 0.1, "depth": 3, "samples": 200, "goal": None,
                 "episodes": 5, "episode_cap": 200, "seed": 0, "start": None},
}


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in str(text).split(",") if t.strip()]


def _common(p: argparse.ArgumentParser, depth_list: bool = True) -> None:
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--out", type=Path, default=None, help="output directory")
    p.add_argument("--config", type=Path, help="JSON file with option values")
    p.add_argument("--gamma", type=float, help="discount factor")
    p.add_argument("--alpha", type=float, help="GSP switch probability")
    p.add_argument("--depth", type=_int_list if depth_list else int,
                   help="GGPI depth(s)" + (", comma separated" if depth_list else ""))
    p.add_argument("--samples", type=int, help="composed-GHM samples per GSP and pair (0 = exact)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ggpi", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("four-rooms", help="exact-GHM GGPI coverage of optimal actions per depth")
    _common(p)
    p.add_argument("--beta", type=float, help="intermediate GHM discount (sets alpha)")
    p.add_argument("--slip", type=float, help="probability of a random move")
    p.add_argument("--goal-mode", dest="goal_mode", choices=["terminal", "persistent"])

    p = sub.add_parser("policy-iter", help="seeds x depths sweep of GGPI policy iteration")
    _common(p)
    p.add_argument("--env", choices=["four-rooms", "chain", "file"])
    p.add_argument("--mdp", type=Path, help="MDP JSON (with --env file)")
    p.add_argument("--goal-mode", dest="goal_mode", choices=["terminal", "persistent"])
    p.add_argument("--seeds", type=int, help="number of seeds")
    p.add_argument("--n-iter", dest="n_iter", type=int, help="improvement-step cap")
    p.add_argument("--chain-k", dest="chain_k", type=int, help="chain length")
    p.add_argument("--all-endings", dest="newest_only", action="store_const", const=False,
                   help="use every composition, not only those ending in the newest policy")

    p = sub.add_parser("cetd", help="CETD / CEMC / LL2TD convergence traces on the 3-state fixtures")
    _common(p)
    p.add_argument("--fixture", type=_int_list, help="fixture ids (1, 2)")
    p.add_argument("--method", type=_str_list, help="cetd,cemc,ll2td")
    p.add_argument("--iters", type=int)
    p.add_argument("--seeds", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--target-period", dest="target_period", type=int)
    p.add_argument("--schedule", choices=["polynomial", "constant"])
    p.add_argument("--c", type=float, help="step-size scale")
    p.add_argument("--p", type=float, help="step-size decay exponent")

    p = sub.add_parser("counterexamples", help="check the closure / Markov counterexamples")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--config", type=Path)
    p.add_argument("--grid", type=int, help="grid points per state for the stochastic sweep")

    p = sub.add_parser("eval-gsp", help="estimate and solve Q of one GSP on a given MDP")
    _common(p, depth_list=False)
    p.add_argument("--mdp", type=Path)
    p.add_argument("--policies", type=Path, help="JSON {id: (S, A) probabilities or action list}")
    p.add_argument("--gsp", type=str, help="GSP spec, e.g. 'pi_a->pi_b'")
    p.add_argument("--pairs", type=str, help="state:action pairs, e.g. '0:1,3:0' (default all)")

    p = sub.add_parser("transfer", help="zero-shot GGPI episodes on four-rooms with a revealed goal")
    _common(p, depth_list=False)
    p.add_argument("--goal", type=_int_list, help="goal cell as row,col")
    p.add_argument("--episodes", type=int)
    p.add_argument("--episode-cap", dest="episode_cap", type=int)
    p.add_argument("--start", type=_int_list, help="start cell as row,col (default: random)")
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    config = dict(DEFAULTS[command])
    if getattr(args, "config", None):
        loaded = gio.read_json(args.config)
        unknown = set(loaded) - set(config) - {"out"}
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        config.update(loaded)
    for key, value in vars(args).items():
        if key in ("command", "config", "out") or value is None:
            continue
        config[key] = value
    out = args.out if args.out is not None else config.get("out") or Path("runs") / command
    config["out"] = str(out)
    _validate(command, config)
    return config


def _validate(command: str, c: dict) -> None:
    def need(ok, msg):
        if not ok:
            raise UsageError(msg)

    if c.get("gamma") is not None:
        need(0.0 <= c["gamma"] <= 1.0, f"gamma must lie in [0, 1], got {c['gamma']}")
    if c.get("alpha") is not None:
        need(0.0 < c["alpha"] <= 1.0, f"alpha must lie in (0, 1], got {c['alpha']}")
    if "depth" in c:
        depths = c["depth"] if isinstance(c["depth"], list) else [c["depth"]]
        need(depths and all(int(d) >= 1 for d in depths), "depths must be positive integers")
    for key in ("samples", "seeds", "iters", "n_iter", "episodes", "episode_cap", "eval_every"):
        if c.get(key) is not None:
            need(int(c[key]) >= 0, f"{key} must be non-negative")
    if command == "cetd":
        need(set(c["fixture"]) <= {1, 2}, "fixtures are 1 and 2")
        need(set(c["method"]) <= {"cetd", "cemc", "ll2td"}, f"unknown method in {c['method']}")
        need(c["iters"] >= 1 and c["seeds"] >= 1, "iters and seeds must be positive")
    if command == "four-rooms":
        need(c["alpha"] is not None or 0.0 < c["beta"] < c["gamma"], "need 0 < beta < gamma")
    if command == "eval-gsp":
        for key in ("mdp", "policies", "gsp"):
            need(c.get(key), f"--{key} is required")
    if command == "policy-iter" and c["env"] == "file":
        need(c.get("mdp"), "--mdp is required with --env file")


def _prepare_out(config: dict) -> Path:
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    gio.write_json(out / "config.json", {k: (str(v) if isinstance(v, Path) else v)
                                         for k, v in config.items()})
    return out


def bootstrap_ci(values: Sequence[float], rng: np.random.Generator, n_boot: int = 2000,
                 level: float = 0.95) -> tuple[float, float, float]:
    """Mean and percentile-bootstrap interval."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan"), float("nan"), float("nan")
    idx = rng.integers(values.size, size=(n_boot, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return float(values.mean()), float(lo), float(hi)


# --- subcommands -----------------------------------------------------------

def cmd_four_rooms(config: dict) -> int:
    from ggpi.algorithms import alpha_for_beta, coverage
    from ggpi.environments import ACTION_NAMES, four_rooms
    from ggpi.plotting import coverage_maps

    out = _prepare_out(config)
    grid = four_rooms(config["gamma"], config["slip"], config["goal_mode"])
    alpha = config["alpha"] if config["alpha"] is not None else alpha_for_beta(config["gamma"], config["beta"])
    results = coverage(grid.mdp, grid.policies, alpha, config["depth"])
    rows = []
    maps = []
    for res in results:
        for s in range(grid.mdp.n_states):
            rows.append({"state": s, "cell": grid.mdp.label(s), "depth": res.depth,
                         "chosen_action": ACTION_NAMES[int(res.actions[s])],
                         "is_optimal": int(bool(res.optimal[s]))})
        marks = {s: ("G" if s == grid.goal else ("o" if res.optimal[s] else "x"))
                 for s in range(grid.mdp.n_states)}
        maps.append(f"depth {res.depth}: {res.n_optimal}/{res.n_states} optimal (o optimal, x not)\n"
                    + grid.render(marks))
    gio.write_csv(out / "coverage.csv", rows, ["state", "cell", "depth", "chosen_action", "is_optimal"])
    gio.write_text(out / "coverage_maps.txt", "\n\n".join(maps) + "\n")
    summary = {"alpha": alpha, "beta": config["gamma"] * (1 - alpha),
               "coverage": {r.depth: {"optimal": r.n_optimal, "states": r.n_states,
                                      "fraction": r.fraction} for r in results}}
    gio.write_json(out / "summary.json", summary)
    coverage_maps(grid, results, out / "coverage.png")
    for r in results:
        print(f"depth {r.depth}: optimal action in {r.n_optimal}/{r.n_states} states ({r.fraction:.1%})")
    return 0


def _pi_env(config: dict):
    from ggpi.environments import chain, four_rooms

    if config["env"] == "four-rooms":
        return four_rooms(config["gamma"], goal_mode=config["goal_mode"]).mdp, None
    if config["env"] == "chain":
        mdp, pi0 = chain(config["chain_k"], gamma=config["gamma"])
        return mdp, pi0
    mdp = gio.load_mdp(config["mdp"])
    if config.get("gamma") is not None:
        mdp = mdp.with_gamma(config["gamma"])
    return mdp, None


def run_policy_iter_sweep(config: dict, progress=None) -> tuple[list[dict], dict]:
    from ggpi.algorithms import ggpi_policy_iteration, random_deterministic_policy
    from ggpi.mdp import value_iteration

    mdp, fixed_init = _pi_env(config)
    solution = value_iteration(mdp)
    n_samples = config["samples"] or None
    rows = []
    for seed in range(config["seed"], config["seed"] + config["seeds"]):
        for depth in config["depth"]:
            rng = rng_stream(seed, depth)
            init = fixed_init if fixed_init is not None else \
                random_deterministic_policy(mdp, rng_stream(seed))
            rec = ggpi_policy_iteration(mdp, init, depth, config["alpha"], n_samples, config["n_iter"],
                                        rng, newest_only=config["newest_only"], solution=solution,
                                        stop_when_optimal=True)
            reached = rec.first_optimal is not None
            rows.append({"depth": depth, "seed": seed,
                         "iterations": rec.first_optimal if reached else rec.iterations,
                         "total_samples": rec.total_samples, "reached_optimal": int(reached)})
            if progress:
                progress(rows[-1])
    rng = rng_stream(config["seed"], 10_000)
    summary = {}
    for depth in config["depth"]:
        sel = [r for r in rows if r["depth"] == depth]
        entry = {"runs": len(sel), "reached_optimal": sum(r["reached_optimal"] for r in sel)}
        for key in ("iterations", "total_samples"):
            mean, lo, hi = bootstrap_ci([r[key] for r in sel], rng, config["bootstrap"])
            entry[key] = {"mean": mean, "ci_low": lo, "ci_high": hi}
        summary[depth] = entry
    return rows, summary


def cmd_policy_iter(config: dict) -> int:
    from ggpi.plotting import depth_sweep

    out = _prepare_out(config)
    rows, summary = run_policy_iter_sweep(
        config, progress=lambda r: print("depth {depth} seed {seed}: {iterations} steps, "
                                         "{total_samples} samples, optimal={reached_optimal}".format(**r)))
    gio.write_csv(out / "sweep.csv", rows, ["depth", "seed", "iterations", "total_samples", "reached_optimal"])
    gio.write_json(out / "summary.json", {str(k): v for k, v in summary.items()})
    depth_sweep(summary, out / "sweep.png")
    for d, s in summary.items():
        print(f"depth {d}: mean steps {s['iterations']['mean']:.2f} "
              f"[{s['iterations']['ci_low']:.2f}, {s['iterations']['ci_high']:.2f}], "
              f"mean samples {s['total_samples']['mean']:.3g}, "
              f"reached optimal {s['reached_optimal']}/{s['runs']}")
    return 0


def cmd_cetd(config: dict) -> int:
    from ggpi.cetd import StepSchedule, run_learners
    from ggpi.environments import cetd_fixtures
    from ggpi.ghm import exact_ghm
    from ggpi.mdp import MarkovPolicy
    from ggpi.plotting import convergence_traces, simplex_paths

    out = _prepare_out(config)
    fixtures = dict(zip((1, 2), cetd_fixtures()[:2]))
    phi0 = cetd_fixtures()[2]
    schedule = StepSchedule(config["schedule"], config["c"], config["p"])
    seeds = list(range(config["seed"], config["seed"] + config["seeds"]))
    summary = {}
    for fid in config["fixture"]:
        mdp = fixtures[fid].with_gamma(config["gamma"])
        policy = MarkovPolicy.uniform(mdp.n_states, mdp.n_actions)
        truth = exact_ghm(mdp, policy, config["gamma"])
        first = {}
        for method in config["method"]:
            _, traces = run_learners(method, mdp, policy, config["gamma"], schedule, config["iters"],
                                     [rng_stream(s) for s in seeds], config["eval_every"], phi0,
                                     config["target_period"], keep_dists=True)
            for seed, tr in zip(seeds, traces):
                gio.write_csv(out / f"trace_fixture{fid}_{method}_seed{seed}.csv", tr.rows(),
                              ["iteration", "lyapunov", "max_tv", "epsilon"])
            simplex_rows = []
            tr = traces[0]
            for k, dist in zip(tr.iteration, tr.dists):
                for x in range(mdp.n_states):
                    simplex_rows.append({"iteration": k, "state": x,
                                         **{f"p{y}": float(dist[x, 0, y]) for y in range(mdp.n_states)}})
            gio.write_csv(out / f"simplex_fixture{fid}_{method}_seed{seeds[0]}.csv", simplex_rows,
                          ["iteration", "state"] + [f"p{y}" for y in range(mdp.n_states)])
            simplex_paths(np.stack(tr.dists), truth.dist, out / f"simplex_fixture{fid}_{method}.png")
            first[method] = tr
            tvs = [t.final_tv for t in traces]
            ratios = [t.final_lyapunov / t.lyapunov[0] for t in traces]
            summary[f"fixture{fid}/{method}"] = {
                "median_final_max_tv": float(np.median(tvs)), "max_final_max_tv": float(np.max(tvs)),
                "median_final_lyapunov": float(np.median([t.final_lyapunov for t in traces])),
                "median_lyapunov_ratio": float(np.median(ratios)),
                "robbins_monro": schedule.robbins_monro,
            }
            print(f"fixture {fid} {method}: median final max-TV {np.median(tvs):.4f}, "
                  f"median final/initial Lyapunov {np.median(ratios):.4f}")
        convergence_traces({f"{m} (seed {seeds[0]})": t for m, t in first.items()},
                           out / f"traces_fixture{fid}.png")
    gio.write_json(out / "summary.json", summary)
    return 0


def counterexample_checks(grid: int = 101) -> list[dict]:
    """Stated versus computed value for every counterexample check."""
    from ggpi.environments import (
        ACT_A, TREE_RIGHT_CHILD, TREE_ROOT, greedy_nonmarkov_example, greedy_nonmarkov_q,
        markov_match_sweep, markov_probe_values, nonmarkov_probe_targets, nonmarkov_q_example,
        script_return, suffix_closure_tree,
    )
    from ggpi.gsp import Gsp, exact_gsp_q
    from ggpi.improvement import GspSet, close_suffixes, ggpi, is_suffix_closed, policy_return

    checks = []

    def check(name, stated, computed):
        ok = stated == computed if isinstance(stated, (bool, str)) else \
            abs(float(stated) - float(computed)) <= 1e-9
        checks.append({"check": name, "stated": str(stated), "computed": str(computed), "match": ok})

    # binary tree: greedy w.r.t. one GSP is harmful; its suffix-closed set is not
    tree, pl, pr = suffix_closure_tree()
    pols = {"pi_L": pl, "pi_R": pr}
    # alpha = 1 switches after every step: from (x, a) the GSP then plays L, R
    nu = Gsp(("pi_L", "pi_L", "pi_R"), 1.0)
    q = exact_gsp_q(nu, tree, pols)
    check("tree Q^nu(root, L)", 1, q[TREE_ROOT, 0])
    check("tree Q^nu(root, R)", 2, q[TREE_ROOT, 1])
    check("tree Q^nu(right child, L)", -1, q[TREE_RIGHT_CHILD, 0])
    check("tree Q^nu(right child, R)", 0, q[TREE_RIGHT_CHILD, 1])
    lone = GspSet([nu])
    greedy_lone = ggpi(lone, tree, pols, unsafe=True)
    check("tree return of greedy w.r.t. the single GSP", 0, policy_return(tree, greedy_lone.policy, TREE_ROOT))
    closed = close_suffixes(lone)
    check("closed set is suffix-closed", True, is_suffix_closed(closed).closed)
    check("tree return of GGPI over the closed set", 2,
          policy_return(tree, ggpi(closed, tree, pols).policy, TREE_ROOT))

    # one-state MDP: greedy w.r.t. a non-Markov policy flips at gamma = 1/2
    for gamma, preferred in ((Fraction(2, 5), "a"), (Fraction(3, 5), "b")):
        qa, qb = greedy_nonmarkov_q(gamma)
        check(f"one-state Q(a) at gamma={gamma}", 1, qa)
        check(f"one-state Q(b) at gamma={gamma}", gamma / (1 - gamma), qb)
        check(f"one-state greedy action at gamma={gamma}", preferred, "a" if qa >= qb else "b")
    check("one-state Q(a) by script rollout", 1,
          script_return(greedy_nonmarkov_example(0.5), 0, [ACT_A], gamma=Fraction(1, 2)))

    # two-state MDP: no Markov policy matches both probed entries
    mdp = nonmarkov_q_example()
    targets = nonmarkov_probe_targets(mdp)
    check("two-state script bb from L", 0, targets[0])
    check("two-state script aab from R", 2, targets[1])
    det = [(pl_, pr_) for pl_ in (0.0, 1.0) for pr_ in (0.0, 1.0)
           if markov_probe_values(mdp, pl_, pr_) == targets]
    check("deterministic Markov policies matching both entries", 0, len(det))
    check(f"stochastic Markov policies matching both entries ({grid}-point grid)", 0,
          len(markov_match_sweep(mdp, grid)))
    return checks


def cmd_counterexamples(config: dict) -> int:
    out = _prepare_out(config)
    checks = counterexample_checks(config["grid"])
    width = max(len(c["check"]) for c in checks)
    for c in checks:
        flag = "ok" if c["match"] else "MISMATCH"
        print(f"{c['check']:<{width}}  stated {c['stated']:>8}  computed {c['computed']:>8}  {flag}")
    gio.write_csv(out / "checks.csv", checks, ["check", "stated", "computed", "match"])
    failed = [c for c in checks if not c["match"]]
    gio.write_json(out / "report.json", {"checks": checks, "all_match": not failed})
    return 1 if failed else 0


def _parse_pairs(text: Optional[str], mdp) -> list[tuple[int, int]]:
    if not text:
        return [(x, a) for x in range(mdp.n_states) for a in range(mdp.n_actions)]
    pairs = []
    for item in text.split(","):
        try:
            x, a = (int(v) for v in item.split(":"))
        except ValueError:
            raise UsageError(f"malformed pair {item!r}; expected state:action")
        if not (0 <= x < mdp.n_states and 0 <= a < mdp.n_actions):
            raise UsageError(f"pair {item!r} out of range")
        pairs.append((x, a))
    return pairs


def cmd_eval_gsp(config: dict) -> int:
    from ggpi.gsp import GhmRegistry, Gsp, exact_gsp_q, gsp_q_estimate

    mdp = gio.load_mdp(config["mdp"])
    if config.get("gamma") is not None:
        mdp = mdp.with_gamma(config["gamma"])
    policies = gio.policies_from_dict(gio.read_json(config["policies"]), mdp)
    try:
        gsp = Gsp.parse(config["gsp"], config["alpha"])
    except ValueError as err:
        raise UsageError(str(err))
    missing = [p for p in gsp.policies if p not in policies]
    if missing:
        raise UsageError(f"GSP names unknown policies {missing}; known: {sorted(policies)}")
    if gsp.depth > 1 and mdp.gamma >= 1.0:
        raise UsageError("sampled evaluation needs gamma < 1")
    pairs = _parse_pairs(config.get("pairs"), mdp)
    out = _prepare_out(config)
    registry = GhmRegistry(policies, mdp.gamma, config["alpha"], mdp)
    exact = exact_gsp_q(gsp, mdp, policies)
    rng = rng_stream(config["seed"])
    rows = []
    for x, a in pairs:
        row = {"state": x, "action": a, "exact": float(exact[x, a])}
        if config["samples"]:
            mean, se = gsp_q_estimate(gsp, registry, mdp, x, a, config["samples"], rng)
            row.update(estimate=mean, se=se,
                       z=(mean - row["exact"]) / se if se > 0 else 0.0)
        rows.append(row)
    report = {"gsp": str(gsp), "alpha": gsp.alpha, "gamma": mdp.gamma, "samples": config["samples"],
              "pairs": rows}
    gio.write_json(out / "report.json", report)
    print(json.dumps(report, indent=2))
    return 0


def cmd_transfer(config: dict) -> int:
    from ggpi.algorithms import ggpi_transfer
    from ggpi.environments import four_rooms
    from ggpi.gsp import GhmRegistry
    from ggpi.improvement import depth_m_set

    out = _prepare_out(config)
    # persistent goal: dynamics do not depend on where the goal is, so GHMs carry over
    grid = four_rooms(config["gamma"], goal_mode="persistent")
    mdp0 = grid.mdp
    index = grid.index
    rng = rng_stream(config["seed"])
    n_samples = config["samples"] or None
    registry = GhmRegistry(grid.policies, mdp0.gamma, config["alpha"], mdp0)
    gsps = depth_m_set(sorted(grid.policies), config["alpha"], config["depth"])
    if n_samples is not None:
        for pid in grid.policies:
            registry.get(pid, "gamma")
            registry.get(pid, "beta")

    def cell_state(cell, what):
        if cell is None:
            return None
        if len(cell) != 2 or tuple(cell) not in index:
            raise UsageError(f"{what} {cell} is not a free cell")
        return index[tuple(cell)]

    goal = cell_state(config.get("goal"), "goal")
    start = cell_state(config.get("start"), "start")
    builds_after_first = None
    records = []
    for ep in range(config["episodes"]):
        g = goal if (goal is not None and ep == 0) else (grid.goal if ep == 0 else int(rng.integers(mdp0.n_states)))
        s = start if start is not None else int(rng.integers(mdp0.n_states))
        reward = np.zeros_like(mdp0.reward)
        reward[g] = 1.0
        task = mdp0.with_reward(reward, state_reward_only=True)
        rec = ggpi_transfer(task, registry, config["depth"], n_samples, s, config["episode_cap"], rng,
                            gsps=gsps, stop_states=[g])
        if builds_after_first is None:
            builds_after_first = registry.builds
        records.append({"episode": ep, "goal": mdp0.label(g), "start": mdp0.label(s),
                        "steps": rec.n_steps, "reached_goal": int(rec.reached_goal),
                        "shortest": _shortest(mdp0, s, g), "ghm_builds": registry.builds})
        gio.write_json(out / f"episode{ep}.json", rec.to_dict())
        print(f"episode {ep}: goal {mdp0.label(g)} start {mdp0.label(s)} -> "
              f"{'reached' if rec.reached_goal else 'not reached'} in {rec.n_steps} steps "
              f"(shortest {records[-1]['shortest']}), GHM builds {registry.builds}")
    gio.write_csv(out / "episodes.csv", records,
                  ["episode", "goal", "start", "steps", "reached_goal", "shortest", "ghm_builds"])
    reused = all(r["ghm_builds"] == builds_after_first for r in records)
    gio.write_json(out / "summary.json", {"episodes": len(records), "ghm_builds": registry.builds,
                                          "ghms_reused": reused})
    return 0


def _shortest(mdp, start: int, goal: int) -> int:
    """Fewest moves from ``start`` to ``goal`` over transitions with positive probability."""
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for x in frontier:
            for y in np.flatnonzero(mdp.transition[x].max(axis=0) > 0):
                if int(y) not in dist:
                    dist[int(y)] = dist[x] + 1
                    nxt.append(int(y))
        frontier = nxt
    return dist.get(goal, -1)


COMMANDS = {
    "four-rooms": cmd_four_rooms,
    "policy-iter": cmd_policy_iter,
    "cetd": cmd_cetd,
    "counterexamples": cmd_counterexamples,
    "eval-gsp": cmd_eval_gsp,
    "transfer": cmd_transfer,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args.command, args)
        return COMMANDS[args.command](config)
    except UsageError as err:
        parser.error(str(err))  # exits with status 2
    except (FileNotFoundError, json.JSONDecodeError) as err:
        print(f"ggpi: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
