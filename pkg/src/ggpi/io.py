"""JSON and CSV formats for MDPs, policies, GHMs and run outputs.

MDP JSON::

    {"transition": [[[...], ...], ...],   # (S, A, S)
     "reward": [[...], ...],              # (S, A)
     "gamma": 0.9,
     "state_reward_only": false,          # optional
     "terminal": [12],                    # optional
     "labels": {"0": "start"}}            # optional

GHM JSON: ``{"policy": id, "beta": b, "dist": (S, A, S)}``.
Policies JSON: ``{id: (S, A) action probabilities}``.

All writers go through a temporary file in the destination directory and an
atomic rename.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ggpi.ghm import GhmTable
from ggpi.mdp import MarkovPolicy, Mdp, validate


def mdp_to_dict(mdp: Mdp) -> dict:
    out = {
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
        "gamma": mdp.gamma,
        "state_reward_only": mdp.state_reward_only,
        "terminal": list(mdp.terminal),
    }
    if mdp.labels:
        out["labels"] = {str(k): v for k, v in mdp.labels.items()}
    return out


def mdp_from_dict(spec: Mapping, check: bool = True) -> Mdp:
    missing = [k for k in ("transition", "reward", "gamma") if k not in spec]
    if missing:
        raise ValueError(f"MDP spec lacks required keys {missing}")
    labels = spec.get("labels")
    mdp = Mdp(
        np.asarray(spec["transition"], dtype=float),
        np.asarray(spec["reward"], dtype=float),
        float(spec["gamma"]),
        bool(spec.get("state_reward_only", False)),
        tuple(spec.get("terminal", ())),
        {int(k): str(v) for k, v in labels.items()} if labels else None,
    )
    if check:
        validate(mdp)
    return mdp


def ghm_to_dict(table: GhmTable) -> dict:
    return {"policy": table.policy, "beta": table.beta, "dist": table.dist.tolist()}


def ghm_from_dict(spec: Mapping) -> GhmTable:
    return GhmTable(str(spec["policy"]), float(spec["beta"]), np.asarray(spec["dist"], dtype=float))


def policies_to_dict(policies: Mapping[str, MarkovPolicy]) -> dict:
    return {pid: p.probs.tolist() for pid, p in policies.items()}


def policies_from_dict(spec: Mapping, mdp: Mdp | None = None) -> dict[str, MarkovPolicy]:
    out = {}
    for pid, probs in spec.items():
        probs = np.asarray(probs, dtype=float)
        if probs.ndim == 1:
            # a list of actions
            n_actions = mdp.n_actions if mdp is not None else int(probs.max()) + 1
            out[pid] = MarkovPolicy.deterministic(probs.astype(int), n_actions, pid)
        else:
            out[pid] = MarkovPolicy(probs, pid)
    return out


def _atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_text(path, text: str) -> Path:
    return _atomic_write(path, text)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path, data) -> Path:
    return _atomic_write(path, json.dumps(data, indent=2, default=_jsonable) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, rows: Iterable[Mapping], columns: Sequence[str]) -> Path:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: row[c] for c in columns})
    return _atomic_write(path, buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def save_mdp(path, mdp: Mdp) -> Path:
    return write_json(path, mdp_to_dict(mdp))


def load_mdp(path) -> Mdp:
    return mdp_from_dict(read_json(path))
