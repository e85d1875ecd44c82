import json
from pathlib import Path

import numpy as np
import pytest
from jsonschema import validate as check_schema

from ggpi import cli
from ggpi import io as gio
from ggpi.environments import random_mdp, random_policy
from ggpi.mdp import exact_q
from ggpi.sampling import rng_stream

SCHEMAS = Path(__file__).resolve().parents[1] / "docs" / "schemas"
CSV_COLUMNS = json.loads((SCHEMAS / "csv_columns.json").read_text())


def schema(name):
    return json.loads((SCHEMAS / f"{name}.schema.json").read_text())


def header(path):
    return path.read_text().splitlines()[0].split(",")


def test_four_rooms_outputs(tmp_path, capsys):
    assert cli.main(["four-rooms", "--out", str(tmp_path)]) == 0
    rows = gio.read_csv(tmp_path / "coverage.csv")
    assert len(rows) == 104 * 3
    assert header(tmp_path / "coverage.csv") == CSV_COLUMNS["four-rooms/coverage.csv"]
    summary = gio.read_json(tmp_path / "summary.json")
    check_schema(summary, schema("four_rooms_summary"))
    counts = [summary["coverage"][d]["optimal"] for d in ("1", "2", "3")]
    assert counts == sorted(counts)
    assert (tmp_path / "coverage.png").stat().st_size > 0
    assert "depth 3" in (tmp_path / "coverage_maps.txt").read_text()
    assert gio.read_json(tmp_path / "config.json")["beta"] == 0.8
    assert "depth 3: optimal action in 102/103" in capsys.readouterr().out


def test_policy_iter_chain_sweep_is_deterministic(tmp_path):
    args = ["policy-iter", "--env", "chain", "--chain-k", "4", "--samples", "0", "--seeds", "2",
            "--depth", "1,2", "--gamma", "0.95"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "sweep.csv").read_text()
    assert a == (tmp_path / "b" / "sweep.csv").read_text()
    assert header(tmp_path / "a" / "sweep.csv") == CSV_COLUMNS["policy-iter/sweep.csv"]
    rows = gio.read_csv(tmp_path / "a" / "sweep.csv")
    assert [(r["depth"], r["iterations"]) for r in rows] == [("1", "5"), ("2", "2")] * 2
    check_schema(gio.read_json(tmp_path / "a" / "summary.json"), schema("policy_iter_summary"))
    assert (tmp_path / "a" / "sweep.png").exists()


def test_policy_iter_from_mdp_file(tmp_path):
    mdp = random_mdp(5, 2, rng=rng_stream(0), gamma=0.9)
    gio.save_mdp(tmp_path / "m.json", mdp)
    check_schema(gio.read_json(tmp_path / "m.json"), schema("mdp"))
    assert cli.main(["policy-iter", "--env", "file", "--mdp", str(tmp_path / "m.json"),
                     "--samples", "0", "--seeds", "1", "--out", str(tmp_path / "o")]) == 0
    rows = gio.read_csv(tmp_path / "o" / "sweep.csv")
    assert all(r["reached_optimal"] == "1" for r in rows)


def test_cetd_outputs(tmp_path):
    assert cli.main(["cetd", "--iters", "300", "--seeds", "2", "--eval-every", "100",
                     "--out", str(tmp_path)]) == 0
    trace = tmp_path / "trace_fixture1_cetd_seed0.csv"
    assert header(trace) == CSV_COLUMNS["cetd/trace_fixture{F}_{METHOD}_seed{SEED}.csv"]
    assert len(gio.read_csv(trace)) == 4
    simplex = tmp_path / "simplex_fixture2_ll2td_seed0.csv"
    assert header(simplex) == CSV_COLUMNS["cetd/simplex_fixture{F}_{METHOD}_seed{SEED}.csv"]
    check_schema(gio.read_json(tmp_path / "summary.json"), schema("cetd_summary"))
    for name in ("traces_fixture1.png", "simplex_fixture1_cemc.png"):
        assert (tmp_path / name).exists()


def test_counterexamples_report(tmp_path, capsys):
    assert cli.main(["counterexamples", "--grid", "21", "--out", str(tmp_path)]) == 0
    report = gio.read_json(tmp_path / "report.json")
    check_schema(report, schema("counterexamples_report"))
    assert report["all_match"]
    assert header(tmp_path / "checks.csv") == CSV_COLUMNS["counterexamples/checks.csv"]
    assert "MISMATCH" not in capsys.readouterr().out


def test_counterexamples_nonzero_exit_on_mismatch(tmp_path, monkeypatch):
    bad = [{"check": "x", "stated": "1", "computed": "2", "match": False}]
    monkeypatch.setattr(cli, "counterexample_checks", lambda grid: bad)
    assert cli.main(["counterexamples", "--out", str(tmp_path)]) == 1


@pytest.fixture
def gsp_files(tmp_path):
    mdp = random_mdp(4, 2, rng=rng_stream(5), gamma=0.9)
    r = rng_stream(6)
    pols = {"u": random_policy(4, 2, r, name="u"), "v": random_policy(4, 2, r, name="v")}
    gio.save_mdp(tmp_path / "mdp.json", mdp)
    gio.write_json(tmp_path / "pols.json", gio.policies_to_dict(pols))
    return tmp_path, mdp, pols


def test_eval_gsp_depth_one_matches_exact_q(gsp_files, capsys):
    tmp, mdp, pols = gsp_files
    assert cli.main(["eval-gsp", "--mdp", str(tmp / "mdp.json"), "--policies", str(tmp / "pols.json"),
                     "--gsp", "u", "--samples", "20000", "--pairs", "0:0,3:1",
                     "--out", str(tmp / "o")]) == 0
    report = json.loads((tmp / "o" / "report.json").read_text())
    check_schema(report, schema("eval_gsp_report"))
    check_schema(gio.read_json(tmp / "pols.json"), schema("policies"))
    q = exact_q(mdp, pols["u"])
    for row in report["pairs"]:
        assert row["exact"] == pytest.approx(q[row["state"], row["action"]], abs=1e-12)
        assert abs(row["z"]) < 4


def test_eval_gsp_depth_three_within_three_se(gsp_files):
    tmp, _, _ = gsp_files
    assert cli.main(["eval-gsp", "--mdp", str(tmp / "mdp.json"), "--policies", str(tmp / "pols.json"),
                     "--gsp", "u->v->u", "--alpha", "0.2", "--samples", "20000",
                     "--out", str(tmp / "o")]) == 0
    rows = gio.read_json(tmp / "o" / "report.json")["pairs"]
    assert len(rows) == 8
    assert sum(abs(r["z"]) > 3 for r in rows) <= 1


@pytest.mark.parametrize("spec,message", [("u->", "malformed GSP"), ("u->w", "unknown policies")])
def test_eval_gsp_usage_errors(gsp_files, capsys, spec, message):
    tmp, _, _ = gsp_files
    with pytest.raises(SystemExit) as exc:
        cli.main(["eval-gsp", "--mdp", str(tmp / "mdp.json"), "--policies", str(tmp / "pols.json"),
                  "--gsp", spec, "--out", str(tmp / "o")])
    assert exc.value.code == 2
    assert message in capsys.readouterr().err


def test_transfer_reuses_ghms(tmp_path):
    assert cli.main(["transfer", "--episodes", "2", "--depth", "2", "--samples", "30",
                     "--episode-cap", "40", "--out", str(tmp_path)]) == 0
    summary = gio.read_json(tmp_path / "summary.json")
    check_schema(summary, schema("transfer_summary"))
    assert summary["ghms_reused"] and summary["ghm_builds"] == 8
    check_schema(gio.read_json(tmp_path / "episode0.json"), schema("transfer_episode"))
    assert header(tmp_path / "episodes.csv") == CSV_COLUMNS["transfer/episodes.csv"]


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gamma": 0.8, "slip": 0.1}))
    args = cli.build_parser().parse_args(["four-rooms", "--config", str(cfg), "--gamma", "0.85"])
    config = cli.resolve_config("four-rooms", args)
    assert config["gamma"] == 0.85 and config["slip"] == 0.1 and config["beta"] == 0.8
    cfg.write_text(json.dumps({"nonsense": 1}))
    with pytest.raises(cli.UsageError, match="unknown config keys"):
        cli.resolve_config("four-rooms", cli.build_parser().parse_args(["four-rooms", "--config", str(cfg)]))


@pytest.mark.parametrize("argv", [
    ["four-rooms", "--gamma", "1.5"],
    ["four-rooms", "--beta", "0.95"],
    ["cetd", "--fixture", "3"],
    ["cetd", "--method", "td"],
    ["policy-iter", "--env", "file"],
    ["eval-gsp"],
    ["policy-iter", "--depth", "0"],
])
def test_invalid_configs_exit_2(argv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv + ["--out", str(tmp_path)])
    assert exc.value.code == 2


def test_bootstrap_ci_brackets_mean():
    mean, lo, hi = cli.bootstrap_ci([1.0, 2.0, 3.0, 4.0], rng_stream(0))
    assert lo <= mean <= hi and mean == 2.5
    assert np.isnan(cli.bootstrap_ci([], rng_stream(0))[0])


def test_ghm_export_matches_schema():
    from ggpi.ghm import exact_ghm
    from ggpi.mdp import MarkovPolicy

    mdp = random_mdp(3, 2, rng=rng_stream(8), gamma=0.9)
    table = exact_ghm(mdp, MarkovPolicy.uniform(3, 2), 0.5, "u")
    check_schema(json.loads(json.dumps(gio.ghm_to_dict(table))), schema("ghm"))
