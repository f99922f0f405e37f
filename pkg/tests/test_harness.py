import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from bayes_o2o import cli
from bayes_o2o.harness import verify
from bayes_o2o.harness.config import (DEFAULTS, PRESETS, ConfigError, ExperimentConfig, from_preset,
                                      load_config, presets_for)
from bayes_o2o.harness.plotting import render_curves
from bayes_o2o.harness.runner import RunManifest, check_manifest, read_metrics, run_suite, trace_rows
from bayes_o2o.harness.summary import (SummaryRow, checkpoints, read_summary, summarize, summarize_curves,
                                       summarize_files, summary_to_csv)
from bayes_o2o.traces import RegretTrace


def small_config(suite, seeds=(0, 1), **overrides):
    params = json.loads(json.dumps(DEFAULTS[suite]))
    params.update({
        "bandit": dict(horizon=300, agents=["ucb", "lcb", "ts"]),
        "counterexample": dict(ucb_draws=200, lcb_draws=20, horizon=50),
        "linmdp": dict(episodes=6, replays=10, info_samples=100),
        "bounds": dict(N=[0, 10, 100], T=[1, 10, 100]),
        "boorl": dict(dataset_size=200, total_steps=100, batch_size=16, variants=["boorl", "pessimistic"]),
    }[suite])
    params.update(overrides)
    return ExperimentConfig(suite, params, list(seeds))


def write_config(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


# ----------------------------------------------------------------- config

def test_dilemma_preset_parameters():
    cfg = from_preset("dilemma")
    p = cfg.params
    assert (cfg.suite, p["n_arms"], p["offline_pulls"], p["horizon"]) == ("bandit", 10, 1000, 100_000)
    kinds = {tag.rstrip("0123456789.") for tag in p["agents"]}
    assert kinds == {"ucb", "lcb", "ts", "soft", "hard"}
    assert len(cfg.seeds) == 100


def test_every_preset_validates():
    for name, (suite, _, _) in PRESETS.items():
        assert from_preset(name).suite == suite
        assert name in presets_for(suite)


@pytest.mark.parametrize("mutate,match", [
    (lambda d: d.update(suite="poker"), "unknown suite"),
    (lambda d: d.update(seeds=[]), "seeds"),
    (lambda d: d.update(seeds=[1, 1]), "distinct"),
    (lambda d: d.update(seeds=[-1]), "non-negative"),
    (lambda d: d.update(schema_version=99), "schema_version"),
    (lambda d: d["params"].update(gamma=1), "unknown parameter"),
    (lambda d: d["params"].pop("k"), "missing parameter"),
    (lambda d: d["params"].update(horizon="long"), "horizon"),
    (lambda d: d["params"].update(n_arms=1), "n_arms"),
    (lambda d: d["params"].update(agents=["ucb", "greedy"]), "greedy"),
    (lambda d: d["params"].update(agents=["soft0"]), "positive"),
])
def test_invalid_configs_rejected(mutate, match):
    doc = dict(suite="bandit", params=json.loads(json.dumps(DEFAULTS["bandit"])), seeds=[0])
    mutate(doc)
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig(**doc)


def test_unknown_preset_and_variant():
    with pytest.raises(ConfigError):
        from_preset("appendix")
    with pytest.raises(ConfigError, match="variants"):
        small_config("boorl", variants=["boorl", "dqn"])


def test_load_config_with_preset_and_overrides(tmp_path):
    path = write_config(tmp_path, {"preset": "bandit_smoke", "seeds": [4], "params": {"horizon": 50}})
    cfg = load_config(path)
    assert cfg.suite == "bandit" and cfg.seeds == [4]
    assert cfg.params["horizon"] == 50 and cfg.params["agents"] == ["ucb", "lcb", "ts"]


@pytest.mark.parametrize("doc", [[1, 2], {"suite": "bandit", "bogus": 1},
                                 {"preset": "bound_grid", "suite": "bandit"},
                                 {"preset": "bound_grid", "params": [1]}])
def test_load_config_errors(tmp_path, doc):
    with pytest.raises(ConfigError):
        load_config(write_config(tmp_path, doc))


def test_load_config_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")


def test_digest_ignores_output_dir():
    a = from_preset("bound_grid", output_dir="x")
    b = from_preset("bound_grid", output_dir="y")
    c = from_preset("bound_grid", seeds=[1])
    assert a.digest() == b.digest() != c.digest()


# ---------------------------------------------------------------- summary

def test_checkpoints_log_spaced():
    steps = checkpoints(100_000)
    assert steps[0] == 1 and steps[-1] == 100_000
    assert len(steps) <= 50 and np.all(np.diff(steps) > 0)
    np.testing.assert_array_equal(checkpoints(1), [1])
    with pytest.raises(ValueError):
        checkpoints(0)


def test_single_trace_has_zero_std():
    rows = summarize({"ts": [RegretTrace(np.random.default_rng(0).random(500))]})
    assert all(r.std == 0.0 for r in rows)


def test_identical_constant_traces():
    c = 0.25
    trace = RegretTrace(np.r_[c, np.zeros(99)])
    rows = summarize({"a": [trace, RegretTrace(trace.instantaneous.copy())]})
    assert all(r.mean == c and r.std == 0.0 for r in rows)


def test_checkpoint_means_are_midpoints():
    rows = summarize_curves([np.arange(10.0), np.arange(10.0, 20.0)], "x")
    for r in rows:
        lo, hi = r.step - 1, r.step - 1 + 10
        assert r.mean == (lo + hi) / 2
        assert r.std == pytest.approx(np.std([lo, hi], ddof=1))


def test_summary_rejects_ragged_curves():
    with pytest.raises(ValueError):
        summarize_curves([np.zeros(5), np.zeros(6)], "x")
    with pytest.raises(ValueError):
        summarize_curves([], "x")


def test_summary_from_thinned_files(tmp_path):
    traces = [RegretTrace(np.random.default_rng(s).random(1000)) for s in range(3)]
    paths = [t.write_csv(tmp_path / f"t{i}.csv", trace_rows(1000, 100)) for i, t in enumerate(traces)]
    from_files = summarize_files({"a": paths})
    direct = summarize({"a": traces})
    assert [(r.step, r.mean) for r in from_files] == pytest.approx([(r.step, r.mean) for r in direct])
    sparse = traces[0].write_csv(tmp_path / "sparse.csv", [1, 500, 1000])
    with pytest.raises(ValueError, match="checkpoint"):
        summarize_files({"a": [sparse]})


def test_summary_csv_round_trip(tmp_path):
    rows = [SummaryRow("ucb", 1, 0.5, 0.0), SummaryRow("ucb", 10, 2.5, 0.125)]
    path = tmp_path / "summary.csv"
    path.write_text(summary_to_csv(rows))
    assert path.read_text().splitlines()[0] == "agent,step,mean,std"
    assert read_summary(path) == rows


# --------------------------------------------------------------- plotting

def test_single_point_svg_is_valid_xml():
    svg = render_curves([SummaryRow("ts", 1, 0.3, 0.0)])
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")


def test_five_agent_curves_labelled_and_byte_identical():
    agents = ["ucb", "lcb", "ts", "soft2", "hard2"]
    rows = [SummaryRow(a, int(s), float(i + np.log(s)), 0.1) for i, a in enumerate(agents)
            for s in checkpoints(1000)]
    svg = render_curves(rows, title="five")
    texts = {el.text for el in ET.fromstring(svg).iter() if el.tag.endswith("text")}
    assert set(agents) <= texts
    assert render_curves(rows, title="five") == svg
    with pytest.raises(ValueError):
        render_curves([])


# ----------------------------------------------------------------- runner

def test_bandit_run_outputs_and_manifest(tmp_path):
    cfg = small_config("bandit")
    manifest = run_suite(cfg, tmp_path)
    assert {g["agent"] for g in manifest.traces} == {"ucb", "lcb", "ts"}
    assert all(len(g["files"]) == 2 for g in manifest.traces)
    for name in ("summary.csv", "curves.svg", "manifest.json", "config.json", "runs.jsonl"):
        assert (tmp_path / name).exists()
    ET.fromstring((tmp_path / "curves.svg").read_text())
    assert check_manifest(tmp_path / "manifest.json") == []
    assert RunManifest.load(tmp_path / "manifest.json").config_hash == cfg.digest()
    # every trace file is a complete per-step trace
    rel = manifest.traces[0]["files"][0]
    assert len(RegretTrace.read_csv(tmp_path / rel)) == 300


def test_manifest_detects_tampering(tmp_path):
    manifest = run_suite(small_config("bandit", seeds=[0]), tmp_path)
    rel = manifest.traces[0]["files"][0]
    path = tmp_path / rel
    path.write_text(path.read_text().replace("step", "STEP", 1))
    assert any("hash mismatch" in p for p in check_manifest(tmp_path / "manifest.json"))
    path.unlink()
    assert any("missing" in p for p in check_manifest(tmp_path / "manifest.json"))


def test_rerun_gives_identical_files(tmp_path):
    cfg = small_config("bandit")
    a = run_suite(cfg, tmp_path / "a")
    b = run_suite(cfg, tmp_path / "b")
    assert a.files == b.files and a.summary == b.summary
    for rel in a.files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_thinned_bandit_traces(tmp_path):
    manifest = run_suite(small_config("bandit", seeds=[0], horizon=1000, trace_stride=100), tmp_path)
    rel = manifest.traces[0]["files"][0]
    rows = (tmp_path / rel).read_text().splitlines()[1:]
    assert len(rows) < 1000
    assert check_manifest(tmp_path / "manifest.json") == []


def test_bounds_single_seed_lists_one_file(tmp_path):
    manifest = run_suite(from_preset("bound_grid", seeds=[1]), tmp_path)
    assert list(manifest.files) == ["bounds/bound_curve.csv"]
    lines = (tmp_path / "bounds/bound_curve.csv").read_text().splitlines()
    assert lines[0] == "N,T,bound" and len(lines) == 1 + 50 * 50


def test_counterexample_metrics(tmp_path):
    manifest = run_suite(small_config("counterexample", seeds=[0]), tmp_path)
    assert manifest.metrics and not manifest.traces
    values = read_metrics(tmp_path / manifest.metrics[0])
    assert values
    assert set(manifest.summary["metrics"]) == set(values)


def test_linmdp_suite(tmp_path):
    manifest = run_suite(small_config("linmdp", seeds=[0]), tmp_path)
    assert any(rel.endswith(".jsonl") for rel in manifest.files)
    assert check_manifest(tmp_path / "manifest.json") == []


def test_boorl_suite(tmp_path):
    manifest = run_suite(small_config("boorl", seeds=[0, 1]), tmp_path)
    assert [g["agent"] for g in manifest.traces] == ["boorl", "pessimistic"]
    assert "boorl/comparison.csv" in manifest.files
    assert (tmp_path / "curves.svg").exists()
    assert check_manifest(tmp_path / "manifest.json") == []


# ----------------------------------------------------------------- verify

def test_check_result_line():
    assert verify.CheckResult(3, "demo", False, "x=1", 2.0).line() == "[FAIL]  3 demo: x=1 (2.0s)"
    assert verify.CheckResult(11, "demo", True, "ok").line().startswith("[PASS] 11 demo")


def test_info_gain_check_reports_relative_error():
    res = verify.run_check(5)
    assert res.passed
    assert "max rel err" in res.detail and "(<= 1e-9)" in res.detail


def test_unknown_verify_suite():
    with pytest.raises(ValueError):
        verify.run_checks("nope", echo=None)


# -------------------------------------------------------------------- CLI

def test_cli_runs_config(tmp_path, capsys):
    cfg = small_config("bandit", seeds=[0])
    path = write_config(tmp_path, cfg.to_dict())
    assert cli.main(["bandit", "--config", str(path), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "manifest.json").exists()
    assert "bandit: 1 seed(s)" in capsys.readouterr().out


def test_cli_seed_override_and_preset(tmp_path):
    assert cli.main(["bounds", "--preset", "bound_grid", "--seeds", "3", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "config.json").read_text())["seeds"] == [3]


@pytest.mark.parametrize("doc", [{"suite": "bandit", "params": {"n_arms": "ten"}, "seeds": [0]},
                                 {"preset": "bound_grid"}])
def test_cli_bad_config_exit_code(tmp_path, doc, capsys):
    path = write_config(tmp_path, doc)
    assert cli.main(["bandit", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_preset_and_config_conflict(tmp_path):
    path = write_config(tmp_path, {"preset": "bandit_smoke"})
    assert cli.main(["bandit", "--config", str(path), "--preset", "bandit_smoke"]) == 2


def test_cli_bad_seeds_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["bounds", "--seeds", "a,b"])
    assert exc.value.code == 2


def test_cli_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["bounds", "--out", str(blocker / "sub")]) == 1


def test_cli_plot(tmp_path):
    summary = tmp_path / "summary.csv"
    summary.write_text(summary_to_csv([SummaryRow("ts", 1, 0.1, 0.0), SummaryRow("ts", 10, 0.5, 0.1)]))
    assert cli.main(["plot", str(summary), "--title", "demo"]) == 0
    ET.fromstring((tmp_path / "summary.svg").read_text())
    assert cli.main(["plot", str(tmp_path / "absent.csv")]) == 1


def test_cli_verify_exit_codes(monkeypatch):
    assert cli.main(["verify", "bounds"]) == 0
    failing = verify.CheckResult(7, "bound_shape", False, "forced")
    monkeypatch.setitem(verify.CHECKS, 7, ("bounds", lambda: failing))
    assert cli.main(["verify", "bounds"]) == 1
