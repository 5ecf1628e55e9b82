import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from durability import presets
from durability.cli import main
from durability.config import ConfigError, RunConfig, parse_config


def small_config(**over):
    d = {
        "name": "small",
        "model": {"variant": "TandemQueue", "params": {"lam": 0.5, "mu1": 0.595, "mu2": 0.595}},
        "query": {"horizon": 200, "beta": 12.0},
        "sampler": {"method": "SMLSS", "split_ratio": 3, "boundaries": [0.0, 0.5, 1.0], "min_roots": 50},
        "stop": {"kind": "budget", "budget": 30_000},
        "repeats": 1,
        "seed": 7,
    }
    d.update(over)
    return d


def write(tmp_path, d, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


# --- config -----------------------------------------------------------------


@pytest.mark.parametrize("name", presets.preset_names())
def test_preset_round_trip(name):
    cfg = parse_config(presets.preset_config(name))
    again = RunConfig.from_dict(json.loads(cfg.to_json()))
    assert again.to_dict() == cfg.to_dict()


def test_custom_round_trip():
    cfg = parse_config(small_config(tune={"candidate_count": 3, "trial_budget": 5000}))
    assert parse_config(json.loads(cfg.to_json())).to_dict() == cfg.to_dict()


@pytest.mark.parametrize("patch, path", [
    ({"model": {"variant": "TandemQueue", "params": {"lam": -1, "mu1": 0.5, "mu2": 0.5}}}, "model.params.lam"),
    ({"model": {"variant": "Nope", "params": {}}}, "model"),
    ({"query": {"horizon": 0, "beta": 1.0}}, "query.horizon"),
    ({"query": {"horizon": 10}}, "query.beta"),
    ({"sampler": {"method": "MC"}}, "sampler.method"),
    ({"sampler": {"boundaries": [0.0, 0.7, 0.3, 1.0]}}, "sampler.boundaries"),
    ({"sampler": {"split_ratio": 0}}, "sampler.split_ratio"),
    ({"sampler": {"colour": 1}}, "sampler.colour"),
    ({"threads": 0}, "threads"),
    ({"extra": 1}, "extra"),
])
def test_config_errors_name_the_field(patch, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(small_config(**patch))
    assert exc.value.path.startswith(path)


# --- run --------------------------------------------------------------------


def test_run_writes_reports_and_aggregate(tmp_path, capsys):
    out = tmp_path / "out"
    code, stdout, _ = run_cli(capsys, "run", "--config", write(tmp_path, small_config()), "--repeats", 3,
                              "--out", out, "--format", "csv")
    assert code == 0
    agg = json.loads((out / "aggregate.json").read_text())
    assert json.loads(stdout) == agg
    reps = [json.loads((out / f"report-{i:03d}.json").read_text()) for i in range(3)]
    est = [r["estimate"] for r in reps]
    assert agg["estimates"] == est and agg["std"] == pytest.approx(np.std(est, ddof=1))
    assert agg["steps_total"] == sum(r["steps_total"] for r in reps)
    for i, rep in enumerate(reps):
        rows = list(csv.DictReader((out / f"series-{i:03d}.csv").open()))
        steps = [int(r["steps"]) for r in rows]
        assert steps == sorted(steps)
        assert steps[-1] == rep["steps_total"] and float(rows[-1]["estimate"]) == rep["estimate"]


def test_run_output_is_deterministic_except_wallclock(tmp_path, capsys):
    cfg = write(tmp_path, small_config(sampler={"method": "GMLSS", "boundaries": [0.0, 0.5, 1.0], "min_roots": 50}))
    docs = []
    for k in range(2):
        assert run_cli(capsys, "run", "--config", cfg, "--out", tmp_path / f"o{k}")[0] == 0
        d = json.loads((tmp_path / f"o{k}" / "report-000.json").read_text())
        d.pop("wallclock")
        docs.append(json.dumps(d, sort_keys=True))
    assert docs[0] == docs[1]


def test_seed_override_changes_result(tmp_path, capsys):
    cfg = write(tmp_path, small_config())
    a = json.loads(run_cli(capsys, "run", "--config", cfg)[1])
    b = json.loads(run_cli(capsys, "run", "--config", cfg, "--seed", 8)[1])
    assert a["config"]["seed"] == 7 and b["config"]["seed"] == 8
    assert a["estimates"] != b["estimates"]


def test_csv_to_stdout(tmp_path, capsys):
    code, stdout, _ = run_cli(capsys, "run", "--config", write(tmp_path, small_config()), "--format", "csv")
    assert code == 0 and stdout.splitlines()[0] == "steps,estimate,lo,hi,re"


def test_config_error_exit_code_and_no_output(tmp_path, capsys):
    out = tmp_path / "out"
    bad = small_config(model={"variant": "TandemQueue", "params": {"lam": 0, "mu1": 0.5, "mu2": 0.5}})
    code, _, err = run_cli(capsys, "run", "--config", write(tmp_path, bad), "--out", out)
    assert code == 2 and "model.params.lam" in err
    assert not out.exists() and list(tmp_path.iterdir()) == [tmp_path / "cfg.json"]


def test_unreadable_and_unknown_inputs(tmp_path, capsys):
    assert run_cli(capsys, "run", "--config", tmp_path / "missing.json")[0] == 2
    (tmp_path / "broken.json").write_text("{")
    assert run_cli(capsys, "run", "--config", tmp_path / "broken.json")[0] == 2
    assert run_cli(capsys, "run", "--preset", "no-such-preset")[0] == 2
    assert run_cli(capsys, "run")[0] == 2


def test_budget_exhaustion_exit_code(tmp_path, capsys):
    d = small_config(stop={"kind": "re", "re_target": 0.001, "budget": 20_000})
    code, stdout, _ = run_cli(capsys, "run", "--config", write(tmp_path, d), "--out", tmp_path / "o")
    assert code == 3 and json.loads(stdout)["statuses"] == {"budget-exhausted": 1}
    # partial results of a finished but unsuccessful run are still written
    assert (tmp_path / "o" / "report-000.json").exists()


def test_failure_mid_run_removes_partial_outputs(tmp_path, capsys):
    d = small_config(model={"variant": "ExternalBlackBox", "params": {"command": ["/nonexistent/sim"]}})
    out = tmp_path / "out"
    with pytest.raises(Exception):
        main(["run", "--config", write(tmp_path, d), "--out", str(out)])
    assert not out.exists() and sorted(p.name for p in tmp_path.iterdir()) == ["cfg.json"]


# --- compare ----------------------------------------------------------------


def test_compare_identical_configs(tmp_path, capsys):
    a = write(tmp_path, small_config(), "a.json")
    b = write(tmp_path, small_config(), "b.json")
    out = tmp_path / "cmp"
    code, stdout, _ = run_cli(capsys, "compare", "--config", a, "--config", b, "--out", out, "--format", "csv")
    assert code == 0
    table = json.loads((out / "compare.json").read_text())
    r0, r1 = table["rows"]
    assert r1["step_speedup"] == 1.0 and r0["estimate_mean"] == r1["estimate_mean"]
    assert stdout == (out / "compare.csv").read_text()
    assert (out / "report-1-000.json").exists()


def test_compare_rejects_different_queries(tmp_path, capsys):
    a = write(tmp_path, small_config(), "a.json")
    b = write(tmp_path, small_config(query={"horizon": 200, "beta": 13.0}), "b.json")
    code, _, err = run_cli(capsys, "compare", "--config", a, "--config", b)
    assert code == 2 and "[1].query" in err
    c = write(tmp_path, small_config(model={"variant": "TandemQueue",
                                            "params": {"lam": 0.4, "mu1": 0.595, "mu2": 0.595}}), "c.json")
    code, _, err = run_cli(capsys, "compare", "--config", a, "--config", c)
    assert code == 2 and "[1].model" in err
    assert run_cli(capsys, "compare", "--config", a)[0] == 2


# --- tune and oracle --------------------------------------------------------


def test_tune_outputs(tmp_path, capsys):
    d = small_config(stop={"kind": "re", "re_target": 0.2, "budget": 400_000},
                     tune={"candidate_count": 3, "trial_budget": 20_000, "max_rounds": 2})
    out = tmp_path / "t"
    code, stdout, err = run_cli(capsys, "tune", "--config", write(tmp_path, d), "--out", out, "--format", "csv")
    assert code in (0, 3)
    summary = json.loads(stdout)
    plan = json.loads((out / "plan.json").read_text())["boundaries"]
    assert plan[0] == 0.0 and plan[-1] == 1.0 and summary["boundaries"] == plan
    audit = json.loads((out / "audit.json").read_text())
    assert audit["boundaries"] == plan and audit["rounds"]
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["sampler"]["boundaries"] == plan == report["config"]["tuned_boundaries"]
    assert summary["overhead_steps"] + report["steps_total"] == summary["total_steps"]
    assert "tuning overhead" in err and (out / "series.csv").exists()


def test_tune_no_run(tmp_path, capsys):
    d = small_config(tune={"candidate_count": 2, "trial_budget": 10_000, "max_rounds": 1})
    out = tmp_path / "t"
    assert run_cli(capsys, "tune", "--config", write(tmp_path, d), "--out", out, "--no-run")[0] == 0
    assert not (out / "report.json").exists() and (out / "plan.json").exists()


def test_oracle_command(tmp_path, capsys):
    chain = {"transition": [[0.5, 0.5], [0.0, 1.0]], "z": [0, 2], "start": 0,
             "horizon": 3, "beta": 2, "boundaries": [0.0, 1.0]}
    code, stdout, _ = run_cli(capsys, "oracle", "--chain", write(tmp_path, chain))
    res = json.loads(stdout)
    assert code == 0 and res["tau"] == pytest.approx(7 / 8)
    assert res["crossing_probs"] == pytest.approx([1.0, 7 / 8])
    code, stdout, _ = run_cli(capsys, "oracle", "--preset", "oracle-chain-tiny-smlss", "--balanced", 3)
    res = json.loads(stdout)
    assert len(res["balanced_plan"]) == 4
    assert np.prod(res["crossing_ratios"]) == pytest.approx(res["tau"])


def test_presets_listing(capsys):
    code, stdout, _ = run_cli(capsys, "presets")
    assert code == 0 and stdout.split() == presets.preset_names()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "durability", "presets"], capture_output=True, text=True)
    assert res.returncode == 0 and "queue-tiny-srs" in res.stdout
    res = subprocess.run([sys.executable, "-m", "durability", "run", "--preset", "bogus"],
                         capture_output=True, text=True)
    assert res.returncode == 2 and res.stderr.startswith("config error: preset")
