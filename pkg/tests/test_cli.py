import csv
import json

import pytest

from fedel.cli import main

MINIMAL = {
    "T_th": "auto",
    "rounds": 3,
    "num_clients": 3,
    "speed_factors": [1.0, 0.5],
    "hidden": [8, 8, 8],
    "dataset": {"kind": "gaussian_mixture", "n_samples": 400},
}


@pytest.fixture
def config(tmp_path):
    def write(**overrides):
        doc = {**MINIMAL, **overrides}
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        return path

    return write


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_log_and_metrics(config, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config()), "--out", str(out)]) == 0
    rows = read_csv(out / "metrics.csv")
    assert rows[0] == ["round", "wall_clock_s", "accuracy", "o1", "mean_gamma", "o1_param"]
    assert len(rows) == 4
    assert len((out / "run_log.jsonl").read_text().splitlines()) == 3
    text = capsys.readouterr().out
    assert "final accuracy" in text and "simulated wall-clock" in text


def test_missing_threshold_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({k: v for k, v in MINIMAL.items() if k != "T_th"}))
    assert main(["run", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "T_th" in capsys.readouterr().err


def test_invalid_json_and_missing_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "absent.json")]) == 2


def test_fedavg_self_baseline_speedup_is_one(config, tmp_path, capsys):
    code = main(["run", str(config()), "--variant", "fedavg-full", "--baseline", "--out", str(tmp_path / "o")])
    assert code == 0
    assert "1.00x" in capsys.readouterr().out


def test_baseline_run_is_written_beside(config, tmp_path):
    out = tmp_path / "o"
    assert main(["run", str(config()), "--baseline", "--out", str(out)]) == 0
    assert (out / "baseline" / "metrics.csv").exists()


def test_identical_invocations_are_byte_identical(config, tmp_path):
    path = config()
    for name in ("a", "b"):
        assert main(["run", str(path), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "run_log.jsonl").read_bytes() == (tmp_path / "b" / "run_log.jsonl").read_bytes()
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_seed_env_override_changes_run(config, tmp_path, monkeypatch):
    path = config()
    assert main(["run", str(path), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("FEDEL_SEED", "5")
    assert main(["run", str(path), "--out", str(tmp_path / "b")]) == 0
    assert json.loads((tmp_path / "b" / "config.json").read_text())["seed"] == 5
    assert (tmp_path / "a" / "run_log.jsonl").read_bytes() != (tmp_path / "b" / "run_log.jsonl").read_bytes()
    monkeypatch.setenv("FEDEL_SEED", "five")
    assert main(["run", str(path), "--out", str(tmp_path / "c")]) == 2


def test_fuzz_selector(tmp_path, capsys):
    assert main(["fuzz-selector", "--trials", "200", "--max-tensors", "10", "--seed", "3"]) == 0
    assert "0 mismatches" in capsys.readouterr().out
    assert main(["fuzz-selector", "--trials", "0"]) == 0


def test_fuzz_selector_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main(["fuzz-selector", "--seed", "abc"])
    assert exc.value.code == 2
    assert main(["fuzz-selector", "--max-tensors", "21"]) == 2


def test_fuzz_selector_dumps_counterexamples(tmp_path, monkeypatch):
    from fedel import cli
    from fedel.selector import SelectionMask

    monkeypatch.setattr(cli, "select_tensors", lambda imp, t, w, b, p: SelectionMask.empty(p.num_tensors))
    code = main(["fuzz-selector", "--trials", "20", "--max-tensors", "6", "--out", str(tmp_path)])
    assert code == 1
    dumped = json.loads((tmp_path / "selector_counterexamples.json").read_text())
    assert dumped and {"importance", "timing", "window", "budget"} <= dumped[0].keys()


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["launch"])
    assert exc.value.code == 2


def test_beta_sweep_combined_csv(config, tmp_path):
    path = config(ablation={"beta": [0.0, 0.6, 1.0]})
    out = tmp_path / "ab"
    assert main(["ablate", str(path), "--axis", "beta", "--out", str(out), "--gnuplot"]) == 0
    rows = read_csv(out / "ablation.csv")
    assert rows[0][:2] == ["axis", "value"]
    assert sorted({r[1] for r in rows[1:]}) == ["0.0", "0.6", "1.0"]
    assert len(rows) == 1 + 3 * MINIMAL["rounds"]
    assert (out / "ablation.gp").exists()


def test_slow_device_threshold_spans_whole_model(config, tmp_path):
    path = config(ablation={"t_th": ["slowest"]}, rounds=4)
    out = tmp_path / "ab"
    assert main(["ablate", str(path), "--axis", "t_th", "--out", str(out)]) == 0
    log = [json.loads(line) for line in (out / "t_th=slowest" / "run_log.jsonl").read_text().splitlines()]
    nb = len(MINIMAL["hidden"])
    # speed factor 1.0 (even ids) is the slow device; the fast one has even more room
    slow = [c for rec in log for c in rec["clients"] if c["id"] % 2 == 0]
    assert slow and all(c["window"] == [0, nb - 1] for c in slow)
    assert all(c["window"] == [0, nb - 1] for rec in log for c in rec["clients"])


def test_variant_sweep(config, tmp_path):
    path = config(ablation={"variant": ["fedel", "fedel-c"]})
    assert main(["ablate", str(path), "--axis", "variant", "--out", str(tmp_path / "ab")]) == 0
    rows = read_csv(tmp_path / "ab" / "ablation.csv")
    assert sorted({r[1] for r in rows[1:]}) == ["fedel", "fedel-c"]


def test_bad_ablation_values(config, tmp_path):
    assert main(["ablate", str(config(ablation={"beta": 0.5})), "--axis", "beta", "--out", str(tmp_path / "x")]) == 2


def test_profile_export_and_replay(config, tmp_path):
    path = config()
    prof = tmp_path / "timing.json"
    assert main(["export-profile", str(path), "--out", str(prof)]) == 0
    doc = json.loads(prof.read_text())
    assert {"id", "t_g", "t_w"} <= doc["tensors"][0].keys() and "t_fw" in doc["blocks"][0]
    assert main(["run", str(path), "--timing-profile", str(prof), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(path), "--out", str(tmp_path / "b")]) == 0
    # the exported profile is exactly the synthetic one, so replay changes nothing
    assert (tmp_path / "a" / "run_log.jsonl").read_bytes() == (tmp_path / "b" / "run_log.jsonl").read_bytes()
    prof.write_text('{"tensors": []}')
    assert main(["run", str(path), "--timing-profile", str(prof), "--out", str(tmp_path / "c")]) == 2


def test_rollback_study_command(config, tmp_path, capsys):
    out = tmp_path / "rb.json"
    assert main(["rollback-study", str(config()), "--rounds", "3", "--out", str(out)]) == 0
    summary = json.loads(out.read_text())
    assert set(summary) == {"rollback", "no_rollback"}
    assert summary["rollback"]["rounds"] == 3


def test_mid_run_failure_keeps_partial_log(config, tmp_path, monkeypatch):
    from fedel import federation

    real = federation.select_tensors
    calls = {"n": 0}

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > 6:
            raise ValueError("device lost")
        return real(*a, **k)

    monkeypatch.setattr(federation, "select_tensors", flaky)
    out = tmp_path / "o"
    assert main(["run", str(config(rounds=5)), "--out", str(out)]) == 1
    assert len((out / "run_log.jsonl").read_text().splitlines()) >= 1
