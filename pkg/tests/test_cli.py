import csv
import json

import numpy as np
import pytest

from dissipatgrid.cli import main
from dissipatgrid.training import TrainConfig


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    cfg = TrainConfig(n_trajectories=20, traj_length=0.1, width=8, epochs=1, n_probes=200)
    (tmp_path / "tiny.json").write_text(json.dumps(cfg.to_dict()))
    return tmp_path


def run(*argv):
    return main(["--quiet", *argv])


def test_gen_data_header(work):
    assert run("gen-data", "--config", "tiny.json", "--out", "d.jsonl") == 0
    with open("d.jsonl") as fh:
        head = json.loads(fh.readline())
    assert head["dt"] == 0.0005
    assert head["bounds"] == {"omega": 0.1, "delta": np.pi}
    man = json.loads((work / "d.jsonl.manifest.json").read_text())
    assert "dataset" in man["artifacts"] and man["config"]["n_trajectories"] == 20


def test_kundur_config_header(work):
    from dissipatgrid.training import load_config

    cfg = load_config("kundur2a.json").to_dict()
    cfg.update(n_trajectories=3, traj_length=0.01)
    (work / "k.json").write_text(json.dumps(cfg))
    assert run("gen-data", "--config", "k.json", "--out", "k.jsonl") == 0
    with open("k.jsonl") as fh:
        head = json.loads(fh.readline())
    assert head["bounds"] == {"omega": 0.1, "delta": 2 * np.pi}
    assert load_config("kundur2a.json").n_trajectories == 2500


def test_seed_flag_either_side_of_subcommand(work):
    assert run("gen-data", "--config", "tiny.json", "--out", "a.jsonl", "--seed", "7") == 0
    assert main(["--seed", "7", "--quiet", "gen-data", "--config", "tiny.json", "--out", "b.jsonl"]) == 0
    a, b = (work / "a.jsonl").read_bytes(), (work / "b.jsonl").read_bytes()
    assert a == b and json.loads(a.splitlines()[0])["seed"] == 7


def test_zero_trajectories_is_usage_error(work):
    cfg = json.loads((work / "tiny.json").read_text())
    cfg["n_trajectories"] = 0
    (work / "zero.json").write_text(json.dumps(cfg))
    assert run("gen-data", "--config", "zero.json", "--out", "z.jsonl") == 2


def test_bad_config_names_pointer(work, capsys):
    cfg = json.loads((work / "tiny.json").read_text())
    cfg["lr"] = "fast"
    (work / "bad.json").write_text(json.dumps(cfg))
    assert run("gen-data", "--config", "bad.json", "--out", "z.jsonl") == 2
    assert "/lr" in capsys.readouterr().err


def test_pipeline_untrained_fails_verify_and_replays(work):
    assert run("gen-data", "--config", "tiny.json", "--out", "d.jsonl") == 0
    cfg = json.loads((work / "tiny.json").read_text())
    cfg["epochs"] = 0
    (work / "init.json").write_text(json.dumps(cfg))
    assert run("train", "--data", "d.jsonl", "--config", "init.json", "--out", "m.json") == 0
    with open("m.history.csv") as fh:
        assert list(csv.reader(fh))[0][0] == "epoch"
    rc = run("verify", "--model", "m.json", "--data", "d.jsonl", "--scenario", "scib_fault.json",
             "--config", "init.json", "--out", "r.json")
    rep = json.loads((work / "r.json").read_text())
    assert rc == 1 and rep["verdicts"]["delta_pd"] is False and rep["passed"] is False
    for name in ("d.jsonl", "m.json", "r.json"):
        assert run("replay", f"{name}.manifest.json") == 0


def test_simulate_outputs(work):
    assert run("simulate", "--scenario", "scib_fault.json", "--out", "u.csv") == 0
    met = json.loads((work / "u.metrics.json").read_text())
    assert met["synchronism"] is False and met["controlled"] is False
    assert (work / "u.png").stat().st_size > 0
    with open("u.csv") as fh:
        assert next(csv.reader(fh)) == ["t", "delta_1", "omega_1", "u_1"]


def test_simulate_no_fault_constant(work):
    assert run("simulate", "--scenario", "scib_nofault.json", "--out", "n.csv") == 0
    rows = np.loadtxt(work / "n.csv", delimiter=",", skiprows=1)
    assert np.all(rows[:, 1:] == rows[0, 1:])
    assert run("replay", "n.csv.manifest.json") == 0


def test_verify_zero_length_dataset(work):
    assert run("gen-data", "--config", "tiny.json", "--out", "d.jsonl") == 0
    cfg = json.loads((work / "tiny.json").read_text())
    cfg["epochs"] = 0
    (work / "init.json").write_text(json.dumps(cfg))
    assert run("train", "--data", "d.jsonl", "--config", "init.json", "--out", "m.json") == 0
    (work / "empty.jsonl").write_text("")
    assert run("verify", "--model", "m.json", "--data", "empty.jsonl", "--out", "r.json") == 2


def test_unknown_experiment(work, capsys):
    assert run("repro", "nope") == 2
    err = capsys.readouterr().err
    assert "scib" in err and "kundur2a" in err


def test_missing_file_and_bad_args(work):
    assert run("simulate", "--scenario", "no_such.json", "--out", "x.csv") == 2
    assert run("train") == 2
