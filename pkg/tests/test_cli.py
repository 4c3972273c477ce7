import csv
import json
import statistics

import numpy as np
import pytest

from setmlp.cli import main
from setmlp.config import ConfigError, ExperimentConfig, read_config
from setmlp.data import load_binary, load_csv, save_binary
from setmlp.experiment import read_history, read_summary, run_eval
from setmlp.metrics import ConfusionMatrix

TINY = ["--synth-samples", "45", "--synth-features", "40", "--synth-classes", "3",
        "--synth-informative", "8", "--synth-class-sep", "2.0", "--hidden", "16",
        "--batch-size", "5", "--learning-rate", "0.01"]


def train(tmp_path, name, *extra):
    out = tmp_path / name
    assert main(["train", *TINY, "-o", str(out), *extra]) == 0
    return out


def test_train_single_epoch(tmp_path):
    out = train(tmp_path, "run", "--epochs", "1", "--trials", "1")
    rows = read_history(out / "history.csv")
    assert len(rows) == 1
    assert set(rows[0]) >= {"epoch", "train_loss", "test_accuracy", "epoch_seconds", "nnz_total"}
    for name in ["confusion.csv", "summary.txt", "model.sevo", "test.sevd", "config.ini", "trials.csv"]:
        assert (out / name).exists()


def test_ablation_zero_rewiring_matches_fixed(tmp_path):
    a = train(tmp_path, "evo", "--epochs", "4", "--zeta", "0")
    b = train(tmp_path, "fixed", "--epochs", "4", "--zeta", "0", "--no-evolution")
    assert read_history(a / "history.csv", True) == read_history(b / "history.csv", True)


def test_summary_recomputes_from_trials(tmp_path):
    out = train(tmp_path, "run", "--epochs", "3", "--trials", "5")
    rows = read_history(out / "history.csv")
    bests = [max(float(r["test_accuracy"]) for r in rows if r["trial"] == str(t)) for t in range(5)]
    summary = read_summary(out / "summary.txt")
    assert float(summary["mean_best_accuracy"]) == pytest.approx(statistics.fmean(bests), abs=1e-15)
    assert float(summary["std_best_accuracy"]) == pytest.approx(statistics.pstdev(bests), abs=1e-12)
    assert [float(v) for v in summary["best_accuracies"].split(",")] == bests


def test_eval_reproduces_training(tmp_path, capsys):
    out = train(tmp_path, "run", "--epochs", "3", "--trials", "2")
    summary = read_summary(out / "summary.txt")
    res = run_eval(out / "model.sevo", out / "test.sevd")
    assert res["accuracy"] == float(summary["final_accuracy"])
    logged = ConfusionMatrix.from_csv(out / "confusion.csv")
    assert res["confusion"] == logged
    assert main(["eval", str(out / "model.sevo"), str(out / "test.sevd"), "-o", str(tmp_path / "c.csv")]) == 0
    assert f"accuracy {res['accuracy']!r}" in capsys.readouterr().out
    assert ConfusionMatrix.from_csv(tmp_path / "c.csv").accuracy() == res["accuracy"]


def test_eval_order_invariant(tmp_path):
    out = train(tmp_path, "run", "--epochs", "2")
    ds = load_binary(out / "test.sevd")
    perm = np.random.default_rng(0).permutation(ds.n_samples)
    save_binary(ds.subset(perm), tmp_path / "perm.sevd")
    a = run_eval(out / "model.sevo", out / "test.sevd")["accuracy"]
    b = run_eval(out / "model.sevo", tmp_path / "perm.sevd")["accuracy"]
    assert a == b


def test_eval_width_mismatch(tmp_path, capsys):
    out = train(tmp_path, "run", "--epochs", "1")
    assert main(["synth", str(tmp_path / "wrong.csv"), "--features", "7", "--samples", "6",
                 "--informative", "3"]) == 0
    code = main(["eval", str(out / "model.sevo"), str(tmp_path / "wrong.csv"), "--has-header"])
    assert code != 0
    line = capsys.readouterr().err.strip().splitlines()[-1]
    assert line.startswith("error: ")
    assert "features" in json.loads(line[len("error: "):])["message"]


def test_eval_corrupt_checkpoint(tmp_path, capsys):
    bad = tmp_path / "bad.sevo"
    bad.write_bytes(b"SEVO\x01")
    save_binary(load_csv_dataset(tmp_path), tmp_path / "d.sevd")
    assert main(["eval", str(bad), str(tmp_path / "d.sevd")]) != 0
    assert "CheckpointError" in capsys.readouterr().err


def load_csv_dataset(tmp_path):
    main(["synth", str(tmp_path / "d.csv"), "--features", "5", "--samples", "6", "--classes", "2",
          "--informative", "2"])
    return load_csv(tmp_path / "d.csv", has_header=True)


def test_reproducible_history_bytes(tmp_path):
    a = train(tmp_path, "a", "--epochs", "3", "--trials", "2")
    b = train(tmp_path, "b", "--epochs", "3", "--trials", "2")
    assert read_history(a / "history.csv", True) == read_history(b / "history.csv", True)


def test_parallel_trials_match_sequential(tmp_path):
    a = train(tmp_path, "seq", "--epochs", "2", "--trials", "3")
    b = train(tmp_path, "par", "--epochs", "2", "--trials", "3", "--parallel-trials", "3")
    assert read_history(a / "history.csv", True) == read_history(b / "history.csv", True)


def test_config_file_with_override(tmp_path):
    cfg = tmp_path / "exp.ini"
    cfg.write_text("[data]\nsynth_samples = 30\nsynth_features = 20\nsynth_informative = 4\n"
                   "[network]\nhidden = 8\nepochs = 2\n[experiment]\ntrials = 1\n")
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--epochs", "3", "-o", str(out)]) == 0
    assert len(read_history(out / "history.csv")) == 3
    saved = read_config(out / "config.ini")
    assert saved["epochs"] == "3" and saved["hidden"] == "8"


def test_presets_carry_reference_hyperparameters():
    cfg = ExperimentConfig().apply({"preset": "gli-85"})
    assert cfg.hidden == (20000,)
    assert (cfg.learning_rate, cfg.batch_size) == (0.005, 1)
    assert (cfg.epsilon, cfg.zeta, cfg.momentum, cfg.weight_decay, cfg.epochs) == (10.0, 0.3, 0.9, 0.0002, 500)


def test_config_errors_name_fields(tmp_path, capsys):
    with pytest.raises(ConfigError) as exc:
        ExperimentConfig(trials=0).validate()
    assert exc.value.field == "trials"
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "-o", str(tmp_path / "r")]) != 0
    err = json.loads(capsys.readouterr().err.split("error: ", 1)[1])
    assert err["field"] == "data_path"


def test_bench_evolution_rows(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench-evolution", "--sizes", "100,300", "--repeats", "1", "-o", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["size"], r["impl"]) for r in rows] == [("100", "v1"), ("100", "v2"), ("300", "v1"), ("300", "v2")]
    assert list(rows[0]) == ["size", "impl", "mean_s", "std_s", "nnz"]


def test_extreme_small(tmp_path, capsys):
    out = tmp_path / "rep.json"
    assert main(["extreme", "--widths", "10,5,2", "--samples", "12", "--epochs", "2", "-o", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["neurons"] == 17
    assert "neurons              17" in capsys.readouterr().out


def test_extreme_memory_limit(capsys):
    code = main(["extreme", "--widths", "1000,1000,2", "--memory-limit-gb", "0.0001"])
    assert code != 0
    assert "MemoryError" in capsys.readouterr().err


def test_synth_binary_and_csv(tmp_path):
    assert main(["synth", str(tmp_path / "s.sevd"), "--samples", "20", "--features", "9", "--informative", "3"]) == 0
    assert load_binary(tmp_path / "s.sevd").features.shape == (20, 9)
    assert main(["synth", str(tmp_path / "s.csv"), "--samples", "20", "--features", "9", "--informative", "3"]) == 0
    assert load_csv(tmp_path / "s.csv", has_header=True).features.shape == (20, 9)


def test_train_on_csv(tmp_path):
    main(["synth", str(tmp_path / "d.csv"), "--samples", "30", "--features", "12", "--informative", "4"])
    out = tmp_path / "run"
    assert main(["train", "--data", str(tmp_path / "d.csv"), "--has-header", "--hidden", "8",
                 "--epochs", "2", "-o", str(out)]) == 0
    cm = ConfusionMatrix.from_csv(out / "confusion.csv")
    assert sorted(cm.labels) == ["class0", "class1", "class2"]
    assert cm.total == 10
