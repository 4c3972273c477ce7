"""Experiment drivers behind the CLI: training runs, evolution benchmark,
extreme-scale feasibility run, checkpoint evaluation."""

from __future__ import annotations

import csv
import logging
import resource
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ExperimentConfig, write_config
from .data import Dataset, load_dataset, normalize, save_binary, split, synth_hdls
from .metrics import ConfusionMatrix
from .network import Network, NetworkConfig
from .topology import (
    TopologyParams,
    connection_probability,
    dense_connections,
    er_init,
    evolve_v1,
    evolve_v2,
    expected_nnz,
)

logger = logging.getLogger(__name__)

HISTORY_FIELDS = ["trial", "epoch", "train_loss", "test_accuracy", "nnz_total",
                  "epoch_seconds", "evolution_seconds"]
TIMING_FIELDS = {"epoch_seconds", "evolution_seconds"}
REFERENCE_EXTREME_WIDTHS = (54675, 500000, 500000, 18)
REFERENCE_EXTREME_CONNECTIONS = 19_383_046


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def load_experiment_data(cfg: ExperimentConfig) -> Dataset:
    if cfg.data_path is None:
        return synth_hdls(cfg.synth_samples, cfg.synth_features, cfg.synth_classes,
                          cfg.synth_informative, cfg.synth_noise, cfg.synth_seed,
                          class_sep=cfg.synth_class_sep)
    label = cfg.label_column
    label = int(label) if label.lstrip("-").isdigit() else label
    return load_dataset(cfg.data_path, label_column=label, has_header=cfg.has_header)


def prepare_split(cfg: ExperimentConfig, ds: Dataset):
    train, test = split(ds, cfg.split_spec())
    if cfg.scaling != "none":
        train, test, _ = normalize(train, test, cfg.scaling)
    dtype = np.dtype(cfg.dtype)
    train.features = train.features.astype(dtype)
    test.features = test.features.astype(dtype)
    return train, test


def _run_trial(cfg, trial, train, test, n_classes):
    seed = cfg.seed + trial
    net = Network(cfg.network_config(train.n_features, n_classes, seed))
    history = net.fit(train.features, train.labels, test.features, test.labels)
    for rec in history:
        rec["trial"] = trial
    pred = net.predict(test.features)
    final_acc = float(np.mean(pred == test.labels))
    best = max(history, key=lambda r: (r["test_accuracy"], -r["epoch"]))
    return {
        "trial": trial,
        "seed": seed,
        "history": history,
        "network": net,
        "best_accuracy": best["test_accuracy"],
        "best_epoch": best["epoch"],
        "final_accuracy": final_acc,
        "predictions": pred,
    }


def write_history(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for rec in records:
            w.writerow([_fmt(rec[k]) for k in HISTORY_FIELDS])


def read_history(path, drop_timing: bool = False) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if drop_timing:
        rows = [{k: v for k, v in r.items() if k not in TIMING_FIELDS} for r in rows]
    return rows


def run_train(cfg: ExperimentConfig) -> dict:
    """Run ``cfg.trials`` independent trials and write the run directory.

    Outputs: ``history.csv`` (all trials, per epoch), ``trials.csv``,
    ``summary.txt`` (mean/std of best test accuracy), ``confusion.csv`` and
    ``model.sevo`` for the final network of the best trial, ``test.sevd``
    (the scaled test split, for ``eval``), and ``config.ini``.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_experiment_data(cfg)
    train, test = prepare_split(cfg, ds)
    n_classes = ds.n_classes
    logger.info("train %s, test %s, classes %d", train.features.shape, test.features.shape, n_classes)

    def job(t):
        return _run_trial(cfg, t, train, test, n_classes)

    if cfg.parallel_trials > 1:
        with ThreadPoolExecutor(cfg.parallel_trials) as pool:
            results = list(pool.map(job, range(cfg.trials)))
    else:
        results = [job(t) for t in range(cfg.trials)]

    write_history(out / "history.csv", [r for res in results for r in res["history"]])
    with open(out / "trials.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "seed", "best_accuracy", "best_epoch", "final_accuracy"])
        for res in results:
            w.writerow([res["trial"], res["seed"], _fmt(res["best_accuracy"]), res["best_epoch"],
                        _fmt(res["final_accuracy"])])

    bests = [res["best_accuracy"] for res in results]
    best_trial = max(results, key=lambda r: (r["best_accuracy"], -r["trial"]))
    cm = ConfusionMatrix.from_predictions(best_trial["predictions"], test.labels, n_classes,
                                          labels=ds.class_names)
    cm.to_csv(out / "confusion.csv")
    checkpoint.save(best_trial["network"], out / "model.sevo")
    save_binary(test, out / "test.sevd")
    write_config(cfg, out / "config.ini")
    summary = {
        "trials": cfg.trials,
        "best_accuracies": bests,
        "mean_best_accuracy": statistics.fmean(bests),
        "std_best_accuracy": float(np.std(bests)),
        "best_trial": best_trial["trial"],
        "final_accuracy": best_trial["final_accuracy"],
        "nnz_total": best_trial["network"].nnz,
        "dense_connections": dense_connections(best_trial["network"].config.layer_widths),
        "sparsity": 1 - best_trial["network"].nnz / dense_connections(best_trial["network"].config.layer_widths),
    }
    with open(out / "summary.txt", "w") as fh:
        for k, v in summary.items():
            if isinstance(v, list):
                v = ",".join(_fmt(x) for x in v)
            fh.write(f"{k}={_fmt(v) if isinstance(v, float) else v}\n")
    summary["results"] = results
    return summary


def read_summary(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        k, _, v = line.partition("=")
        out[k] = v
    return out


# -- evolution benchmark -----------------------------------------------------

def bench_evolution(sizes, epsilon=10.0, zeta=0.3, repeats=3, seed=0, output=None) -> list[dict]:
    """Time both evolution implementations on identical square matrices.

    Before timing, each size is checked for identical prune sets and
    identical outputs from the two implementations; a mismatch raises.
    Timing covers the evolution call only.
    """
    rows = []
    for size in sizes:
        if size < 2:
            raise ValueError("sizes must be >= 2")
        params = TopologyParams(epsilon, zeta, 0.01, seed)
        w = er_init(size, size, params, 1.0, rng=np.random.default_rng(seed))
        out1, rep1 = evolve_v1(w, params, rng=np.random.default_rng(seed + 1))
        out2, rep2 = evolve_v2(w, params, rng=np.random.default_rng(seed + 1))
        if not np.array_equal(rep1.pruned_index, rep2.pruned_index):
            raise AssertionError(f"prune sets differ at size {size}")
        if out1 != out2:
            raise AssertionError(f"evolution outputs differ at size {size}")
        for name, fn in (("v1", evolve_v1), ("v2", evolve_v2)):
            times = []
            for r in range(repeats):
                rng = np.random.default_rng(seed + 100 + r)
                t0 = time.perf_counter()
                fn(w, params, rng=rng)
                times.append(time.perf_counter() - t0)
            rows.append({
                "size": size,
                "impl": name,
                "mean_s": statistics.fmean(times),
                "std_s": statistics.pstdev(times),
                "nnz": w.nnz,
            })
            logger.info("size %d %s mean %.4fs", size, name, rows[-1]["mean_s"])
    if output is not None:
        with open(output, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["size", "impl", "mean_s", "std_s", "nnz"])
            for r in rows:
                wr.writerow([r["size"], r["impl"], _fmt(r["mean_s"]), _fmt(r["std_s"]), r["nnz"]])
    return rows


# -- extreme-scale run -------------------------------------------------------

def memory_accounting(widths, epsilon, batch_size, n_samples, itemsize=8) -> dict:
    """Analytic byte counts for training a network of the given widths."""
    widths = [int(w) for w in widths]
    nnz = expected_nnz(widths, epsilon)
    per_nnz = itemsize * 3 + 4  # weights, momentum, gradient, column index
    # evolution builds int64 keys plus a sort permutation and new arrays
    evo_peak = max(
        round(connection_probability(a, b, epsilon) * a * b) for a, b in zip(widths[:-1], widths[1:])
    ) * (8 * 3 + itemsize + 4)
    parts = {
        "weights_and_state": nnz * per_nnz,
        "row_pointers": sum(widths[1:]) * 8,
        "biases": sum(widths[1:]) * itemsize * 2,
        "activations": sum(widths) * batch_size * itemsize * 3,
        "data": n_samples * widths[0] * itemsize,
        "evolution_peak": evo_peak,
    }
    parts["total"] = sum(parts.values())
    return parts


def peak_rss_bytes() -> int:
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss * 1024


def run_extreme(widths, epsilon=10.0, epochs=1, n_samples=100, learning_rate=0.05, batch_size=5,
                dropout_rate=0.4, zeta=0.3, seed=0, memory_limit_gb=16.0, dtype="float64") -> dict:
    """Build a very large sparse MLP and train it on synthetic data.

    Raises MemoryError with the accounting breakdown when the estimate
    exceeds ``memory_limit_gb`` or allocation fails.
    """
    widths = tuple(int(w) for w in widths)
    itemsize = np.dtype(dtype).itemsize
    acct = memory_accounting(widths, epsilon, batch_size, n_samples, itemsize)
    limit = memory_limit_gb * 2**30
    if acct["total"] > limit:
        raise MemoryError(f"estimated {acct['total'] / 2**30:.2f} GiB exceeds limit "
                          f"{memory_limit_gb} GiB: {acct}")
    report = {
        "widths": widths,
        "neurons": sum(widths),
        "expected_connections": expected_nnz(widths, epsilon),
        "dense_connections": dense_connections(widths),
        "memory_estimate": acct,
    }
    if widths == REFERENCE_EXTREME_WIDTHS:
        report["reported_connections"] = REFERENCE_EXTREME_CONNECTIONS
    try:
        t0 = time.perf_counter()
        ds = synth_hdls(n_samples, widths[0], widths[-1], min(100, widths[0]), 1.0, seed)
        ds.features = ds.features.astype(dtype)
        cfg = NetworkConfig(
            layer_widths=widths,
            topology=TopologyParams(epsilon, zeta, 0.01, seed),
            learning_rate=learning_rate,
            batch_size=batch_size,
            epochs=epochs,
            dropout_rate=dropout_rate,
            dtype=dtype,
        )
        net = Network(cfg)
        report["build_seconds"] = time.perf_counter() - t0
        report["connections"] = net.nnz
        report["sparsity"] = 1 - net.nnz / report["dense_connections"]
        history = net.fit(ds.features, ds.labels, epochs=epochs)
        report["epoch_seconds"] = [r["epoch_seconds"] for r in history]
        report["evolution_seconds"] = [r["evolution_seconds"] for r in history]
        report["train_loss"] = [r["train_loss"] for r in history]
        report["connections_after"] = net.nnz
    except MemoryError as exc:
        raise MemoryError(f"out of memory ({exc}); estimate: {acct}") from None
    report["peak_rss_bytes"] = peak_rss_bytes()
    return report


# -- evaluation --------------------------------------------------------------

def run_eval(model_path, data_path, output=None, **csv_kwargs) -> dict:
    net = checkpoint.load(model_path)
    ds = load_dataset(data_path, **csv_kwargs)
    n_in, n_out = net.config.layer_widths[0], net.config.layer_widths[-1]
    if ds.n_features != n_in:
        raise ValueError(f"dataset has {ds.n_features} features, model expects {n_in}")
    if ds.labels.size and ds.labels.max() >= n_out:
        raise ValueError(f"dataset has label {ds.labels.max()}, model has {n_out} classes")
    pred = net.predict(ds.features.astype(net.dtype))
    cm = ConfusionMatrix.from_predictions(pred, ds.labels, n_out, labels=ds.class_names)
    if output is not None:
        cm.to_csv(output)
    return {"accuracy": cm.accuracy(), "confusion": cm, "predictions": pred}


def sizes_for_bench(text: str) -> list[int]:
    return [int(s) for s in text.replace(",", " ").split()]


def format_gib(n: int) -> str:
    return f"{n / 2**30:.3f} GiB"


__all__ = [
    "run_train", "bench_evolution", "run_extreme", "run_eval", "memory_accounting",
    "read_history", "read_summary", "write_history", "load_experiment_data", "prepare_split",
]
