"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the status lines are
written past pytest's capture so they appear in the normal log.
"""

import contextlib
import csv
import io
import math

import numpy as np
import pytest

from setmlp.config import PRESETS, ExperimentConfig
from setmlp.experiment import (
    REFERENCE_EXTREME_CONNECTIONS,
    REFERENCE_EXTREME_WIDTHS,
    TIMING_FIELDS,
    bench_evolution,
    run_extreme,
    run_train,
)
from setmlp.metrics import UNDEFINED, ConfusionMatrix
from setmlp.network import Network, NetworkConfig, softmax
from setmlp.sparse import CSRMatrix
from setmlp.topology import TopologyParams, dense_connections, er_init, evolve_v1, evolve_v2, expected_nnz

# (input features, classes) of the four microarray sets
DATASETS = {
    "leukemia": (54675, 18),
    "cll-sub-111": (11340, 3),
    "smk-can-187": (19993, 2),
    "gli-85": (22283, 2),
}


def widths_of(name, hidden=None):
    n_in, n_out = DATASETS[name]
    return (n_in, *(hidden or PRESETS[name]["hidden"]), n_out)


@pytest.fixture
def criterion(capsys):
    @contextlib.contextmanager
    def run(number, title):
        notes = []
        try:
            yield notes
        except BaseException as exc:
            with capsys.disabled():
                print(f"\nCRITERION {number} FAIL  {title}: {type(exc).__name__}: {exc}".rstrip())
                for n in notes:
                    print(f"    {n}")
            raise
        with capsys.disabled():
            print(f"\nCRITERION {number} PASS  {title}")
            for n in notes:
                print(f"    {n}")
    return run


# -- 1 -----------------------------------------------------------------------

def test_criterion_01_dense_counts(criterion):
    with criterion(1, "dense connection counts") as notes:
        expected = {"leukemia": 2_260_307_500, "cll-sub-111": 183_087_000, "smk-can-187": 575_920_000}
        for name, want in expected.items():
            got = dense_connections(widths_of(name))
            notes.append(f"{name}: {got:,} (expected {want:,})")
            assert got == want
        published = 490_270_000
        for hidden in (20000, 22000):
            got = dense_connections(widths_of("gli-85", (hidden,)))
            notes.append(f"gli-85 with hidden {hidden}: {got:,} (published {published:,})")
        assert dense_connections(widths_of("gli-85", (20000,))) != published
        assert dense_connections(widths_of("gli-85", (22000,))) == published


# -- 2 -----------------------------------------------------------------------

@pytest.mark.parametrize("name, formula, realized", [
    ("cll-sub-111", 410_400, 409_033),
    ("smk-can-187", 711_930, 711_305),
])
def test_criterion_02_er_expectation(criterion, name, formula, realized):
    with criterion(2, f"Erdos-Renyi connection count ({name})") as notes:
        widths = widths_of(name)
        assert expected_nnz(widths, 10) == formula
        params = TopologyParams(epsilon=10, rng_seed=0)
        rng = np.random.default_rng(0)
        total = sum(er_init(a, b, params, 1.0, rng=rng).nnz for a, b in zip(widths[:-1], widths[1:]))
        notes.append(f"realized {total:,}; formula {formula:,} "
                     f"({(total - formula) / formula:+.3%}); published {realized:,} "
                     f"({(total - realized) / realized:+.3%})")
        assert abs(total - formula) <= 0.01 * formula
        assert abs(total - realized) <= 0.005 * realized


# -- 3 -----------------------------------------------------------------------

def test_criterion_03_evolution_conservation(criterion):
    with criterion(3, "evolution conserves connection count") as notes:
        rng = np.random.default_rng(2024)
        cases = 1000
        for case in range(cases):
            n_rows, n_cols = (int(v) for v in rng.integers(1, 50, size=2))
            k = int(rng.integers(1, n_rows * n_cols + 1))
            keys = np.sort(rng.choice(n_rows * n_cols, size=k, replace=False))
            dense = np.zeros(n_rows * n_cols)
            dense[keys] = rng.standard_normal(k)
            w = CSRMatrix.from_dense(dense.reshape(n_rows, n_cols))
            zeta = float(rng.uniform(0, 1))
            evolve = evolve_v1 if case % 2 else evolve_v2
            out, rep = evolve(w, TopologyParams(zeta=zeta), rng=rng)
            out.validate()
            assert rep.nnz_before == rep.nnz_after == out.nnz == w.nnz, case
            survivors = rep.source_index >= 0
            new_keys = out.linear_index()
            np.testing.assert_array_equal(out.vals[survivors], w.vals[rep.source_index[survivors]])
            np.testing.assert_array_equal(new_keys[survivors], w.linear_index()[rep.source_index[survivors]])
            assert not set(new_keys[~survivors].tolist()) & set(new_keys[survivors].tolist())
            assert int((~survivors).sum()) == rep.added == rep.removed
        notes.append(f"{cases} randomized cases, alternating both implementations")


# -- 4 -----------------------------------------------------------------------

def test_criterion_04_implementation_equivalence_and_speed(criterion):
    with criterion(4, "v1/v2 equivalence and speed ordering") as notes:
        rng = np.random.default_rng(9)
        for trial in range(50):
            n_rows, n_cols = (int(v) for v in rng.integers(2, 100, size=2))
            w = er_init(n_cols, n_rows, TopologyParams(epsilon=float(rng.uniform(1, 20))), 1.0, rng=rng)
            params = TopologyParams(zeta=float(rng.choice([0.1, 0.3, 0.5])))
            a, ra = evolve_v1(w, params, rng=np.random.default_rng(trial))
            b, rb = evolve_v2(w, params, rng=np.random.default_rng(trial))
            np.testing.assert_array_equal(ra.pruned_index, rb.pruned_index)
            assert a == b
        notes.append("50 random matrices: identical prune sets and outputs")
        rows = bench_evolution([500, 2000, 8000, 15000], epsilon=10, zeta=0.3, repeats=3)
        means = {(r["size"], r["impl"]): r["mean_s"] for r in rows}
        for size in (500, 2000, 8000, 15000):
            v1, v2 = means[size, "v1"], means[size, "v2"]
            notes.append(f"{size:>5}^2: v1 {v1:.4f}s  v2 {v2:.4f}s  speedup {v1 / v2:.1f}x")
        for size in (2000, 8000, 15000):
            assert means[size, "v2"] < means[size, "v1"]
        assert means[15000, "v1"] / means[15000, "v2"] >= 2.0


# -- 5 -----------------------------------------------------------------------

def _fd_grads(net, x, y, h=1e-5):
    def loss():
        return net.loss(net.forward(x)[0], y)

    out = []
    for layer in net.layers:
        grads = []
        for arr in (layer.weights.vals, layer.bias):
            g = np.empty_like(arr)
            for k in range(len(arr)):
                old = arr[k]
                arr[k] = old + h
                up = loss()
                arr[k] = old - h
                down = loss()
                arr[k] = old
                g[k] = (up - down) / (2 * h)
            grads.append(g)
        out.append(tuple(grads))
    return out


def _rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)))


def test_criterion_05_numerical_correctness(criterion):
    with criterion(5, "finite differences and dense oracle") as notes:
        worst = 0.0
        for widths in [(7, 5, 3), (7, 6, 5, 3), (7, 6, 5, 4, 3)]:
            for act in ("relu", "sigmoid"):
                net = Network(NetworkConfig(layer_widths=widths, hidden_activation=act,
                                            topology=TopologyParams(epsilon=20, rng_seed=3)))
                rng = np.random.default_rng(4)
                for layer in net.layers:
                    layer.bias[:] = rng.normal(0, 0.1, len(layer.bias))
                x = rng.standard_normal((widths[0], 5))
                y = rng.integers(0, widths[-1], 5)
                analytic = net.backward(net.forward(x)[1], y)
                for (gw, gb), (nw, nb) in zip(analytic, _fd_grads(net, x, y)):
                    worst = max(worst, _rel_err(gw, nw), _rel_err(gb, nb))
        notes.append(f"worst finite-difference relative error {worst:.2e} (limit 1e-6)")
        assert worst < 1e-6

        net = Network(NetworkConfig(layer_widths=(100, 80, 60, 10),
                                    topology=TopologyParams(epsilon=5, rng_seed=8)))
        rng = np.random.default_rng(8)
        x = rng.standard_normal((100, 16))
        y = rng.integers(0, 10, 16)
        probs, cache = net.forward(x)
        grads = net.backward(cache, y)
        dense = net.densified()
        acts, zs = [x], []
        for w, b, act in dense:
            zs.append(w @ acts[-1] + b[:, None])
            acts.append(softmax(zs[-1]) if act == "softmax" else np.maximum(zs[-1], 0))
        fwd_err = float(np.max(np.abs(probs - acts[-1])))
        delta = acts[-1].copy()
        delta[y, np.arange(16)] -= 1
        bwd_err = 0.0
        for l in range(len(dense) - 1, -1, -1):
            wl = net.layers[l].weights
            full = delta @ acts[l].T / 16
            bwd_err = max(bwd_err, float(np.max(np.abs(grads[l][0] - full[wl.row_indices(), wl.col_idx]))),
                          float(np.max(np.abs(grads[l][1] - delta.mean(axis=1)))))
            if l:
                delta = (dense[l][0].T @ delta) * (zs[l - 1] > 0)
        notes.append(f"dense oracle: forward max diff {fwd_err:.1e}, gradient max diff {bwd_err:.1e}")
        assert fwd_err <= 1e-12 and bwd_err <= 1e-12


# -- 6 -----------------------------------------------------------------------

def test_criterion_06_constant_parameter_count(criterion):
    with criterion(6, "parameter count fixed over 50 epochs") as notes:
        rng = np.random.default_rng(0)
        x = rng.standard_normal((120, 200))
        y = rng.integers(0, 4, 120)
        net = Network(NetworkConfig(layer_widths=(200, 100, 100, 4), epochs=50, batch_size=10,
                                    topology=TopologyParams(epsilon=10, zeta=0.3, rng_seed=0)))
        start = net.n_params
        history = net.fit(x, y, x, y)
        counts = {r["n_params"] for r in history}
        notes.append(f"{len(history)} epochs, parameter counts seen: {sorted(counts)}")
        assert len(history) == 50 and counts == {start}


# -- 7 -----------------------------------------------------------------------

def test_criterion_07_set_vs_fixed(criterion, tmp_path):
    with criterion(7, "SET vs fixed topology on synthetic HDLS data") as notes:
        base = dict(synth_samples=150, synth_features=1000, synth_classes=3, synth_informative=30,
                    synth_class_sep=2.0, synth_seed=0, hidden=(200, 200), epochs=50,
                    learning_rate=0.01, batch_size=5, trials=5, seed=0)
        means = {}
        for label, evolution in (("SET", True), ("FixProb", False)):
            cfg = ExperimentConfig(**base, evolution=evolution, output_dir=str(tmp_path / label))
            summary = run_train(cfg)
            means[label] = summary["mean_best_accuracy"]
            notes.append(f"{label}: best accuracies {summary['best_accuracies']}, "
                         f"mean {means[label]:.4f}")
        chance = 1 / 3
        notes.append(f"required: SET >= FixProb and both >= {3 * chance:.3f} (3x chance)")
        assert means["SET"] >= means["FixProb"]
        assert min(means.values()) >= 3 * chance - 1e-12


# -- 8 -----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_08_extreme_scale(criterion):
    with criterion(8, "extreme-scale network trains within 16 GB") as notes:
        rep = run_extreme(REFERENCE_EXTREME_WIDTHS, epsilon=10, epochs=2, n_samples=100,
                          memory_limit_gb=16, seed=0)
        notes.append(f"neurons {rep['neurons']:,}; connections {rep['connections']:,} "
                     f"(formula {rep['expected_connections']:,}, published {REFERENCE_EXTREME_CONNECTIONS:,})")
        notes.append(f"epoch seconds {[round(s, 1) for s in rep['epoch_seconds']]}; "
                     f"peak RSS {rep['peak_rss_bytes'] / 2**30:.2f} GiB")
        assert rep["neurons"] == 1_054_693
        assert rep["connections_after"] == rep["connections"]
        assert abs(rep["connections"] - rep["expected_connections"]) <= 0.01 * rep["expected_connections"]
        assert rep["peak_rss_bytes"] < 16 * 2**30
        assert all(math.isfinite(v) for v in rep["train_loss"])


# -- 9 -----------------------------------------------------------------------

def test_criterion_09_metrics(criterion):
    with criterion(9, "confusion-matrix metrics and CSV round trip") as notes:
        cm = ConfusionMatrix(2, [[6, 1], [1, 2]])
        assert cm.precision(1) == pytest.approx(2 / 3)
        assert cm.recall(1) == pytest.approx(2 / 3)
        assert cm.accuracy() == pytest.approx(0.8)
        assert cm.specificity() == pytest.approx(6 / 7)
        perfect = ConfusionMatrix(3, np.diag([4, 5, 6]))
        assert all(perfect.recall(i) == perfect.precision(i) == 1 for i in range(3))
        assert perfect.accuracy() == 1
        assert ConfusionMatrix(2, [[3, 0], [0, 0]]).recall(1) is UNDEFINED
        rows = list(csv.reader(io.StringIO(cm.to_csv())))
        assert [float(v) for v in rows[-1][1:3]] == pytest.approx([600 / 7, 200 / 3], abs=0.05)
        assert [float(r[-1]) for r in rows[1:3]] == pytest.approx([600 / 7, 200 / 3], abs=0.05)
        notes.append("hand-computed two-class example, perfect matrix and 0/0 guard")

        rng = np.random.default_rng(0)
        for _ in range(200):
            c = int(rng.integers(1, 6))
            pred, true = rng.integers(0, c, 50), rng.integers(0, c, 50)
            cm = ConfusionMatrix.from_predictions(pred, true, c)
            tally = np.zeros((c, c), dtype=int)
            for p, t in zip(pred, true):
                tally[p, t] += 1
            assert np.array_equal(cm.counts, tally)
            back = ConfusionMatrix.from_csv(cm.to_csv())
            assert back == cm and back.accuracy() == cm.accuracy() == float(np.mean(pred == true))
        notes.append("200 random matrices match a tally oracle and re-parse to identical accuracy")


# -- 10 ----------------------------------------------------------------------

def _history_without_timing(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    keep = [i for i, name in enumerate(rows[0]) if name not in TIMING_FIELDS]
    return "\n".join(",".join(r[i] for i in keep) for r in rows).encode()


def test_criterion_10_reproducibility(criterion, tmp_path):
    with criterion(10, "identical config and seed give identical history") as notes:
        blobs = []
        for run in ("a", "b"):
            cfg = ExperimentConfig(synth_samples=90, synth_features=300, synth_informative=20,
                                   hidden=(60, 60), epochs=8, trials=2, seed=11,
                                   output_dir=str(tmp_path / run))
            run_train(cfg)
            blobs.append(_history_without_timing(tmp_path / run / "history.csv"))
        notes.append(f"history without timing columns: {len(blobs[0])} bytes, identical={blobs[0] == blobs[1]}")
        assert blobs[0] == blobs[1]
