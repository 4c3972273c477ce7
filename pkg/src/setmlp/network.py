"""Sparse multilayer perceptron trained with sparse evolutionary training.

Weights live only at existing connections (CSR), gradients are computed
only for those connections, and after every epoch except the last each
layer's topology is rewired by prune/regrow.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .sparse import CSRMatrix, outer_at_pattern, spmm, spmm_transpose
from .topology import EVOLVE, TopologyParams, er_init

logger = logging.getLogger(__name__)

HIDDEN_ACTIVATIONS = ("relu", "sigmoid")
OUTPUT_ACTIVATION = "softmax"


def relu(z):
    return np.maximum(z, 0)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    """Column-wise softmax of an ``(n_classes, B)`` logit array."""
    e = np.exp(z - z.max(axis=0, keepdims=True))
    return e / e.sum(axis=0, keepdims=True)


def sparse_gradient(pattern, delta, a_prev) -> np.ndarray:
    """Batch-mean weight gradient at the stored positions of ``pattern``.

    ``g[k] = mean_b delta[row_k, b] * a_prev[col_k, b]``. The dense
    ``n_out x n_in`` outer product is never formed.
    """
    return outer_at_pattern(pattern, delta, a_prev)


@dataclass
class SparseLayer:
    weights: CSRMatrix
    bias: np.ndarray
    activation: str
    weight_momentum: np.ndarray = None
    bias_momentum: np.ndarray = None

    def __post_init__(self):
        if self.weight_momentum is None:
            self.weight_momentum = np.zeros_like(self.weights.vals)
        if self.bias_momentum is None:
            self.bias_momentum = np.zeros_like(self.bias)

    @property
    def n_in(self) -> int:
        return self.weights.n_cols

    @property
    def n_out(self) -> int:
        return self.weights.n_rows


@dataclass
class NetworkConfig:
    layer_widths: tuple
    topology: TopologyParams = field(default_factory=TopologyParams)
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0002
    batch_size: int = 5
    epochs: int = 500
    dropout_rate: float = 0.0
    evolution_enabled: bool = True
    evolution_impl: str = "v2"
    hidden_activation: str = "relu"
    dtype: str = "float64"

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if len(self.layer_widths) < 2:
            raise ValueError("layer_widths needs at least input and output widths")
        if min(self.layer_widths) < 1:
            raise ValueError("layer widths must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.evolution_impl not in EVOLVE:
            raise ValueError(f"evolution_impl must be one of {sorted(EVOLVE)}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")


class Network:
    """A stack of :class:`SparseLayer` with a softmax output.

    All randomness (initialization, shuffling, dropout, regrowth) flows from
    one generator seeded by ``config.topology.rng_seed``.
    """

    def __init__(self, config: NetworkConfig, layers: list[SparseLayer] | None = None, rng=None):
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.topology.rng_seed)
        self.dtype = np.dtype(config.dtype)
        if layers is None:
            layers = self._init_layers()
        self.layers = layers
        self._check_chain()

    def _init_layers(self) -> list[SparseLayer]:
        widths = self.config.layer_widths
        layers = []
        for l, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = er_init(n_in, n_out, self.config.topology, math.sqrt(2.0 / n_in), rng=self.rng,
                        dtype=self.dtype)
            act = OUTPUT_ACTIVATION if l == len(widths) - 2 else self.config.hidden_activation
            layers.append(SparseLayer(w, np.zeros(n_out, dtype=self.dtype), act))
        return layers

    def _check_chain(self):
        widths = self.config.layer_widths
        if len(self.layers) != len(widths) - 1:
            raise ValueError("layer count does not match layer_widths")
        for l, layer in enumerate(self.layers):
            if layer.weights.shape != (widths[l + 1], widths[l]):
                raise ValueError(f"layer {l} has shape {layer.weights.shape}, "
                                 f"expected {(widths[l + 1], widths[l])}")

    # -- accounting -------------------------------------------------------

    @property
    def n_neurons(self) -> int:
        return sum(self.config.layer_widths)

    @property
    def nnz(self) -> int:
        return sum(layer.weights.nnz for layer in self.layers)

    @property
    def n_params(self) -> int:
        return self.nnz + sum(len(layer.bias) for layer in self.layers)

    # -- forward / backward -------------------------------------------------

    def forward(self, x, train_mode: bool = False):
        """Run a batch ``x`` of shape ``(n_in, B)``.

        Returns ``(probs, cache)`` where ``probs`` is ``(n_classes, B)``.
        """
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 2 or x.shape[0] != self.config.layer_widths[0]:
            raise ValueError(f"input has shape {x.shape}, expected ({self.config.layer_widths[0]}, B)")
        if not np.all(np.isfinite(x)):
            raise ValueError("input contains non-finite values")
        rate = self.config.dropout_rate if train_mode else 0.0
        acts = [x]
        derivs = []
        a = x
        for layer in self.layers:
            z = spmm(layer.weights, a)
            z += layer.bias[:, None]
            if layer.activation == OUTPUT_ACTIVATION:
                a = softmax(z)
                derivs.append(None)
            else:
                if layer.activation == "relu":
                    a = relu(z)
                    d = (z > 0).astype(self.dtype)
                else:
                    a = sigmoid(z)
                    d = a * (1 - a)
                if rate > 0:
                    keep = (self.rng.random(a.shape) >= rate).astype(self.dtype) / (1 - rate)
                    a *= keep
                    d *= keep
                derivs.append(d)
            acts.append(a)
        return a, {"acts": acts, "derivs": derivs}

    def loss(self, probs, y) -> float:
        """Mean cross-entropy of ``probs`` against integer labels ``y``."""
        p = probs[np.asarray(y), np.arange(probs.shape[1])]
        return float(-np.mean(np.log(np.maximum(p, np.finfo(self.dtype).tiny))))

    def backward(self, cache, y):
        """Per-layer ``(weight_grad, bias_grad)``; weight grads align with ``vals``."""
        y = np.asarray(y)
        acts, derivs = cache["acts"], cache["derivs"]
        probs = acts[-1]
        n_classes, batch = probs.shape
        if y.shape != (batch,):
            raise ValueError("labels must have one entry per batch column")
        if y.min() < 0 or y.max() >= n_classes:
            raise ValueError(f"label out of range [0, {n_classes})")
        delta = probs.copy()
        delta[y, np.arange(batch)] -= 1
        grads = [None] * len(self.layers)
        for l in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[l]
            gw = sparse_gradient(layer.weights, delta, acts[l])
            gb = delta.mean(axis=1)
            grads[l] = (gw, gb)
            if l > 0:
                delta = spmm_transpose(layer.weights, delta)
                delta *= derivs[l - 1]
        return grads

    def sgd_step(self, grads) -> None:
        """Momentum SGD with weight decay, at existing connections only."""
        cfg = self.config
        for layer, (gw, gb) in zip(self.layers, grads):
            w = layer.weights.vals
            v = layer.weight_momentum
            v *= cfg.momentum
            v -= cfg.learning_rate * (gw + cfg.weight_decay * w)
            layer.weights = layer.weights.with_values(w + v)
            vb = layer.bias_momentum
            vb *= cfg.momentum
            vb -= cfg.learning_rate * gb
            layer.bias = layer.bias + vb

    def evolve(self):
        """Prune/regrow every layer; momentum follows surviving connections."""
        fn = EVOLVE[self.config.evolution_impl]
        reports = []
        for layer in self.layers:
            new_w, report = fn(layer.weights, self.config.topology, rng=self.rng)
            src = report.source_index
            mom = np.zeros_like(new_w.vals)
            kept = src >= 0
            mom[kept] = layer.weight_momentum[src[kept]]
            layer.weights = new_w
            layer.weight_momentum = mom
            reports.append(report)
        return reports

    # -- training -----------------------------------------------------------

    def predict_proba(self, X, chunk: int = 256) -> np.ndarray:
        """Class probabilities for sample-major ``X`` (n_samples x n_in)."""
        X = np.asarray(X)
        out = np.empty((X.shape[0], self.config.layer_widths[-1]), dtype=self.dtype)
        for s in range(0, X.shape[0], chunk):
            probs, _ = self.forward(X[s:s + chunk].T, train_mode=False)
            out[s:s + chunk] = probs.T
        return out

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def train_epoch(self, X, y) -> float:
        """One pass of minibatch SGD over sample-major ``X``; returns mean loss.

        The final partial batch is trained, not dropped.
        """
        X = np.asarray(X)
        y = np.asarray(y)
        if len(X) == 0:
            raise ValueError("empty training set")
        order = self.rng.permutation(len(X))
        bs = self.config.batch_size
        total = 0.0
        for s in range(0, len(X), bs):
            idx = order[s:s + bs]
            probs, cache = self.forward(X[idx].T, train_mode=True)
            total += self.loss(probs, y[idx]) * len(idx)
            self.sgd_step(self.backward(cache, y[idx]))
        return total / len(X)

    def fit(self, X, y, X_test=None, y_test=None, epochs: int | None = None, callback=None):
        """Train for ``epochs`` epochs and return a list of per-epoch records.

        Test accuracy (when a test set is given) is measured after the SGD
        pass and before evolution; evolution is skipped after the last epoch.
        """
        epochs = self.config.epochs if epochs is None else epochs
        history = []
        for epoch in range(epochs):
            t0 = time.perf_counter()
            train_loss = self.train_epoch(X, y)
            train_seconds = time.perf_counter() - t0
            acc = float("nan")
            if X_test is not None:
                acc = float(np.mean(self.predict(X_test) == np.asarray(y_test)))
            evo_seconds = 0.0
            if self.config.evolution_enabled and epoch < epochs - 1:
                evo_seconds = sum(r.elapsed for r in self.evolve())
            record = {
                "epoch": epoch + 1,
                "train_loss": train_loss,
                "test_accuracy": acc,
                "epoch_seconds": time.perf_counter() - t0,
                "train_seconds": train_seconds,
                "evolution_seconds": evo_seconds,
                "nnz_total": self.nnz,
                "n_params": self.n_params,
            }
            history.append(record)
            logger.debug("epoch %d loss=%.5f acc=%.4f", epoch + 1, train_loss, acc)
            if callback is not None:
                callback(self, record)
        return history

    def copy_structure(self) -> "Network":
        """Deep copy of weights/biases (momentum reset), sharing config."""
        layers = [SparseLayer(l.weights.with_values(l.weights.vals.copy()), l.bias.copy(), l.activation)
                  for l in self.layers]
        return Network(replace(self.config), layers=layers, rng=np.random.default_rng(0))

    def densified(self) -> list[tuple[np.ndarray, np.ndarray, str]]:
        """Dense ``(W, b, activation)`` per layer; for tests on small nets only."""
        return [(l.weights.to_dense(), l.bias.copy(), l.activation) for l in self.layers]

    def same_parameters(self, other: "Network") -> bool:
        return len(self.layers) == len(other.layers) and all(
            a.weights == b.weights and np.array_equal(a.bias, b.bias) and a.activation == b.activation
            for a, b in zip(self.layers, other.layers)
        )
