"""scikit-learn compatible front end for the sparse evolutionary MLP."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .network import Network, NetworkConfig
from .topology import TopologyParams


class SETMLPClassifier(ClassifierMixin, BaseEstimator):
    """Sparse MLP classifier trained with sparse evolutionary training.

    With ``evolution=False`` the Erdos-Renyi pattern stays fixed for the
    whole run (the fixed-probability baseline).

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Widths of the hidden layers.
    epsilon : float
        Sparsity control; a layer of widths (a, b) gets about
        ``epsilon * (a + b)`` connections.
    zeta : float
        Fraction of each sign class of weights rewired after every epoch.

    Attributes
    ----------
    network_ : Network
    classes_ : ndarray
    history_ : list of dict
        Per-epoch ``train_loss``, ``test_accuracy``, timings and ``nnz_total``.
    """

    def __init__(
        self,
        hidden_layer_sizes=(1000, 1000),
        epsilon=10.0,
        zeta=0.3,
        learning_rate=0.01,
        momentum=0.9,
        weight_decay=0.0002,
        batch_size=5,
        epochs=100,
        dropout_rate=0.0,
        evolution=True,
        evolution_impl="v2",
        regrow_sigma=0.01,
        hidden_activation="relu",
        dtype="float64",
        random_state=None,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epsilon = epsilon
        self.zeta = zeta
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.dropout_rate = dropout_rate
        self.evolution = evolution
        self.evolution_impl = evolution_impl
        self.regrow_sigma = regrow_sigma
        self.hidden_activation = hidden_activation
        self.dtype = dtype
        self.random_state = random_state

    def _make_config(self, n_features, n_classes) -> NetworkConfig:
        seed = self.random_state
        if seed is None:
            seed = int(np.random.default_rng().integers(2**31))
        return NetworkConfig(
            layer_widths=(n_features, *self.hidden_layer_sizes, n_classes),
            topology=TopologyParams(self.epsilon, self.zeta, self.regrow_sigma, int(seed)),
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            epochs=self.epochs,
            dropout_rate=self.dropout_rate,
            evolution_enabled=self.evolution,
            evolution_impl=self.evolution_impl,
            hidden_activation=self.hidden_activation,
            dtype=self.dtype,
        )

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; an ``eval_set=(X_test, y_test)`` is scored each epoch."""
        X, y = check_X_y(X, y, dtype=[np.float64, np.float32])
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        self.n_features_in_ = X.shape[1]
        self.network_ = Network(self._make_config(X.shape[1], len(self.classes_)))
        X_test = y_test = None
        if eval_set is not None:
            X_test = check_array(eval_set[0], dtype=[np.float64, np.float32])
            y_test = self._encoder.transform(eval_set[1])
        self.history_ = self.network_.fit(X, self._encoder.transform(y), X_test, y_test)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=[np.float64, np.float32])
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.network_.predict_proba(X)

    def predict(self, X):
        check_is_fitted(self, "network_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    @property
    def best_accuracy_(self):
        """Best per-epoch test accuracy seen during ``fit`` (needs ``eval_set``)."""
        check_is_fitted(self, "network_")
        return max(r["test_accuracy"] for r in self.history_)
