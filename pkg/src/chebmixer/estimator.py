"""scikit-learn compatible wrappers.

``ChebHopExtractor`` turns node features into flattened Chebyshev hop
tokens; ``ChebMixerClassifier`` trains the full model transductively.
Both take the graph as a ``graph=`` keyword because sklearn's ``X`` only
carries node features.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted

from .data_io import Dataset
from .graph import estimate_lambda_max, scale_laplacian, sym_norm_laplacian
from .model import ModelConfig, model_forward, param_count, prepare_operator
from .spectral import cheb_hop_extract
from .training import TEST, TRAIN, VAL, TrainConfig, train_loop
from .validation import check_features, check_graph, check_order

__all__ = ["ChebHopExtractor", "ChebMixerClassifier"]


class ChebHopExtractor(TransformerMixin, BaseEstimator):
    """Stack ``T_k(L_hat) X`` for ``k = 0..K`` and flatten to ``(N, (K + 1) * d)``.

    Set ``flatten=False`` to keep the ``(N, K + 1, d)`` hop tensor.
    """

    def __init__(self, K=7, lambda_max="auto", flatten=True):
        self.K = K
        self.lambda_max = lambda_max
        self.flatten = flatten

    def fit(self, X, y=None, graph=None):
        if graph is None:
            raise ValueError("ChebHopExtractor.fit needs graph=")
        X = check_features(X)
        check_order(self.K)
        g = check_graph(graph, X.shape[0])
        L = sym_norm_laplacian(g)
        if self.lambda_max == "auto":
            lam = estimate_lambda_max(L)
        elif self.lambda_max == "fixed":
            lam = 2.0
        else:
            lam = float(self.lambda_max)
        self.laplacian_ = scale_laplacian(L, lam)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "laplacian_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        hops = cheb_hop_extract(self.laplacian_, X, self.K).data
        return hops.reshape(hops.shape[0], -1) if self.flatten else hops


class ChebMixerClassifier(ClassifierMixin, BaseEstimator):
    """Transductive node classifier.

    ``fit(X, y, graph=...)`` uses every node whose label is not ``-1``.
    Those nodes are split into train and validation parts (validation drives
    early stopping) unless ``val_mask`` is passed. ``predict`` scores every
    node of the fitted graph, or of a new ``graph`` of the same size.
    """

    def __init__(
        self,
        K=7,
        hidden_dim=64,
        n_layers=1,
        token_hidden=64,
        channel_hidden=64,
        aggregator="chebinterp",
        lambda_max="auto",
        extractor="chebyshev",
        mixer_bias=True,
        halved_c0=False,
        lr=1e-3,
        weight_decay=5e-4,
        max_epochs=2000,
        patience=50,
        validation_fraction=0.25,
        random_state=0,
    ):
        self.K = K
        self.hidden_dim = hidden_dim
        self.n_layers = n_layers
        self.token_hidden = token_hidden
        self.channel_hidden = channel_hidden
        self.aggregator = aggregator
        self.lambda_max = lambda_max
        self.extractor = extractor
        self.mixer_bias = mixer_bias
        self.halved_c0 = halved_c0
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _train_config(self, n_classes: int) -> TrainConfig:
        model = ModelConfig(
            K=check_order(self.K),
            d=self.hidden_dim,
            layers=self.n_layers,
            d_s=self.token_hidden,
            d_c=self.channel_hidden,
            n_classes=n_classes,
            aggregator=self.aggregator,
            lambda_max=self.lambda_max,
            extractor=self.extractor,
            mixer_bias=self.mixer_bias,
            halved_c0=self.halved_c0,
        )
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=int(self.random_state or 0),
            model=model,
        )

    def fit(self, X, y, graph=None, val_mask=None):
        if graph is None:
            raise ValueError("ChebMixerClassifier.fit needs graph=")
        X = check_features(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        g = check_graph(graph, X.shape[0])
        labelled = y != -1
        if not labelled.any():
            raise ValueError("no labelled nodes")
        self.label_encoder_ = LabelEncoder().fit(y[labelled])
        self.classes_ = self.label_encoder_.classes_
        codes = np.zeros(X.shape[0], dtype=np.int64)
        codes[labelled] = self.label_encoder_.transform(y[labelled])

        splits = np.full(X.shape[0], TEST, dtype=np.int64)
        if val_mask is not None:
            val_mask = np.asarray(val_mask, dtype=bool)
            splits[labelled & ~val_mask] = TRAIN
            splits[labelled & val_mask] = VAL
        else:
            idx = np.flatnonzero(labelled)
            rng = np.random.default_rng(int(self.random_state or 0))
            perm = rng.permutation(idx.size)
            n_val = max(1, int(np.floor(float(self.validation_fraction) * idx.size)))
            splits[idx] = TRAIN
            splits[idx[perm[:n_val]]] = VAL
        cfg = self._train_config(len(self.classes_))
        ds = Dataset(g, X, codes, len(self.classes_), "estimator", splits)
        self.params_, self.history_ = train_loop(ds, cfg)
        self.config_ = cfg
        self.graph_ = g
        self.operator_ = prepare_operator(g, cfg.model)
        self.n_features_in_ = X.shape[1]
        self.best_epoch_ = self.history_.best_epoch
        self.n_params_ = param_count(self.params_)
        return self

    def _operator(self, graph, n):
        if graph is None:
            if n != self.graph_.n:
                raise ValueError(f"X has {n} rows but the fitted graph has {self.graph_.n} nodes; pass graph=")
            return self.operator_
        return prepare_operator(check_graph(graph, n), self.config_.model)

    def decision_function(self, X, graph=None):
        check_is_fitted(self, "params_")
        X = check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        logits = model_forward(self._operator(graph, X.shape[0]), X, self.params_, self.config_.model)
        return logits.data

    def predict_proba(self, X, graph=None):
        Z = self.decision_function(X, graph)
        Z = Z - Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        return P / P.sum(axis=1, keepdims=True)

    def predict(self, X, graph=None):
        Z = self.decision_function(X, graph)
        return self.classes_[np.argmax(Z, axis=1)]

    def transform(self, X, graph=None):
        """Aggregated node embeddings ``(N, hidden_dim)`` before the head."""
        check_is_fitted(self, "params_")
        X = check_features(X)
        _, emb = model_forward(self._operator(graph, X.shape[0]), X, self.params_, self.config_.model, return_embedding=True)
        return emb.data
