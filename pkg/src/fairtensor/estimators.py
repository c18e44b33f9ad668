"""Scikit-learn style wrappers around the completion pipelines.

``fit`` takes X as an (n_samples, n_modes) coordinate matrix and y as
the observed entry values; ``predict`` returns reconstructed values at
new coordinates and ``score`` the negative mean squared error, so that
larger is better as model-selection tools expect.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator

from . import metrics
from .augment import assemble, build_graph, generate_entries
from .errors import ConfigurationError
from .models import init_model
from .sparse import SensitiveContext, SparseTensor
from .training import TrainConfig, train
from .validation import check_index_matrix, check_values, infer_dims

__all__ = [
    "CPCompleter",
    "CostcoCompleter",
    "FairnessAugmentedCompleter",
]


def _train_val_split(tensor: SparseTensor, fraction: float, seed):
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(
            f"validation_fraction must lie in (0, 1), got {fraction}"
        )
    n = tensor.nnz
    n_val = math.floor(fraction * n + 1e-9)
    if n_val < 1 or n - n_val < 1:
        raise ConfigurationError(
            f"validation_fraction {fraction} leaves an empty side of the "
            f"split for {n} entries"
        )
    perm = np.random.default_rng(seed).permutation(n)
    parts = []
    for pos in (perm[n_val:], perm[:n_val]):
        parts.append(SparseTensor(
            tensor.dims, tensor.indices[pos], tensor.values[pos]
        ))
    return tuple(parts)


def _entity_groups(groups, n_entities: int, X, sensitive_mode: int):
    """One label per entity, from per-entity or per-sample input."""
    if groups is None:
        raise ConfigurationError(
            "fit needs groups: one label per sensitive entity, or one per "
            "sample"
        )
    labels = list(groups)
    if len(labels) == n_entities:
        return labels
    if len(labels) == len(X):
        per_entity = [None] * n_entities
        for coord, label in zip(X[:, sensitive_mode], labels):
            known = per_entity[coord]
            if known is None:
                per_entity[coord] = label
            elif known != label:
                raise ConfigurationError(
                    f"entity {coord} appears with conflicting group labels"
                    f" {known!r} and {label!r}"
                )
        missing = [e for e, g in enumerate(per_entity) if g is None]
        if missing:
            raise ConfigurationError(
                f"entity {missing[0]} never appears in X, so per-sample "
                "groups cannot label it; pass per-entity groups instead"
            )
        return per_entity
    raise ConfigurationError(
        f"groups has length {len(labels)}; expected {n_entities} "
        f"(per entity) or {len(X)} (per sample)"
    )


class _CompleterBase(BaseEstimator):
    _kind = None

    def _model_kwargs(self):
        return {}

    def fit(self, X, y):
        X = check_index_matrix(X)
        y = check_values(y, len(X))
        dims = infer_dims(X, self.dims)
        tensor = SparseTensor(dims=dims, indices=X, values=y)
        train_t, val_t = _train_val_split(
            tensor, self.validation_fraction, self.random_state
        )
        model = init_model(
            self._kind, dims, self.rank, scale=self.init_scale,
            seed=self.random_state, **self._model_kwargs(),
        )
        cfg = TrainConfig(
            rank=self.rank,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            patience=self.patience,
            seed=self.random_state,
            objective="plain",
        )
        self.report_ = train(model, train_t, val_t, None, cfg)
        self.model_ = model
        self.dims_ = dims
        self.n_features_in_ = X.shape[1]
        return self

    def _check_ready(self):
        if not hasattr(self, "model_"):
            raise ConfigurationError("this estimator has not been fitted")

    def predict(self, X):
        self._check_ready()
        X = check_index_matrix(X)
        infer_dims(X, self.dims_)
        return self.model_.predict(X)

    def score(self, X, y):
        """Negative mean squared error (larger is better)."""
        preds = self.predict(X)
        y = check_values(y, len(preds))
        return -metrics.mse(preds, y)


class CPCompleter(_CompleterBase):
    """Sparse tensor completion with a CP factor model."""

    _kind = "cp"

    def __init__(self, rank=10, learning_rate=0.01, weight_decay=0.0,
                 batch_size=1024, max_epochs=200, patience=10,
                 init_scale=0.1, validation_fraction=0.1, dims=None,
                 random_state=0):
        self.rank = rank
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.init_scale = init_scale
        self.validation_fraction = validation_fraction
        self.dims = dims
        self.random_state = random_state


class CostcoCompleter(_CompleterBase):
    """Completion with the compact convolutional reconstruction model."""

    _kind = "costco"

    def __init__(self, rank=10, channels=8, hidden_units=32,
                 activation="relu", learning_rate=0.01, weight_decay=0.0,
                 batch_size=1024, max_epochs=200, patience=10,
                 init_scale=0.1, validation_fraction=0.1, dims=None,
                 random_state=0):
        self.rank = rank
        self.channels = channels
        self.hidden_units = hidden_units
        self.activation = activation
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.init_scale = init_scale
        self.validation_fraction = validation_fraction
        self.dims = dims
        self.random_state = random_state

    def _model_kwargs(self):
        return {
            "channels": self.channels,
            "hidden_units": self.hidden_units,
            "activation": self.activation,
        }


class FairnessAugmentedCompleter(BaseEstimator):
    """Completion with neighbor-based augmentation and row coupling.

    Pipeline: pretrain a plain model, build the blended-similarity
    neighbor graph from its sensitive factor rows, generate augmented
    entries per entity, then retrain on the enlarged tensor with the
    original/augmented coupling penalty.  ``fit`` needs group labels for
    the sensitive mode.
    """

    def __init__(self, base="cp", rank=10, n_neighbors=5, gamma=0.5,
                 fairness_coeff=0.1, n_own=30, n_borrowed=30,
                 targets="all", channels=8, hidden_units=32,
                 activation="relu", learning_rate=0.01, weight_decay=0.0,
                 batch_size=1024, max_epochs=200, patience=10,
                 pretrain_epochs=None, init_scale=0.1,
                 validation_fraction=0.1, sensitive_mode=0, dims=None,
                 random_state=0):
        self.base = base
        self.rank = rank
        self.n_neighbors = n_neighbors
        self.gamma = gamma
        self.fairness_coeff = fairness_coeff
        self.n_own = n_own
        self.n_borrowed = n_borrowed
        self.targets = targets
        self.channels = channels
        self.hidden_units = hidden_units
        self.activation = activation
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.pretrain_epochs = pretrain_epochs
        self.init_scale = init_scale
        self.validation_fraction = validation_fraction
        self.sensitive_mode = sensitive_mode
        self.dims = dims
        self.random_state = random_state

    def _model_kwargs(self):
        if self.base == "costco":
            return {
                "channels": self.channels,
                "hidden_units": self.hidden_units,
                "activation": self.activation,
            }
        return {}

    def _config(self, objective, fairness_coeff, max_epochs):
        return TrainConfig(
            rank=self.rank,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            fairness_coeff=fairness_coeff,
            max_epochs=max_epochs,
            patience=self.patience,
            seed=self.random_state,
            objective=objective,
        )

    def fit(self, X, y, groups=None):
        X = check_index_matrix(X)
        y = check_values(y, len(X))
        dims = infer_dims(X, self.dims)
        if not 0 <= self.sensitive_mode < len(dims):
            raise ConfigurationError(
                f"sensitive_mode {self.sensitive_mode} out of range for "
                f"{len(dims)} modes"
            )
        labels = _entity_groups(
            groups, dims[self.sensitive_mode], X, self.sensitive_mode
        )
        ctx = SensitiveContext.from_labels(self.sensitive_mode, labels)
        tensor = SparseTensor(dims=dims, indices=X, values=y)
        train_t, val_t = _train_val_split(
            tensor, self.validation_fraction, self.random_state
        )

        pre_epochs = (
            self.max_epochs if self.pretrain_epochs is None
            else self.pretrain_epochs
        )
        pretrained = init_model(
            self.base, dims, self.rank, scale=self.init_scale,
            seed=self.random_state, **self._model_kwargs(),
        )
        train(
            pretrained, train_t, val_t, None,
            self._config("plain", 0.0, pre_epochs),
        )

        graph = build_graph(
            pretrained.factors[self.sensitive_mode], ctx,
            self.n_neighbors, self.gamma,
        )
        aug = generate_entries(
            train_t, graph, pretrained, ctx,
            self.n_own, self.n_borrowed, seed=self.random_state,
            targets=self.targets,
        )
        big_train, pairs = assemble(train_t, aug)

        model = init_model(
            self.base, big_train.dims, self.rank, scale=self.init_scale,
            seed=self.random_state, **self._model_kwargs(),
        )
        self.report_ = train(
            model, big_train, val_t, ctx,
            self._config("staff", self.fairness_coeff, self.max_epochs),
            coupling=pairs,
        )
        self.model_ = model
        self.pretrained_ = pretrained
        self.graph_ = graph
        self.augmented_ = aug
        self.pairs_ = pairs
        self.ctx_ = ctx
        self.dims_ = dims
        self.n_features_in_ = X.shape[1]
        return self

    def _check_ready(self):
        if not hasattr(self, "model_"):
            raise ConfigurationError("this estimator has not been fitted")

    def predict(self, X):
        self._check_ready()
        X = check_index_matrix(X)
        infer_dims(X, self.dims_)
        return self.model_.predict(X)

    def score(self, X, y):
        """Negative mean squared error (larger is better)."""
        preds = self.predict(X)
        y = check_values(y, len(preds))
        return -metrics.mse(preds, y)

    def evaluate(self, X, y):
        """Full metric set (MSE plus group gaps) at the given entries."""
        self._check_ready()
        X = check_index_matrix(X)
        y = check_values(y, len(X))
        tensor = SparseTensor(dims=self.dims_, indices=X, values=y)
        return metrics.evaluate(self.model_, tensor, self.ctx_)
