"""Scikit-learn style classifiers wrapping the training pipeline.

These estimators follow the fit/predict/predict_proba contract with
``get_params``/``set_params`` from ``BaseEstimator``, so they compose with
pipelines, grid search, and cloning.  Inputs are validated 2-D float arrays;
labels may be arbitrary hashables and are encoded internally.

``MapClassifier`` trains a deterministic network.  ``VariationalClassifier``
additionally fine-tunes it into a Bayesian model (mean-field Gaussian or
parameter-sharing ensemble) and exposes Monte Carlo predictive probabilities
and a per-instance epistemic uncertainty score.  The ensemble, dropout, and
curvature baselines share the same surface.
"""

from __future__ import annotations

import dataclasses
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_X_y

from .checkpoint import Checkpoint
from .datasets import DatasetSplit, OODSpec, gen_ood
from .objectives import RegularizerConfig, mutual_information, posterior_predictive
from .tensor import softmax
from .training import (
    TrainConfig,
    bayes_finetune,
    deep_ensemble,
    ensemble_predict,
    init_checkpoint,
    laplace_diag,
    mc_dropout_predict,
    pretrain_map,
)

__all__ = [
    "MapClassifier",
    "VariationalClassifier",
    "MCDropoutClassifier",
    "DeepEnsembleClassifier",
    "LaplaceClassifier",
]


def _encode_labels(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    classes, encoded = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    return classes, encoded.astype(np.int64)


def _as_split(X: np.ndarray, y: np.ndarray, n_classes: int) -> DatasetSplit:
    return DatasetSplit(
        x=np.asarray(X, dtype=np.float64),
        y=y,
        name="fit",
        spec={"generator": "user"},
        n_classes=n_classes,
    )


class _FittedMixin:
    def _require_fitted(self):
        if not hasattr(self, "classes_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")


class MapClassifier(_FittedMixin, ClassifierMixin, BaseEstimator):
    """Point-estimate neural classifier trained by SGD with weight decay."""

    def __init__(self, hidden=(32,), epochs=30, batch_size=32, lr=0.05, momentum=0.9,
                 weight_decay=2e-4, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            decay=self.weight_decay,
            seed=self.seed,
            model={"kind": "mlp", "hidden": list(self.hidden)},
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = _encode_labels(np.asarray(y))
        split = _as_split(X, encoded, len(self.classes_))
        self.checkpoint_ = pretrain_map(self._train_config(), split)
        self.model_ = self.checkpoint_.to_model()
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        self._require_fitted()
        X = check_array(X)
        return softmax(self.model_.forward(np.asarray(X, dtype=np.float64)), axis=1).data

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]


class VariationalClassifier(_FittedMixin, ClassifierMixin, BaseEstimator):
    """Bayesian neural classifier: pretrain a point estimate, then fine-tune
    a variational posterior around it (or train the posterior from scratch).

    ``predict_proba`` averages ``mc_samples`` stochastic forward passes;
    ``mutual_information`` scores per-instance epistemic uncertainty, which
    the optional margin regularizer calibrates against noise-perturbed
    training inputs.
    """

    def __init__(self, family="mfg", hidden=(32,), pretrain_epochs=30, epochs=12,
                 batch_size=32, pretrain_lr=0.05, lr=0.01, momentum=0.9, weight_decay=2e-4,
                 candidates=20, rank=1, psi_init_mean=-5.0, psi_init_std=0.01,
                 mc_samples=20, warm_start_map=True, gamma=None, alpha=3.0, s_train=2,
                 ood_delta=None, seed=0):
        self.family = family
        self.hidden = hidden
        self.pretrain_epochs = pretrain_epochs
        self.epochs = epochs
        self.batch_size = batch_size
        self.pretrain_lr = pretrain_lr
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.candidates = candidates
        self.rank = rank
        self.psi_init_mean = psi_init_mean
        self.psi_init_std = psi_init_std
        self.mc_samples = mc_samples
        self.warm_start_map = warm_start_map
        self.gamma = gamma
        self.alpha = alpha
        self.s_train = s_train
        self.ood_delta = ood_delta
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = _encode_labels(np.asarray(y))
        split = _as_split(X, encoded, len(self.classes_))
        model_spec = {"kind": "mlp", "hidden": list(self.hidden)}
        regularizer = None
        ood = None
        if self.gamma is not None:
            regularizer = RegularizerConfig(gamma=self.gamma, alpha=self.alpha,
                                            s_train=self.s_train)
            delta = self.ood_delta if self.ood_delta is not None else 0.1
            ood = OODSpec(kind="uniform_noise", delta_m=delta, seed=self.seed + 1)
        finetune_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            momentum=self.momentum,
            decay=self.weight_decay,
            seed=self.seed,
            variational_family=self.family,
            pse_candidates=self.candidates,
            pse_rank=self.rank,
            psi_init_mean=self.psi_init_mean,
            psi_init_std=self.psi_init_std,
            regularizer=regularizer,
            ood=ood,
            model=model_spec,
        )
        if self.warm_start_map:
            pre_cfg = dataclasses.replace(
                finetune_cfg,
                epochs=self.pretrain_epochs,
                lr=self.pretrain_lr,
                variational_family="none",
                regularizer=None,
                ood=None,
            )
            start = pretrain_map(pre_cfg, split)
        else:
            start = init_checkpoint(dataclasses.replace(finetune_cfg, variational_family="none"),
                                    split)
        self.checkpoint_ = bayes_finetune(start, finetune_cfg, split)
        self.model_ = self.checkpoint_.to_model()
        self.n_features_in_ = X.shape[1]
        return self

    def _samples(self, X):
        self._require_fitted()
        X = check_array(X)
        return posterior_predictive(
            self.model_,
            np.asarray(X, dtype=np.float64),
            self.mc_samples,
            np.random.default_rng(self.seed + 7),
        )

    def predict_proba(self, X):
        return self._samples(X)[1]

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def mutual_information(self, X):
        """Epistemic uncertainty per instance, in nats."""
        return mutual_information(self._samples(X)[0])


class MCDropoutClassifier(_FittedMixin, ClassifierMixin, BaseEstimator):
    """Point-estimate model predicted with Monte Carlo dropout masks."""

    def __init__(self, drop_rate=0.2, mc_samples=20, hidden=(32,), epochs=30, batch_size=32,
                 lr=0.05, momentum=0.9, weight_decay=2e-4, seed=0):
        self.drop_rate = drop_rate
        self.mc_samples = mc_samples
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y):
        base = MapClassifier(self.hidden, self.epochs, self.batch_size, self.lr,
                             self.momentum, self.weight_decay, self.seed)
        base.fit(X, y)
        self.classes_ = base.classes_
        self.checkpoint_ = base.checkpoint_
        self.n_features_in_ = base.n_features_in_
        return self

    def _samples(self, X):
        self._require_fitted()
        X = check_array(X)
        return mc_dropout_predict(
            self.checkpoint_,
            self.drop_rate,
            np.asarray(X, dtype=np.float64),
            self.mc_samples,
            np.random.default_rng(self.seed + 7),
        )

    def predict_proba(self, X):
        return self._samples(X).mean()

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def mutual_information(self, X):
        return mutual_information(self._samples(X))


class DeepEnsembleClassifier(_FittedMixin, ClassifierMixin, BaseEstimator):
    """Average of independently trained point-estimate models."""

    def __init__(self, n_members=5, hidden=(32,), epochs=30, batch_size=32, lr=0.05,
                 momentum=0.9, weight_decay=2e-4, seed=0):
        self.n_members = n_members
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.seed = seed

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, encoded = _encode_labels(np.asarray(y))
        split = _as_split(X, encoded, len(self.classes_))
        cfgs = [
            TrainConfig(
                epochs=self.epochs,
                batch_size=self.batch_size,
                lr=self.lr,
                momentum=self.momentum,
                decay=self.weight_decay,
                seed=self.seed + member,
                model={"kind": "mlp", "hidden": list(self.hidden)},
            )
            for member in range(self.n_members)
        ]
        self.members_ = deep_ensemble(cfgs, split)
        self.n_features_in_ = X.shape[1]
        return self

    def _samples(self, X):
        self._require_fitted()
        X = check_array(X)
        return ensemble_predict(self.members_, np.asarray(X, dtype=np.float64))

    def predict_proba(self, X):
        return self._samples(X)[1]

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def mutual_information(self, X):
        return mutual_information(self._samples(X)[0])


class LaplaceClassifier(_FittedMixin, ClassifierMixin, BaseEstimator):
    """Diagonal Gaussian posterior from local curvature around a trained model."""

    def __init__(self, hidden=(32,), epochs=30, batch_size=32, lr=0.05, momentum=0.9,
                 weight_decay=2e-4, mc_samples=20, seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.mc_samples = mc_samples
        self.seed = seed

    def fit(self, X, y):
        base = MapClassifier(self.hidden, self.epochs, self.batch_size, self.lr,
                             self.momentum, self.weight_decay, self.seed)
        base.fit(X, y)
        split = _as_split(
            check_array(X), _encode_labels(np.asarray(y))[1], len(base.classes_)
        )
        self.classes_ = base.classes_
        self.model_ = laplace_diag(base.checkpoint_, split)
        self.n_features_in_ = base.n_features_in_
        return self

    def _samples(self, X):
        self._require_fitted()
        X = check_array(X)
        return posterior_predictive(
            self.model_,
            np.asarray(X, dtype=np.float64),
            self.mc_samples,
            np.random.default_rng(self.seed + 7),
        )

    def predict_proba(self, X):
        return self._samples(X)[1]

    def predict(self, X):
        probs = self.predict_proba(X)
        return self.classes_[np.argmax(probs, axis=1)]

    def mutual_information(self, X):
        return mutual_information(self._samples(X)[0])
