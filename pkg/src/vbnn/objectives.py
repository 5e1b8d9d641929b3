"""Training objectives and predictive quantities.

The expected log-likelihood has two Monte Carlo estimators with identical
expectation: a standard one that shares a single weight draw across a
minibatch, and an exemplar one that draws an independent weight per instance
(much lower gradient variance at realistic batch sizes).  Predictions average
softmax outputs over posterior samples; epistemic uncertainty is the mutual
information between weights and label, estimated as the entropy of the mean
prediction minus the mean per-sample entropy.  An optional margin loss pushes
that uncertainty up to a threshold on out-of-distribution inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .model import BayesModel
from .tensor import Tensor

__all__ = [
    "PredictionSamples",
    "RegularizerConfig",
    "nll_loss",
    "batch_log_likelihood",
    "ell_standard",
    "ell_exemplar",
    "posterior_predictive",
    "predictive_entropy",
    "mutual_information",
    "margin_uncertainty_loss",
    "combined_objective",
]


@dataclass(frozen=True)
class RegularizerConfig:
    """Margin-loss settings: threshold, trade-off weight, training MC samples."""

    gamma: float = 0.75
    alpha: float = 3.0
    s_train: int = 2

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.s_train < 2:
            raise ValueError("uncertainty needs at least 2 MC samples to be nonzero")


class PredictionSamples:
    """Per-MC-sample class probabilities, shape (samples, batch, classes)."""

    __slots__ = ("probs",)

    def __init__(self, probs: np.ndarray):
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 3:
            raise ValueError(f"expected (samples, batch, classes), got {probs.shape}")
        if probs.min() < 0 or probs.max() > 1:
            raise ValueError("probabilities must lie in [0, 1]")
        sums = probs.sum(axis=2)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("sample rows must sum to 1")
        self.probs = probs

    @property
    def n_samples(self) -> int:
        return self.probs.shape[0]

    def mean(self) -> np.ndarray:
        return self.probs.mean(axis=0)


def nll_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log probability of the labels (differentiable)."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} disagrees with logits {logits.shape}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k})")
    log_probs = T.log_softmax(logits, axis=1)
    return T.neg(log_probs[np.arange(n), labels].mean())


def batch_log_likelihood(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean log probability of the labels; the ascent form of ``nll_loss``."""
    return T.neg(nll_loss(logits, labels))


def ell_standard(model: BayesModel, batch: tuple[np.ndarray, np.ndarray],
                 rng: np.random.Generator) -> Tensor:
    """Likelihood estimate with one weight draw shared by the whole minibatch."""
    x, y = batch
    if len(x) == 0:
        raise ValueError("batch must be non-empty")
    logits = model.forward(x, mode="shared", rng=rng)
    return batch_log_likelihood(logits, y)


def ell_exemplar(model: BayesModel, batch: tuple[np.ndarray, np.ndarray],
                 rng: np.random.Generator) -> Tensor:
    """Likelihood estimate with an independent weight draw per instance."""
    x, y = batch
    if len(x) == 0:
        raise ValueError("batch must be non-empty")
    logits = model.forward(x, mode="exemplar", rng=rng)
    return batch_log_likelihood(logits, y)


def posterior_predictive(
    model: BayesModel,
    x: np.ndarray,
    n_samples: int,
    rng: np.random.Generator | None = None,
) -> tuple[PredictionSamples, np.ndarray]:
    """Average of ``n_samples`` stochastic softmax outputs.

    For the ensemble family the candidates are enumerated cyclically whenever
    ``n_samples`` covers them all (exact mixture when equal); otherwise the
    candidate per sample is drawn uniformly.
    """
    if n_samples < 1:
        raise ValueError("need at least one MC sample")
    has_pse = any(l.family == "pse" for l in model.layers)
    has_mfg = any(l.family == "mfg" for l in model.layers)
    n_cand = None
    if has_pse:
        n_cand = next(l.posterior.n_candidates for l in model.layers if l.family == "pse")
    if (has_pse or has_mfg) and rng is None:
        rng = np.random.default_rng(0)
    out = np.empty((n_samples, x.shape[0], model.n_classes))
    for s in range(n_samples):
        if has_pse and not has_mfg:
            candidate = s % n_cand if n_samples >= n_cand else int(rng.integers(0, n_cand))
            logits = model.forward(x, mode="shared", rng=rng, candidate=candidate)
        elif has_pse or has_mfg:
            logits = model.forward(x, mode="shared", rng=rng)
        else:
            logits = model.forward(x, mode="mean")
        out[s] = T.softmax(logits, axis=1).data
    samples = PredictionSamples(out)
    return samples, samples.mean()


def predictive_entropy(avg_probs: np.ndarray) -> np.ndarray:
    """Shannon entropy per row, in nats, with 0 * ln(0) = 0."""
    p = np.asarray(avg_probs, dtype=np.float64)
    if p.min() < 0 or np.abs(p.sum(axis=-1) - 1.0).max() > 1e-9:
        raise ValueError("rows must be probability distributions")
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -plogp.sum(axis=-1)


def mutual_information(ps: PredictionSamples) -> np.ndarray:
    """Epistemic uncertainty per instance, in nats.

    Entropy of the mean prediction minus the mean per-sample entropy; zero
    when all samples agree, at most ln(classes).  Tiny negative values from
    floating-point cancellation are clamped to zero.
    """
    mean_entropy = predictive_entropy(ps.mean())
    sample_entropies = predictive_entropy(ps.probs).mean(axis=0)
    mi = mean_entropy - sample_entropies
    return np.where(mi > 0, mi, 0.0)


def _entropy_rows(p: Tensor) -> Tensor:
    return T.neg(T.tensor_sum(T.xlogx(p), axis=1))


def margin_uncertainty_loss(
    model: BayesModel,
    ood_x: np.ndarray,
    cfg: RegularizerConfig,
    rng: np.random.Generator,
) -> Tensor:
    """Mean of min(uncertainty, gamma) over an out-of-distribution batch.

    Differentiable: maximizing it pushes the model's epistemic uncertainty on
    these inputs up to the threshold, after which the gradient vanishes.
    Uncertainty is estimated from ``cfg.s_train`` fresh exemplar-style draws.
    """
    if len(ood_x) == 0:
        raise ValueError("out-of-distribution batch must be non-empty")
    probs = []
    for _ in range(cfg.s_train):
        logits = model.forward(ood_x, mode="exemplar", rng=rng)
        probs.append(T.softmax(logits, axis=1))
    acc = probs[0]
    for p in probs[1:]:
        acc = acc + p
    mean_probs = acc * (1.0 / cfg.s_train)
    ent_acc = _entropy_rows(probs[0])
    for p in probs[1:]:
        ent_acc = ent_acc + _entropy_rows(p)
    mi = _entropy_rows(mean_probs) - ent_acc * (1.0 / cfg.s_train)
    return T.minimum(mi, cfg.gamma).mean()


def combined_objective(
    model: BayesModel,
    batch: tuple[np.ndarray, np.ndarray],
    ood_x: np.ndarray | None,
    cfg: RegularizerConfig,
    rng: np.random.Generator,
) -> Tensor:
    """Exemplar likelihood plus the weighted margin loss (ascent objective).

    The prior-matching term is not part of this value; it enters through
    gradient editing after backward.
    """
    ll = ell_exemplar(model, batch, rng)
    if cfg.alpha == 0:
        return ll
    if ood_x is None or len(ood_x) == 0:
        raise ValueError("regularizer is active but no out-of-distribution batch was given")
    return ll + margin_uncertainty_loss(model, ood_x, cfg, rng) * cfg.alpha
