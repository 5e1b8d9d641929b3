"""Point-estimate pretraining, Bayesian fine-tuning, and baseline methods.

Pretraining minimizes the classification loss by SGD with momentum, applying
weight decay as a gradient edit.  Fine-tuning starts from a converged
checkpoint, wraps every layer in a variational posterior initialized at the
point estimate, and then repeats per minibatch: estimate the expected
log-likelihood with per-exemplar weight draws, backpropagate, add the
closed-form prior-matching terms to the ascent gradients, and take one
ascent step.  A from-scratch variational run is the same loop started from a
randomly initialized checkpoint.

Baselines: a diagonal curvature-based Gaussian around the point estimate,
Monte Carlo dropout prediction, and an ensemble of independently pretrained
models.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, config_hash
from .datasets import DatasetSplit, OODSpec, gen_ood
from .model import BayesModel, build_model
from .objectives import (
    PredictionSamples,
    RegularizerConfig,
    batch_log_likelihood,
    combined_objective,
    ell_exemplar,
    nll_loss,
)
from .tensor import Graph, NonFiniteError, Tensor, softmax
from .variational import (
    InitSpec,
    IsotropicPrior,
    MFGPosterior,
    edit_gradients_mfg,
    edit_gradients_pse,
    init_mfg_from_map,
)

__all__ = [
    "TrainConfig",
    "NumericalError",
    "SGD",
    "pretrain_map",
    "init_checkpoint",
    "bayes_finetune",
    "laplace_diag",
    "mc_dropout_predict",
    "deep_ensemble",
    "ensemble_predict",
]

OOD_POOL_SIZE = 1000


class NumericalError(RuntimeError):
    """Training produced NaN/Inf; carries a diagnostic message."""


@dataclass
class TrainConfig:
    """One training phase (pretraining or fine-tuning)."""

    epochs: int = 12
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    decay: float = 2e-4
    seed: int = 0
    variational_family: str = "none"
    pse_candidates: int = 20
    pse_rank: int = 1
    psi_init_mean: float = -5.0
    psi_init_std: float = 0.01
    regularizer: Optional[RegularizerConfig] = None
    ood: Optional[OODSpec] = None
    model: dict = field(default_factory=lambda: {"kind": "mlp", "hidden": [32]})

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.decay <= 0:
            raise ValueError("decay must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.variational_family not in ("none", "mfg", "pse"):
            raise ValueError(f"unknown variational family {self.variational_family!r}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["regularizer"] = asdict(self.regularizer) if self.regularizer else None
        out["ood"] = asdict(self.ood) if self.ood else None
        return out


class SGD:
    """Stochastic gradient steps with momentum, ascending or descending."""

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9,
                 maximize: bool = False):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.sign = 1.0 if maximize else -1.0
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad
            p.data = p.data + self.sign * self.lr * v

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def _minibatches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _metadata(cfg: TrainConfig, data: DatasetSplit, phase: str) -> dict:
    cfg_dict = cfg.to_dict()
    return {
        "phase": phase,
        "config": cfg_dict,
        "config_hash": config_hash(cfg_dict),
        "seed": cfg.seed,
        "epoch": cfg.epochs,
        "n_train": len(data),
    }


def pretrain_map(cfg: TrainConfig, data: DatasetSplit) -> Checkpoint:
    """Fit a deterministic model by SGD with weight-decay gradient edits.

    The learning rate drops by 10x at three quarters of the epoch budget.
    Divergence (non-finite loss) aborts with a diagnostic.
    """
    if cfg.variational_family != "none":
        raise ValueError("pretraining expects variational_family='none'")
    prior = IsotropicPrior.from_decay(cfg.decay, len(data))
    model = build_model(cfg.model, data.input_shape, data.n_classes, prior, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum, maximize=False)
    drop_epoch = int(0.75 * cfg.epochs)
    for epoch in range(cfg.epochs):
        if cfg.epochs >= 4 and epoch == drop_epoch:
            opt.lr = cfg.lr / 10.0
        for idx in _minibatches(len(data), cfg.batch_size, rng):
            try:
                with Graph() as g:
                    loss = nll_loss(model.forward(data.x[idx], mode="mean"), data.y[idx])
                g.backward(loss)
            except NonFiniteError as err:
                raise NumericalError(f"pretraining diverged in epoch {epoch}: {err}") from err
            for p in model.parameters():
                if p.grad is not None:
                    p.grad = p.grad + cfg.decay * p.data
            opt.step()
            opt.zero_grad()
    return Checkpoint.from_model(model, _metadata(cfg, data, "pretrain"))


def init_checkpoint(cfg: TrainConfig, data: DatasetSplit) -> Checkpoint:
    """Randomly initialized, untrained checkpoint (from-scratch baseline start)."""
    prior = IsotropicPrior.from_decay(cfg.decay, len(data))
    model = build_model(cfg.model, data.input_shape, data.n_classes, prior, cfg.seed)
    meta = _metadata(cfg, data, "init")
    meta["epoch"] = 0
    return Checkpoint.from_model(model, meta)


def _edit_all_gradients(model: BayesModel, prior: IsotropicPrior) -> None:
    """Add prior-matching terms to the ascent gradients of every layer."""
    for layer in model.layers:
        if layer.family == "mfg":
            post = layer.posterior
            g_mu = post.mu.grad if post.mu.grad is not None else np.zeros_like(post.mu.data)
            g_ls = (
                post.log_std.grad
                if post.log_std.grad is not None
                else np.zeros_like(post.log_std.data)
            )
            post.mu.grad, post.log_std.grad = edit_gradients_mfg(g_mu, g_ls, post, prior)
        elif layer.family == "pse":
            post = layer.posterior
            g_w = post.shared.grad if post.shared.grad is not None else np.zeros_like(post.shared.data)
            g_l = post.left.grad if post.left.grad is not None else np.zeros_like(post.left.data)
            g_r = post.right.grad if post.right.grad is not None else np.zeros_like(post.right.data)
            post.shared.grad, post.left.grad, post.right.grad = edit_gradients_pse(
                g_w, g_l, g_r, post, prior
            )
        else:
            w = layer.weight
            if w.grad is not None:
                w.grad = w.grad - prior.decay * w.data


def bayes_finetune(
    start: Checkpoint,
    cfg: TrainConfig,
    data: DatasetSplit,
    ood_pool: Optional[np.ndarray] = None,
    trace: Optional[list] = None,
) -> Checkpoint:
    """Adapt a point-estimate checkpoint into a variational model.

    Per minibatch, in order: per-exemplar likelihood estimate (plus the
    uncertainty margin term when a regularizer is configured), backward pass,
    prior-matching gradient edits, one ascent step.  ``trace``, when given,
    records those four stages per step for inspection.
    """
    if cfg.variational_family not in ("mfg", "pse"):
        raise ValueError("fine-tuning needs variational_family 'mfg' or 'pse'")
    model = start.to_model()
    if model.n_classes != data.n_classes or model.input_shape != data.input_shape:
        raise ValueError("checkpoint topology disagrees with the dataset")
    if any(layer.family != "none" for layer in model.layers):
        raise ValueError("fine-tuning starts from a deterministic checkpoint")
    prior = IsotropicPrior.from_decay(cfg.decay, len(data))
    model.prior = prior
    rng = np.random.default_rng(cfg.seed)
    model.make_variational(
        cfg.variational_family,
        rng,
        psi_init=InitSpec(cfg.psi_init_mean, cfg.psi_init_std),
        n_candidates=cfg.pse_candidates,
        rank=cfg.pse_rank,
    )
    if cfg.regularizer is not None and cfg.regularizer.alpha > 0:
        if ood_pool is None:
            if cfg.ood is None:
                raise ValueError("regularizer is active but no OOD source is configured")
            ood_pool = gen_ood(data, cfg.ood)
        if len(ood_pool) > OOD_POOL_SIZE:
            keep = rng.choice(len(ood_pool), size=OOD_POOL_SIZE, replace=False)
            ood_pool = ood_pool[keep]
        if len(ood_pool) == 0:
            raise ValueError("regularizer is active but the OOD pool is empty")
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum, maximize=True)
    for epoch in range(cfg.epochs):
        for idx in _minibatches(len(data), cfg.batch_size, rng):
            batch = (data.x[idx], data.y[idx])
            try:
                with Graph() as g:
                    if cfg.regularizer is not None and cfg.regularizer.alpha > 0:
                        ood_idx = rng.integers(0, len(ood_pool), size=len(idx))
                        objective = combined_objective(
                            model, batch, ood_pool[ood_idx], cfg.regularizer, rng
                        )
                    else:
                        objective = ell_exemplar(model, batch, rng)
                if trace is not None:
                    trace.append("likelihood")
                g.backward(objective)
                if trace is not None:
                    trace.append("backward")
            except NonFiniteError as err:
                raise NumericalError(f"fine-tuning diverged in epoch {epoch}: {err}") from err
            _edit_all_gradients(model, prior)
            if trace is not None:
                trace.append("edit")
            opt.step()
            opt.zero_grad()
            if trace is not None:
                trace.append("step")
    return Checkpoint.from_model(model, _metadata(cfg, data, "finetune"))


def laplace_diag(start: Checkpoint, data: DatasetSplit,
                 prior_variance: Optional[float] = None) -> BayesModel:
    """Diagonal Gaussian around the point estimate from squared gradients.

    The per-coordinate curvature is the empirical (observed-label) squared
    log-likelihood gradient summed over the training set; the posterior
    variance is 1 / (curvature + 1 / prior variance), expressed as a
    Gaussian-family model with mean equal to the point estimate.
    """
    model = start.to_model()
    if any(layer.family != "none" for layer in model.layers):
        raise ValueError("the curvature approximation starts from a deterministic checkpoint")
    if prior_variance is None:
        decay = start.metadata.get("config", {}).get("decay")
        if decay is None:
            raise ValueError("checkpoint metadata lacks a decay; pass prior_variance explicitly")
        prior_variance = 1.0 / (decay * len(data))
    params = model.parameters()
    fisher = [np.zeros_like(p.data) for p in params]
    for i in range(len(data)):
        with Graph() as g:
            logits = model.forward(data.x[i : i + 1], mode="mean")
            ll = batch_log_likelihood(logits, data.y[i : i + 1])
        g.backward(ll)
        for f, p in zip(fisher, params):
            if p.grad is not None:
                f += p.grad**2
            p.grad = None
    variance = [1.0 / (f + 1.0 / prior_variance) for f in fisher]
    out = start.to_model()
    k = 0
    for layer in out.layers:
        w = layer.weight
        layer.posterior = MFGPosterior(
            Tensor(w.data.copy(), requires_grad=True),
            Tensor(0.5 * np.log(variance[k]), requires_grad=True),
        )
        layer.weight = None
        k += 1
    out.prior = IsotropicPrior(prior_variance, len(data))
    return out


def mc_dropout_predict(
    start: Checkpoint,
    drop_rate: float,
    x: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
) -> PredictionSamples:
    """Stochastic forward passes with Bernoulli masks on hidden-layer inputs.

    Masks use inverted scaling 1/(1 - drop_rate) and are applied to the input
    of every dense or conv layer after the first.
    """
    if not 0.0 < drop_rate < 1.0:
        raise ValueError("drop_rate must lie in (0, 1)")
    model = start.to_model()
    out = np.empty((n_samples, x.shape[0], model.n_classes))
    for s in range(n_samples):
        logits = model.forward(x, mode="mean", dropout=(drop_rate, rng))
        out[s] = softmax(logits, axis=1).data
    return PredictionSamples(out)


def deep_ensemble(cfgs: Sequence[TrainConfig], data: DatasetSplit) -> list[Checkpoint]:
    """Independently pretrained models to be averaged at prediction time."""
    if len(cfgs) < 2:
        raise ValueError("an ensemble needs at least two members")
    return [pretrain_map(cfg, data) for cfg in cfgs]


def ensemble_predict(members: Sequence[Checkpoint], x: np.ndarray) -> tuple[PredictionSamples, np.ndarray]:
    """Stack member softmax outputs as prediction samples (one per member)."""
    models = [m.to_model() for m in members]
    out = np.empty((len(models), x.shape[0], models[0].n_classes))
    for i, model in enumerate(models):
        out[i] = softmax(model.forward(x, mode="mean"), axis=1).data
    samples = PredictionSamples(out)
    return samples, samples.mean()
