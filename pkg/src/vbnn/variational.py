"""Variational posterior families over layer weights.

Two families are provided:

* a fully factorized Gaussian (per-weight mean and log standard deviation),
  sampled by the reparameterization w = mu + exp(log_std) * eps;
* a parameter-sharing ensemble: a uniform mixture of ``n_candidates`` point
  masses, where candidate c's weight is the shared matrix modulated
  elementwise by a rank-``r`` product, w_c = (L_c R_c) o W_shared.

Both support shared sampling (one weight for a whole batch) and exemplar
sampling (an independent weight per batch instance), plus closed-form
gradient edits that account for the prior-matching term of the evidence
lower bound, in the style of weight decay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, batched_matmul, exp, getitem, matmul, mul, pause_mac_count

__all__ = [
    "InitSpec",
    "IsotropicPrior",
    "MFGPosterior",
    "PSEPosterior",
    "init_mfg_from_map",
    "init_pse_from_map",
    "sample_mfg",
    "sample_mfg_exemplar",
    "sample_pse",
    "sample_pse_exemplar",
    "candidate_weights",
    "edit_gradients_mfg",
    "edit_gradients_pse",
    "kl_mfg",
    "pse_complexity_value",
    "kernel_to_matrix",
    "matrix_to_kernel",
]


@dataclass(frozen=True)
class InitSpec:
    """Gaussian initializer for newly added log-std parameters.

    The default keeps the initial weight noise small (std of exp(-5), about
    6.7e-3) so the freshly wrapped model starts next to its point estimate.
    """

    mean: float = -5.0
    std: float = 0.01

    def draw(self, shape, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(shape)


class IsotropicPrior:
    """Zero-mean isotropic Gaussian prior over weights.

    Carries the prior variance, the equivalent weight-decay coefficient, and
    the training-set size; ``decay == 1 / (variance * n_train)`` holds exactly
    regardless of which parameterization the prior was built from (the decay
    is re-derived from the stored variance).
    """

    __slots__ = ("variance", "decay", "n_train")

    def __init__(self, variance: float, n_train: int):
        if variance <= 0:
            raise ValueError("prior variance must be positive")
        if n_train < 1:
            raise ValueError("training-set size must be positive")
        self.variance = float(variance)
        self.n_train = int(n_train)
        self.decay = 1.0 / (self.variance * self.n_train)

    @classmethod
    def from_variance(cls, variance: float, n_train: int) -> "IsotropicPrior":
        return cls(variance, n_train)

    @classmethod
    def from_decay(cls, decay: float, n_train: int) -> "IsotropicPrior":
        if decay <= 0:
            raise ValueError("decay coefficient must be positive")
        return cls(1.0 / (decay * n_train), n_train)

    def __repr__(self) -> str:
        return f"IsotropicPrior(variance={self.variance:g}, decay={self.decay:g}, n_train={self.n_train})"


class MFGPosterior:
    """Factorized Gaussian over one weight tensor: mean and log standard deviation."""

    __slots__ = ("mu", "log_std")

    def __init__(self, mu: Tensor, log_std: Tensor):
        if mu.shape != log_std.shape:
            raise ValueError(f"mu and log_std shapes disagree: {mu.shape} vs {log_std.shape}")
        self.mu = mu
        self.log_std = log_std

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mu.shape

    def parameters(self) -> list[Tensor]:
        return [self.mu, self.log_std]

    def std(self) -> np.ndarray:
        return np.exp(self.log_std.data)


class PSEPosterior:
    """Parameter-sharing ensemble over one weight matrix.

    Candidate c's weight is (left[c] @ right[c]) o shared, an elementwise
    modulation of the shared matrix by a rank-``rank`` perturbation.
    Convolution kernels are stored flattened to (in_features, out_features)
    matrix form; see ``kernel_to_matrix``.
    """

    __slots__ = ("shared", "left", "right")

    def __init__(self, shared: Tensor, left: Tensor, right: Tensor):
        if shared.ndim != 2:
            raise ValueError("shared weights must be a matrix")
        if left.ndim != 3 or right.ndim != 3:
            raise ValueError("factors must have shape (candidates, dim, rank)")
        c, m_in, r = left.shape
        if right.shape != (c, r, shared.shape[1]) or m_in != shared.shape[0]:
            raise ValueError(
                f"factor shapes disagree: shared {shared.shape}, left {left.shape}, right {right.shape}"
            )
        self.shared = shared
        self.left = left
        self.right = right

    @property
    def n_candidates(self) -> int:
        return self.left.shape[0]

    @property
    def rank(self) -> int:
        return self.left.shape[2]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.shared.shape

    def parameters(self) -> list[Tensor]:
        return [self.shared, self.left, self.right]

    def perturbations(self) -> np.ndarray:
        """All candidate modulation matrices, shape (candidates, m_in, m_out)."""
        return np.matmul(self.left.data, self.right.data)


# ---------------------------------------------------------------------------
# initialization from a converged point estimate
# ---------------------------------------------------------------------------


def init_mfg_from_map(
    w_star: Tensor | np.ndarray,
    psi_init: InitSpec = InitSpec(),
    rng: np.random.Generator | None = None,
) -> MFGPosterior:
    """Wrap a converged weight tensor: mean copies the weights exactly."""
    data = w_star.data if isinstance(w_star, Tensor) else np.asarray(w_star, dtype=np.float64)
    rng = rng if rng is not None else np.random.default_rng(0)
    mu = Tensor(data.copy(), requires_grad=True)
    log_std = Tensor(psi_init.draw(data.shape, rng), requires_grad=True)
    return MFGPosterior(mu, log_std)


def init_pse_from_map(
    w_star: Tensor | np.ndarray,
    n_candidates: int = 20,
    rank: int = 1,
    rng: np.random.Generator | None = None,
    noise: float = 0.05,
) -> PSEPosterior:
    """Wrap a converged weight matrix into an ensemble posterior.

    Factor entries are drawn i.i.d. Normal(rank^(-1/2), noise) so the expected
    modulation matrix is all ones and every candidate starts near the shared
    weights.  ``noise=0`` makes candidates exactly equal to the point estimate
    (bitwise, at rank 1).
    """
    if n_candidates < 1 or rank < 1:
        raise ValueError("need n_candidates >= 1 and rank >= 1")
    data = w_star.data if isinstance(w_star, Tensor) else np.asarray(w_star, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("ensemble posterior wraps matrix-form weights; flatten kernels first")
    rng = rng if rng is not None else np.random.default_rng(0)
    m_in, m_out = data.shape
    loc = rank ** -0.5
    left = loc + noise * rng.standard_normal((n_candidates, m_in, rank))
    right = loc + noise * rng.standard_normal((n_candidates, rank, m_out))
    return PSEPosterior(
        Tensor(data.copy(), requires_grad=True),
        Tensor(left, requires_grad=True),
        Tensor(right, requires_grad=True),
    )


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_mfg(p: MFGPosterior, rng: np.random.Generator) -> Tensor:
    """One reparameterized draw, differentiable wrt mean and log-std."""
    eps = rng.standard_normal(p.shape)
    with pause_mac_count():
        return p.mu + exp(p.log_std) * Tensor(eps)


def sample_mfg_exemplar(p: MFGPosterior, batch: int, rng: np.random.Generator) -> Tensor:
    """A stack of ``batch`` independent draws, one weight per exemplar."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    eps = rng.standard_normal((batch,) + p.shape)
    with pause_mac_count():
        return p.mu + exp(p.log_std) * Tensor(eps)


def sample_pse(p: PSEPosterior, c: int) -> Tensor:
    """Candidate c's weight matrix, differentiable wrt all three parameter blocks."""
    if not 0 <= c < p.n_candidates:
        raise IndexError(f"candidate index {c} out of range [0, {p.n_candidates})")
    with pause_mac_count():
        pert = matmul(getitem(p.left, c), getitem(p.right, c))
        return mul(pert, p.shared)


def candidate_weights(p: PSEPosterior, indices: np.ndarray) -> Tensor:
    """Candidate weights for an index per exemplar, shape (batch, m_in, m_out)."""
    indices = np.asarray(indices)
    if indices.ndim != 1:
        raise ValueError("indices must be one-dimensional")
    if indices.min(initial=0) < 0 or indices.max(initial=0) >= p.n_candidates:
        raise IndexError("candidate index out of range")
    with pause_mac_count():
        left = getitem(p.left, indices)
        right = getitem(p.right, indices)
        pert = batched_matmul(left, right)
        return mul(pert, p.shared)


def sample_pse_exemplar(
    p: PSEPosterior, batch: int, rng: np.random.Generator
) -> tuple[Tensor, np.ndarray]:
    """Per-exemplar candidate draws with uniform candidate indices."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    indices = rng.integers(0, p.n_candidates, size=batch)
    return candidate_weights(p, indices), indices


# ---------------------------------------------------------------------------
# prior-matching gradient edits (ascent convention)
# ---------------------------------------------------------------------------


def edit_gradients_mfg(
    grad_mu: np.ndarray,
    grad_log_std: np.ndarray,
    p: MFGPosterior,
    prior: IsotropicPrior,
) -> tuple[np.ndarray, np.ndarray]:
    """Add the prior-matching term to ascent gradients of the likelihood.

    The mean receives plain weight decay; the log-std receives an exponential
    decay balanced by a constant 1/n, whose fixed point is the prior std.
    """
    if grad_mu.shape != p.shape or grad_log_std.shape != p.shape:
        raise ValueError("gradient shapes disagree with the posterior")
    lam = prior.decay
    edited_mu = grad_mu - lam * p.mu.data
    edited_log_std = grad_log_std - lam * np.exp(2.0 * p.log_std.data) + 1.0 / prior.n_train
    return edited_mu, edited_log_std


def edit_gradients_pse(
    grad_shared: np.ndarray,
    grad_left: np.ndarray,
    grad_right: np.ndarray,
    p: PSEPosterior,
    prior: IsotropicPrior,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Add the prior-matching term for the ensemble posterior.

    The added terms are the analytic gradient of
    -(decay / 2C) * sum_c ||(L_c R_c) o W||^2 wrt each parameter block.
    """
    if grad_shared.shape != p.shared.shape:
        raise ValueError("shared-gradient shape disagrees with the posterior")
    if grad_left.shape != p.left.shape or grad_right.shape != p.right.shape:
        raise ValueError("factor-gradient shapes disagree with the posterior")
    lam = prior.decay
    c = p.n_candidates
    w = p.shared.data
    pert = np.matmul(p.left.data, p.right.data)  # (C, m_in, m_out)
    scaled = pert * (w * w)
    edited_shared = grad_shared - (lam / c) * ((pert * pert).sum(axis=0) * w)
    edited_left = grad_left - (lam / c) * np.matmul(scaled, np.swapaxes(p.right.data, 1, 2))
    edited_right = grad_right - (lam / c) * np.matmul(np.swapaxes(p.left.data, 1, 2), scaled)
    return edited_shared, edited_left, edited_right


def kl_mfg(p: MFGPosterior, prior: IsotropicPrior) -> float:
    """Closed-form KL divergence from the factorized Gaussian to the prior."""
    mu = p.mu.data
    log_std = p.log_std.data
    log_sigma0 = 0.5 * math.log(prior.variance)
    terms = log_sigma0 - log_std + (np.exp(2.0 * log_std) + mu * mu) / (2.0 * prior.variance) - 0.5
    return float(terms.sum())


def pse_complexity_value(p: PSEPosterior, prior: IsotropicPrior) -> float:
    """Scalar whose gradient reproduces the ensemble gradient edits exactly."""
    pert = p.perturbations()
    sq = (pert * p.shared.data[None]) ** 2
    return float(-(prior.decay / (2.0 * p.n_candidates)) * sq.sum())


# ---------------------------------------------------------------------------
# kernel <-> matrix layout for ensemble posteriors over convolutions
# ---------------------------------------------------------------------------


def kernel_to_matrix(kernel: np.ndarray) -> np.ndarray:
    """(out, in, kh, kw) kernel to (in * kh * kw, out) matrix."""
    cout, cin, kh, kw = kernel.shape
    return kernel.transpose(1, 2, 3, 0).reshape(cin * kh * kw, cout)


def matrix_to_kernel(matrix: np.ndarray, cin: int, kh: int, kw: int) -> np.ndarray:
    """Inverse of ``kernel_to_matrix``."""
    cout = matrix.shape[1]
    return matrix.reshape(cin, kh, kw, cout).transpose(3, 0, 1, 2)
