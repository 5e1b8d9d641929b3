"""Layered classifier models whose weights may be deterministic or variational.

A model is an ordered list of layers, each one of three kinds:

* ``dense``:  x @ W with W of shape (in_features, out_features), no bias
  (bias and gain come from a following affine layer);
* ``conv``:   grouped-free 3x3-style convolution with kernel
  (out_channels, in_channels, k, k), configurable stride and padding;
* ``affine``: per-channel scale and bias stored as one (2, channels) matrix.

Each layer carries either a plain weight tensor or one posterior from
:mod:`vbnn.variational`.  Forward passes run in one of three modes:

* ``mean``:     deterministic weights (posterior mean / shared matrix);
* ``shared``:   one posterior draw reused across the whole batch;
* ``exemplar``: an independent draw per batch instance, routed through the
  exemplar kernels so the cost matches the shared path exactly.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .variational import (
    InitSpec,
    IsotropicPrior,
    MFGPosterior,
    PSEPosterior,
    candidate_weights,
    init_mfg_from_map,
    init_pse_from_map,
    sample_mfg,
    sample_mfg_exemplar,
    sample_pse,
)

__all__ = ["Layer", "BayesModel", "build_mlp", "build_convnet", "build_model"]

_KINDS = ("dense", "conv", "affine")
_ACTIVATIONS = ("none", "relu")


class Layer:
    """One model layer: a parameter block plus kind/activation metadata."""

    def __init__(
        self,
        kind: str,
        weight: Tensor,
        activation: str = "none",
        stride: int = 1,
        padding: int = 0,
    ):
        if kind not in _KINDS:
            raise ValueError(f"unknown layer kind {kind!r}")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.kind = kind
        self.weight: Optional[Tensor] = weight
        self.posterior: MFGPosterior | PSEPosterior | None = None
        self.activation = activation
        self.stride = stride
        self.padding = padding
        self._check_weight_shape(weight.shape)
        # conv layers remember (cin, kh, kw) so matrix-form weights can be
        # folded back into kernels
        self._kernel_geometry = tuple(weight.shape[1:]) if kind == "conv" else None

    def _check_weight_shape(self, shape: tuple[int, ...]) -> None:
        if self.kind == "dense" and len(shape) != 2:
            raise ValueError(f"dense layer weight must be 2-D, got {shape}")
        if self.kind == "conv" and len(shape) != 4:
            raise ValueError(f"conv layer weight must be 4-D, got {shape}")
        if self.kind == "affine" and (len(shape) != 2 or shape[0] != 2):
            raise ValueError(f"affine layer weight must have shape (2, channels), got {shape}")

    # -- family handling ----------------------------------------------------

    @property
    def family(self) -> str:
        if isinstance(self.posterior, MFGPosterior):
            return "mfg"
        if isinstance(self.posterior, PSEPosterior):
            return "pse"
        return "none"

    def param_shape(self) -> tuple[int, ...]:
        if self.weight is not None:
            return self.weight.shape
        if isinstance(self.posterior, MFGPosterior):
            return self.posterior.shape
        if self.kind == "conv":
            return (self.posterior.shape[1],) + self._kernel_geometry
        return self.posterior.shape

    def matrix_shape(self) -> tuple[int, int]:
        """Parameter shape flattened to matrix form for the ensemble family."""
        shape = self.param_shape()
        if self.kind == "conv":
            cout, cin, kh, kw = shape
            return (cin * kh * kw, cout)
        return shape

    def make_variational(
        self,
        family: str,
        rng: np.random.Generator,
        psi_init: InitSpec = InitSpec(),
        n_candidates: int = 20,
        rank: int = 1,
        factor_noise: float = 0.05,
    ) -> None:
        """Replace the point weight with a posterior initialized at it."""
        if self.weight is None:
            raise RuntimeError("layer is already variational")
        if family == "mfg":
            self.posterior = init_mfg_from_map(self.weight, psi_init, rng)
        elif family == "pse":
            w = self.weight.data
            if self.kind == "conv":
                cout, cin, kh, kw = w.shape
                w = w.transpose(1, 2, 3, 0).reshape(cin * kh * kw, cout)
            self.posterior = init_pse_from_map(
                Tensor(w), n_candidates=n_candidates, rank=rank, rng=rng, noise=factor_noise
            )
        else:
            raise ValueError(f"unknown variational family {family!r}")
        self.weight = None

    def parameters(self) -> list[Tensor]:
        if self.posterior is not None:
            return self.posterior.parameters()
        return [self.weight]

    # -- weight realization ---------------------------------------------------

    def _matrix_as_kernel(self, m: Tensor) -> Tensor:
        cin, kh, kw = self._kernel_geometry
        cout = m.shape[-1]
        if m.ndim == 2:
            return T.transpose(T.reshape(m, (cin, kh, kw, cout)), (3, 0, 1, 2))
        batch = m.shape[0]
        return T.transpose(T.reshape(m, (batch, cin, kh, kw, cout)), (0, 4, 1, 2, 3))

    def realize(self, mode: str, rng: Optional[np.random.Generator], batch: int,
                candidate: Optional[int] = None, indices: Optional[np.ndarray] = None) -> Tensor:
        """Weights for this layer under the requested sampling mode.

        Returns the parameter tensor for ``mean``/``shared`` modes, or a
        per-exemplar stack (leading batch axis) for ``exemplar`` mode on
        variational layers.
        """
        if self.posterior is None:
            return self.weight
        if isinstance(self.posterior, MFGPosterior):
            if mode == "mean":
                return self.posterior.mu
            if mode == "shared":
                return sample_mfg(self.posterior, rng)
            return sample_mfg_exemplar(self.posterior, batch, rng)
        # ensemble posterior
        if mode == "mean":
            w = self.posterior.shared
        elif mode == "shared":
            c = candidate if candidate is not None else int(rng.integers(0, self.posterior.n_candidates))
            w = sample_pse(self.posterior, c)
        else:
            w = candidate_weights(self.posterior, indices)
        if self.kind == "conv":
            return self._matrix_as_kernel(w)
        return w


class BayesModel:
    """An ordered stack of layers with one weight prior per model."""

    def __init__(self, layers: Sequence[Layer], prior: IsotropicPrior, n_classes: int,
                 input_shape: tuple[int, ...]):
        self.layers = list(layers)
        self.prior = prior
        self.n_classes = int(n_classes)
        self.input_shape = tuple(input_shape)

    # -- forward --------------------------------------------------------------

    def forward(
        self,
        x: np.ndarray | Tensor,
        mode: str = "mean",
        rng: Optional[np.random.Generator] = None,
        candidate: Optional[int] = None,
        dropout: Optional[tuple[float, np.random.Generator]] = None,
    ) -> Tensor:
        """Logits for a batch under the given sampling mode.

        For the ensemble family one candidate index is drawn per forward pass
        (``shared``) or per exemplar (``exemplar``) and reused by every layer,
        so a draw selects one coherent ensemble member end to end.
        """
        if mode not in ("mean", "shared", "exemplar"):
            raise ValueError(f"unknown forward mode {mode!r}")
        if mode != "mean" and rng is None and not (mode == "shared" and candidate is not None):
            raise ValueError("sampling modes need an rng")
        h = x if isinstance(x, Tensor) else Tensor(x)
        batch = h.shape[0]
        indices = None
        if mode == "exemplar" and any(l.family == "pse" for l in self.layers):
            n_cand = next(l.posterior.n_candidates for l in self.layers if l.family == "pse")
            indices = rng.integers(0, n_cand, size=batch)
        if mode == "shared" and candidate is None and any(l.family == "pse" for l in self.layers):
            n_cand = next(l.posterior.n_candidates for l in self.layers if l.family == "pse")
            candidate = int(rng.integers(0, n_cand))

        for li, layer in enumerate(self.layers):
            if layer.kind == "dense" and h.ndim > 2:
                h = T.reshape(h, (batch, -1))
            if dropout is not None and li > 0 and layer.kind in ("dense", "conv"):
                rate, drng = dropout
                mask = (drng.random(h.shape) >= rate) / (1.0 - rate)
                h = h * Tensor(mask)
            w = layer.realize(mode, rng, batch, candidate=candidate, indices=indices)
            per_exemplar = layer.posterior is not None and mode == "exemplar"
            if layer.kind == "dense":
                if per_exemplar:
                    h3 = T.reshape(h, (batch, 1, h.shape[1]))
                    h = T.reshape(T.batched_matmul(h3, w), (batch, w.shape[2]))
                else:
                    h = T.matmul(h, w)
            elif layer.kind == "conv":
                if per_exemplar:
                    h = T.exemplar_conv2d(h, w, stride=layer.stride, padding=layer.padding)
                else:
                    h = T.conv2d(h, w, stride=layer.stride, padding=layer.padding)
            else:  # affine
                if per_exemplar:
                    h = T.exemplar_affine(h, w[:, 0], w[:, 1])
                else:
                    h = T.affine(h, w[0], w[1])
            if layer.activation == "relu":
                h = T.relu(h)
        if h.ndim != 2:
            h = T.reshape(h, (batch, -1))
        return h

    # -- parameter access -------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        params: list[Tensor] = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def make_variational(
        self,
        family: str,
        rng: np.random.Generator,
        psi_init: InitSpec = InitSpec(),
        n_candidates: int = 20,
        rank: int = 1,
        factor_noise: float = 0.05,
    ) -> None:
        """Wrap every layer's weights in a posterior of the given family."""
        for layer in self.layers:
            layer.make_variational(
                family,
                rng,
                psi_init=psi_init,
                n_candidates=n_candidates,
                rank=rank,
                factor_noise=factor_noise,
            )

    # -- structure description (for checkpoints) ---------------------------------

    def describe(self) -> dict:
        layers = []
        for layer in self.layers:
            entry = {
                "kind": layer.kind,
                "activation": layer.activation,
                "family": layer.family,
                "param_shape": list(layer.param_shape()),
            }
            if layer.kind == "conv":
                entry["stride"] = layer.stride
                entry["padding"] = layer.padding
            if layer.family == "pse":
                entry["candidates"] = layer.posterior.n_candidates
                entry["rank"] = layer.posterior.rank
            layers.append(entry)
        return {
            "layers": layers,
            "n_classes": self.n_classes,
            "input_shape": list(self.input_shape),
            "prior": {"variance": self.prior.variance, "n_train": self.prior.n_train},
        }


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------


def _dense_init(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in)


def _conv_init(c_out: int, c_in: int, k: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / (c_in * k * k))


def _affine_init(channels: int) -> np.ndarray:
    return np.stack([np.ones(channels), np.zeros(channels)])


def build_mlp(d_in: int, hidden: Sequence[int], n_classes: int, prior: IsotropicPrior,
              rng: np.random.Generator) -> BayesModel:
    layers: list[Layer] = []
    prev = d_in
    for width in hidden:
        layers.append(Layer("dense", Tensor(_dense_init(prev, width, rng), requires_grad=True)))
        layers.append(Layer("affine", Tensor(_affine_init(width), requires_grad=True), activation="relu"))
        prev = width
    layers.append(Layer("dense", Tensor(_dense_init(prev, n_classes, rng), requires_grad=True)))
    layers.append(Layer("affine", Tensor(_affine_init(n_classes), requires_grad=True)))
    return BayesModel(layers, prior, n_classes, (d_in,))


def build_convnet(
    in_channels: int,
    image_size: int,
    channels: Sequence[int],
    n_classes: int,
    prior: IsotropicPrior,
    rng: np.random.Generator,
    kernel: int = 3,
) -> BayesModel:
    """Small convnet: full-resolution first conv, then stride-2 stages."""
    layers: list[Layer] = []
    prev = in_channels
    size = image_size
    for li, ch in enumerate(channels):
        stride = 1 if li == 0 else 2
        layers.append(
            Layer(
                "conv",
                Tensor(_conv_init(ch, prev, kernel, rng), requires_grad=True),
                stride=stride,
                padding=kernel // 2,
            )
        )
        layers.append(Layer("affine", Tensor(_affine_init(ch), requires_grad=True), activation="relu"))
        prev = ch
        size = (size + 2 * (kernel // 2) - kernel) // stride + 1
    flat = prev * size * size
    layers.append(Layer("dense", Tensor(_dense_init(flat, n_classes, rng), requires_grad=True)))
    layers.append(Layer("affine", Tensor(_affine_init(n_classes), requires_grad=True)))
    return BayesModel(layers, prior, n_classes, (in_channels, image_size, image_size))


def build_model(model_spec: dict, input_shape: tuple[int, ...], n_classes: int,
                prior: IsotropicPrior, seed: int) -> BayesModel:
    """Construct a model from a config-style description."""
    rng = np.random.default_rng(seed)
    kind = model_spec.get("kind", "mlp")
    if kind == "mlp":
        d_in = int(np.prod(input_shape))
        hidden = list(model_spec.get("hidden", [32]))
        return build_mlp(d_in, hidden, n_classes, prior, rng)
    if kind == "convnet":
        if len(input_shape) != 3:
            raise ValueError(f"convnet needs (channels, size, size) inputs, got {input_shape}")
        channels = list(model_spec.get("channels", [8, 12]))
        kernel = int(model_spec.get("kernel", 3))
        return build_convnet(
            input_shape[0], input_shape[1], channels, n_classes, prior, rng, kernel=kernel
        )
    raise ValueError(f"unknown model kind {kind!r}")
