"""Model checkpoints: topology plus parameter blocks in one binary container.

A checkpoint fully reconstructs its model: deterministic layers carry one
weight block, Gaussian layers carry mean and log-std, ensemble layers carry
the shared matrix and both factor stacks.  Round trips are bitwise exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import BayesModel, Layer
from .serialization import CHECKPOINT_MAGIC, FORMAT_VERSION, read_container, write_container
from .tensor import Tensor
from .variational import IsotropicPrior, MFGPosterior, PSEPosterior

__all__ = ["Checkpoint", "config_hash"]


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def _layer_blocks(index: int, layer: Layer) -> list[tuple[str, np.ndarray]]:
    prefix = f"layer{index}"
    if layer.family == "none":
        return [(f"{prefix}.weight", layer.weight.data)]
    if layer.family == "mfg":
        return [
            (f"{prefix}.mu", layer.posterior.mu.data),
            (f"{prefix}.log_std", layer.posterior.log_std.data),
        ]
    return [
        (f"{prefix}.shared", layer.posterior.shared.data),
        (f"{prefix}.left", layer.posterior.left.data),
        (f"{prefix}.right", layer.posterior.right.data),
    ]


@dataclass
class Checkpoint:
    """Serializable snapshot of a model and its training metadata."""

    topology: dict
    metadata: dict
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: BayesModel, metadata: dict | None = None) -> "Checkpoint":
        params: dict[str, np.ndarray] = {}
        for i, layer in enumerate(model.layers):
            for name, arr in _layer_blocks(i, layer):
                params[name] = arr.copy()
        return cls(topology=model.describe(), metadata=dict(metadata or {}), params=params)

    def to_model(self) -> BayesModel:
        topo = self.topology
        prior = IsotropicPrior(topo["prior"]["variance"], topo["prior"]["n_train"])
        layers: list[Layer] = []
        for i, entry in enumerate(topo["layers"]):
            shape = tuple(entry["param_shape"])
            layer = Layer(
                entry["kind"],
                Tensor(np.zeros(shape), requires_grad=True),
                activation=entry["activation"],
                stride=entry.get("stride", 1),
                padding=entry.get("padding", 0),
            )
            family = entry["family"]
            prefix = f"layer{i}"
            if family == "none":
                layer.weight = Tensor(self.params[f"{prefix}.weight"].copy(), requires_grad=True)
            elif family == "mfg":
                layer.posterior = MFGPosterior(
                    Tensor(self.params[f"{prefix}.mu"].copy(), requires_grad=True),
                    Tensor(self.params[f"{prefix}.log_std"].copy(), requires_grad=True),
                )
                layer.weight = None
            elif family == "pse":
                layer.posterior = PSEPosterior(
                    Tensor(self.params[f"{prefix}.shared"].copy(), requires_grad=True),
                    Tensor(self.params[f"{prefix}.left"].copy(), requires_grad=True),
                    Tensor(self.params[f"{prefix}.right"].copy(), requires_grad=True),
                )
                layer.weight = None
            else:
                raise ValueError(f"unknown family {family!r} in checkpoint")
            layers.append(layer)
        return BayesModel(layers, prior, topo["n_classes"], tuple(topo["input_shape"]))

    # -- file format ------------------------------------------------------------

    def save(self, path: str | Path) -> None:
        names = list(self.params)
        header = {
            "format_version": FORMAT_VERSION,
            "topology": self.topology,
            "metadata": self.metadata,
            "blocks": [
                {"name": n, "shape": list(self.params[n].shape), "dtype": "f8"} for n in names
            ],
        }
        write_container(path, CHECKPOINT_MAGIC, header, [self.params[n] for n in names])

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        header, blocks = read_container(path, CHECKPOINT_MAGIC)
        params = {decl["name"]: arr for decl, arr in zip(header["blocks"], blocks)}
        return cls(topology=header["topology"], metadata=header["metadata"], params=params)
