"""JSON run configuration: schema, documented defaults, round-trip IO.

A config file has flat sections; every key has a default, so the empty
object is a complete configuration.  Unknown keys are rejected by name.

Defaults (per section):

* ``data``:       two-moons, 400 train / 400 test points, seed 7
* ``pretrain``:   30 epochs, batch 32, lr 0.05, momentum 0.9, decay ("lambda") 2e-4
* ``finetune``:   mean-field family, 12 epochs, lr 0.01, ensemble settings
                  candidates=20 rank=1, start checkpoint "map.ckpt"
* ``regularizer``: disabled; when enabled gamma=0.75, alpha=3, s_train=2
* ``ood``:        uniform_noise with delta_m=0.031
* ``eval``:       20 MC samples, 15 calibration bins, 40 histogram bins
* ``variance_study``: the 8x8, 4-channel, 3x3-kernel single-conv test bed,
                  batch 32, 500 runs
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .datasets import OODSpec
from .objectives import RegularizerConfig
from .serialization import atomic_write_text
from .training import TrainConfig

__all__ = ["ConfigError", "RunConfig", "DataConfig", "EvalConfig", "load_config", "save_config", "DEFAULT_CONFIG"]

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Bad config file: parse failure, unknown key, wrong type, bad version."""


DEFAULT_CONFIG: dict[str, Any] = {
    "config_version": CONFIG_VERSION,
    "data": {
        "generator": "two_moons",
        "n_train": 400,
        "n_test": 400,
        "seed": 7,
        "noise_std": 0.1,     # two_moons
        "spread": 0.5,        # blobs
        "n_classes": 4,       # blobs / pattern_images
        "size": 12,           # pattern_images
    },
    "pretrain": {
        "epochs": 30,
        "batch_size": 32,
        "lr": 0.05,
        "momentum": 0.9,
        "lambda": 2e-4,
        "seed": 0,
        "model": {"kind": "mlp", "hidden": [32]},
    },
    "finetune": {
        "epochs": 12,
        "batch_size": 32,
        "lr": 0.01,
        "momentum": 0.9,
        "lambda": 2e-4,
        "seed": 0,
        "variational_family": "mfg",
        "pse_candidates": 20,
        "pse_rank": 1,
        "psi_init_mean": -5.0,
        "psi_init_std": 0.01,
        "from_scratch": False,
        "start": "map.ckpt",
    },
    "regularizer": {
        "enabled": False,
        "gamma": 0.75,
        "alpha": 3.0,
        "s_train": 2,
    },
    "ood": {
        "kind": "uniform_noise",
        "delta_m": 0.031,
        "seed": 99,
    },
    "eval": {
        "mc_samples": 20,
        "ece_bins": 15,
        "hist_bins": 40,
        "seed": 1,
        "checkpoint": "bayes.ckpt",
        "s_max": 20,
    },
    "variance_study": {
        "in_channels": 4,
        "image_size": 8,
        "kernel_size": 3,
        "out_channels": 4,
        "batch_size": 32,
        "runs": 500,
        "seed": 0,
    },
}


@dataclass(frozen=True)
class DataConfig:
    generator: str = "two_moons"
    n_train: int = 400
    n_test: int = 400
    seed: int = 7
    noise_std: float = 0.1
    spread: float = 0.5
    n_classes: int = 4
    size: int = 12


@dataclass(frozen=True)
class EvalConfig:
    mc_samples: int = 20
    ece_bins: int = 15
    hist_bins: int = 40
    seed: int = 1
    checkpoint: str = "bayes.ckpt"
    s_max: int = 20


@dataclass(frozen=True)
class RunConfig:
    """Typed view over a fully resolved config document."""

    data: DataConfig
    pretrain: TrainConfig
    finetune: TrainConfig
    eval: EvalConfig
    finetune_from_scratch: bool
    finetune_start: str
    variance_study: dict
    raw: dict = field(compare=False, repr=False, default_factory=dict)


def _merge_defaults(raw: dict) -> dict:
    merged: dict[str, Any] = {}
    for section, defaults in DEFAULT_CONFIG.items():
        if not isinstance(defaults, dict):
            merged[section] = raw.get(section, defaults)
            continue
        got = raw.get(section, {})
        if not isinstance(got, dict):
            raise ConfigError(f"section {section!r} must be an object")
        for key in got:
            if key not in defaults:
                raise ConfigError(f"unknown config key: {section}.{key}")
        merged[section] = {**defaults, **got}
    for key in raw:
        if key not in DEFAULT_CONFIG:
            raise ConfigError(f"unknown config key: {key}")
    return merged


def _train_config(section: dict, family_section: bool, regularizer: Optional[RegularizerConfig],
                  ood: Optional[OODSpec], model: dict) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=int(section["epochs"]),
            batch_size=int(section["batch_size"]),
            lr=float(section["lr"]),
            momentum=float(section["momentum"]),
            decay=float(section["lambda"]),
            seed=int(section["seed"]),
            variational_family=section["variational_family"] if family_section else "none",
            pse_candidates=int(section.get("pse_candidates", 20)),
            pse_rank=int(section.get("pse_rank", 1)),
            psi_init_mean=float(section.get("psi_init_mean", -5.0)),
            psi_init_std=float(section.get("psi_init_std", 0.01)),
            regularizer=regularizer,
            ood=ood,
            model=model,
        )
    except (ValueError, TypeError) as err:
        raise ConfigError(str(err)) from err


def resolve(raw: dict) -> RunConfig:
    """Validate a parsed config document and fill in all defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    version = raw.get("config_version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config_version {version} unsupported (expected {CONFIG_VERSION})")
    merged = _merge_defaults(raw)

    reg_section = merged["regularizer"]
    regularizer = None
    if reg_section["enabled"]:
        try:
            regularizer = RegularizerConfig(
                gamma=float(reg_section["gamma"]),
                alpha=float(reg_section["alpha"]),
                s_train=int(reg_section["s_train"]),
            )
        except ValueError as err:
            raise ConfigError(str(err)) from err
    try:
        ood = OODSpec(
            kind=merged["ood"]["kind"],
            delta_m=float(merged["ood"]["delta_m"]),
            seed=int(merged["ood"]["seed"]),
        )
    except ValueError as err:
        raise ConfigError(str(err)) from err

    model = merged["pretrain"]["model"]
    if not isinstance(model, dict):
        raise ConfigError("pretrain.model must be an object")
    for key in model:
        if key not in ("kind", "hidden", "channels", "kernel"):
            raise ConfigError(f"unknown config key: pretrain.model.{key}")
    if merged["data"]["generator"] not in ("two_moons", "blobs", "pattern_images"):
        raise ConfigError(f"unknown data.generator: {merged['data']['generator']!r}")
    data = DataConfig(**merged["data"])
    pretrain = _train_config(merged["pretrain"], False, None, None, model)
    finetune = _train_config(merged["finetune"], True, regularizer, ood, model)
    eval_cfg = EvalConfig(**merged["eval"])
    return RunConfig(
        data=data,
        pretrain=pretrain,
        finetune=finetune,
        eval=eval_cfg,
        finetune_from_scratch=bool(merged["finetune"]["from_scratch"]),
        finetune_start=str(merged["finetune"]["start"]),
        variance_study=dict(merged["variance_study"]),
        raw=merged,
    )


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    return resolve(raw)


def save_config(path: str | Path, cfg: RunConfig) -> None:
    atomic_write_text(Path(path), json.dumps(cfg.raw, indent=2, sort_keys=True))
