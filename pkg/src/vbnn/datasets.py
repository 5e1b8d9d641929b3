"""Synthetic datasets and out-of-distribution sample generation.

Every generator is a pure function of its arguments: the same spec and seed
always reproduce the same split, bit for bit.  Splits record their generating
spec so files and reruns stay traceable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "DatasetSplit",
    "OODSpec",
    "make_two_moons",
    "make_blobs",
    "make_pattern_images",
    "gen_ood",
]

OOD_KINDS = ("uniform_noise", "out_of_support", "noise_images")


@dataclass
class DatasetSplit:
    """Inputs, integer labels, and the provenance needed to regenerate them."""

    x: np.ndarray
    y: np.ndarray
    name: str
    spec: dict
    n_classes: int
    data_range: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("inputs and labels disagree in length")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.x.shape[1:]


@dataclass(frozen=True)
class OODSpec:
    """How to produce out-of-distribution inputs from a base split."""

    kind: str = "uniform_noise"
    delta_m: float = 0.031
    seed: int = 0

    def __post_init__(self):
        if self.kind not in OOD_KINDS:
            raise ValueError(f"unknown OOD kind {self.kind!r}; expected one of {OOD_KINDS}")
        if self.kind == "uniform_noise" and self.delta_m <= 0:
            raise ValueError("uniform_noise needs delta_m > 0")


def _balanced_labels(n: int, k: int) -> np.ndarray:
    counts = [n // k + (1 if i < n % k else 0) for i in range(k)]
    return np.repeat(np.arange(k), counts)


def make_two_moons(n: int, noise_std: float = 0.1, seed: int = 0) -> DatasetSplit:
    """Two interleaving half circles; class sizes balanced within one."""
    if n < 2:
        raise ValueError("need at least one point per class")
    rng = np.random.default_rng(seed)
    n0 = n - n // 2
    n1 = n // 2
    t0 = rng.uniform(0.0, np.pi, size=n0)
    t1 = rng.uniform(0.0, np.pi, size=n1)
    upper = np.stack([np.cos(t0), np.sin(t0)], axis=1)
    lower = np.stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)], axis=1)
    x = np.concatenate([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise_std > 0:
        x = x + noise_std * rng.standard_normal(x.shape)
    perm = rng.permutation(n)
    return DatasetSplit(
        x=x[perm],
        y=y[perm],
        name="two_moons",
        spec={"generator": "two_moons", "n": n, "noise_std": noise_std, "seed": seed},
        n_classes=2,
    )


def make_blobs(n: int, n_classes: int = 3, spread: float = 0.5, seed: int = 0) -> DatasetSplit:
    """Gaussian blobs on a circle of radius 3; small spread keeps them separable."""
    if n_classes < 2 or n < n_classes:
        raise ValueError("need n >= n_classes >= 2")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers = 3.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    y = _balanced_labels(n, n_classes)
    x = centers[y] + spread * rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    return DatasetSplit(
        x=x[perm],
        y=y[perm].astype(np.int64),
        name="blobs",
        spec={"generator": "blobs", "n": n, "n_classes": n_classes, "spread": spread, "seed": seed},
        n_classes=n_classes,
    )


def _grating(size: int, angle: float, phase: float, cycles: float) -> np.ndarray:
    coords = (np.arange(size) + 0.5) / size
    u, v = np.meshgrid(coords, coords, indexing="ij")
    t = u * np.cos(angle) + v * np.sin(angle)
    return np.sin(2.0 * np.pi * cycles * t + phase)


def make_pattern_images(n: int, n_classes: int = 4, size: int = 12, seed: int = 0) -> DatasetSplit:
    """Procedural texture classes as single-channel images in [0, 1].

    Even classes are oriented bar gratings with orientations spread over a
    half turn; odd classes are checker-like crossed gratings spread over a
    quarter turn (a crossed grating repeats every 90 degrees, so this keeps
    every class pair distinguishable).  Phase, orientation jitter, and pixel
    noise vary per sample.
    """
    if n_classes < 2 or n < n_classes:
        raise ValueError("need n >= n_classes >= 2")
    if size < 4:
        raise ValueError("images smaller than 4x4 carry no texture")
    rng = np.random.default_rng(seed)
    y = _balanced_labels(n, n_classes)
    x = np.empty((n, 1, size, size))
    # few cycles and little pixel noise keep the clean textures smooth at
    # kernel scale, so broadband perturbations are detectable in principle
    cycles = 1.5
    n_bars = (n_classes + 1) // 2
    n_checkers = n_classes // 2
    for i in range(n):
        k = y[i]
        if k % 2 == 0:
            angle = np.pi * (k // 2) / n_bars + rng.normal(0.0, 0.04)
        else:
            angle = (np.pi / 2) * (k // 2) / n_checkers + rng.normal(0.0, 0.04)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        img = _grating(size, angle, phase, cycles)
        if k % 2 == 1:
            img = img * _grating(size, angle + np.pi / 2, rng.uniform(0.0, 2.0 * np.pi), cycles)
        img = 0.5 + 0.45 * img + rng.normal(0.0, 0.005, size=(size, size))
        x[i, 0] = np.clip(img, 0.0, 1.0)
    perm = rng.permutation(n)
    return DatasetSplit(
        x=x[perm],
        y=y[perm].astype(np.int64),
        name="pattern_images",
        spec={
            "generator": "pattern_images",
            "n": n,
            "n_classes": n_classes,
            "size": size,
            "seed": seed,
        },
        n_classes=n_classes,
        data_range=(0.0, 1.0),
    )


GENERATORS = {
    "two_moons": make_two_moons,
    "blobs": make_blobs,
    "pattern_images": make_pattern_images,
}


def gen_ood(base: DatasetSplit, spec: OODSpec) -> np.ndarray:
    """Out-of-distribution inputs derived from a base split.

    * ``uniform_noise``: inputs plus U(-delta_m, delta_m) noise, clipped to the
      split's declared data range when it has one;
    * ``out_of_support``: coordinate data rotated a quarter turn about its
      centroid, stretched, and shifted beyond the training support;
    * ``noise_images``: pure uniform pixels with the base shape and range.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform_noise":
        noise = rng.uniform(-spec.delta_m, spec.delta_m, size=base.x.shape)
        out = base.x + noise
        if base.data_range is not None:
            out = np.clip(out, base.data_range[0], base.data_range[1])
        return out
    if spec.kind == "out_of_support":
        if base.x.ndim != 2:
            raise ValueError("out_of_support applies to coordinate data; use noise_images for images")
        center = base.x.mean(axis=0)
        centered = base.x - center
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        span = base.x.max(axis=0) - base.x.min(axis=0)
        return center + 2.5 * centered @ rot.T + 1.5 * span
    # noise_images
    lo, hi = base.data_range if base.data_range is not None else (0.0, 1.0)
    return rng.uniform(lo, hi, size=base.x.shape)
