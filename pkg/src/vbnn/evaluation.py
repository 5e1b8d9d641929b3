"""Metrics, uncertainty studies, and report export.

Covers top-1 accuracy, negative log-likelihood, expected calibration error,
average precision for uncertainty-based OOD detection, equal-size rejection
buckets ordered by uncertainty, the accuracy-versus-sample-count curve, a
gradient-variance comparison of the two likelihood estimators, and a tabular
summary of learned posteriors.  Reports are written as CSV plus JSON.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .datasets import DatasetSplit
from .model import BayesModel
from .objectives import mutual_information, nll_loss, posterior_predictive, predictive_entropy
from .serialization import atomic_write_text
from .tensor import Graph, Tensor
from .variational import MFGPosterior, PSEPosterior, init_mfg_from_map, InitSpec, sample_mfg, sample_mfg_exemplar

__all__ = [
    "EvalReport",
    "top1_accuracy",
    "ece",
    "average_precision",
    "bucket_indices",
    "rejection_buckets",
    "ensemble_size_curve",
    "ToyConvSpec",
    "VarianceStudyResult",
    "gradient_variance_study",
    "posterior_stats_export",
    "evaluate_model",
    "write_report",
]


def top1_accuracy(avg_probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of argmax predictions matching labels; ties go to the lowest class."""
    preds = np.argmax(avg_probs, axis=1)
    return float((preds == np.asarray(labels)).mean())


def nll_metric(avg_probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log of the averaged probability assigned to the label."""
    p = avg_probs[np.arange(len(labels)), labels]
    return float(-np.log(np.clip(p, 1e-300, None)).mean())


def ece(avg_probs: np.ndarray, labels: np.ndarray, bins: int = 15) -> float:
    """Expected calibration error over equal-width confidence bins on [0, 1]."""
    if bins < 1:
        raise ValueError("need at least one bin")
    conf = avg_probs.max(axis=1)
    correct = (np.argmax(avg_probs, axis=1) == np.asarray(labels)).astype(np.float64)
    idx = np.clip((conf * bins).astype(int), 0, bins - 1)
    total = len(labels)
    value = 0.0
    for b in range(bins):
        mask = idx == b
        n_b = int(mask.sum())
        if n_b == 0:
            continue
        value += (n_b / total) * abs(correct[mask].mean() - conf[mask].mean())
    return float(value)


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the precision-recall curve, step-interpolated, ties grouped.

    ``labels`` are 1 for the class the score should rank highly (here: OOD).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if set(np.unique(labels)) - {0, 1}:
        raise ValueError("labels must be 0 or 1")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("average precision needs both classes present")
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    tp = np.cumsum(sorted_labels)
    k = np.arange(1, len(labels) + 1)
    # group ties: only thresholds at the last element of each distinct score
    boundary = np.ones(len(labels), dtype=bool)
    boundary[:-1] = sorted_scores[1:] != sorted_scores[:-1]
    precision = tp / k
    recall = tp / n_pos
    ap = 0.0
    prev_recall = 0.0
    for i in np.flatnonzero(boundary):
        ap += (recall[i] - prev_recall) * precision[i]
        prev_recall = recall[i]
    return float(ap)


def bucket_indices(mi: np.ndarray, n_buckets: int = 10) -> list[np.ndarray]:
    """Partition indices into equal buckets of ascending uncertainty.

    The remainder goes to the last bucket; ties keep input order.
    """
    n = len(mi)
    if n < n_buckets:
        raise ValueError(f"need at least {n_buckets} instances, got {n}")
    order = np.argsort(mi, kind="stable")
    base = n // n_buckets
    out = [order[i * base : (i + 1) * base] for i in range(n_buckets - 1)]
    out.append(order[(n_buckets - 1) * base :])
    return out


def rejection_buckets(mi: np.ndarray, avg_probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-bucket accuracy for ten equal buckets of rising uncertainty."""
    buckets = bucket_indices(np.asarray(mi), 10)
    labels = np.asarray(labels)
    return np.array([top1_accuracy(avg_probs[b], labels[b]) for b in buckets])


def ensemble_size_curve(
    model: BayesModel,
    data: DatasetSplit,
    s_max: int,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Accuracy of the prefix-averaged prediction for every sample count.

    One set of ``s_max`` posterior samples is drawn and reused, so the curve
    at S is exactly the accuracy of averaging the first S of them.
    """
    if s_max < 1:
        raise ValueError("need s_max >= 1")
    samples, _ = posterior_predictive(model, data.x, s_max, rng)
    prefix = np.cumsum(samples.probs, axis=0) / np.arange(1, s_max + 1)[:, None, None]
    return np.array([top1_accuracy(prefix[s], data.y) for s in range(s_max)])


# ---------------------------------------------------------------------------
# gradient-variance study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ToyConvSpec:
    """Single-convolution test bed: fixed input, fixed targets, pooled logits."""

    in_channels: int = 4
    image_size: int = 8
    kernel_size: int = 3
    out_channels: int = 4
    log_std: float = -1.0


@dataclass
class VarianceStudyResult:
    variance_mu_standard: float
    variance_log_std_standard: float
    variance_mu_exemplar: float
    variance_log_std_exemplar: float
    ratio: float
    macs_standard: int
    macs_exemplar: int

    def rows(self) -> list[dict]:
        return [
            {"estimator": "standard", "coordinate_group": "mu",
             "variance": self.variance_mu_standard, "macs": self.macs_standard},
            {"estimator": "standard", "coordinate_group": "log_std",
             "variance": self.variance_log_std_standard, "macs": self.macs_standard},
            {"estimator": "exemplar", "coordinate_group": "mu",
             "variance": self.variance_mu_exemplar, "macs": self.macs_exemplar},
            {"estimator": "exemplar", "coordinate_group": "log_std",
             "variance": self.variance_log_std_exemplar, "macs": self.macs_exemplar},
        ]


def gradient_variance_study(
    layer_spec: ToyConvSpec,
    batch_size: int,
    runs: int = 500,
    seed: int = 0,
) -> VarianceStudyResult:
    """Per-coordinate gradient variance of both likelihood estimators.

    A Gaussian posterior is placed on one convolution kernel; input, targets,
    and posterior stay fixed while the weight draws vary across ``runs``
    repetitions.  The reported ratio divides the standard estimator's mean
    coordinate variance by the exemplar one's (NaN when both collapse to
    zero), and the measured multiply-accumulate counts of both paths are
    returned for the cost-parity check.
    """
    if runs < 2:
        raise ValueError("variance needs at least two runs")
    rng = np.random.default_rng(seed)
    spec = layer_spec
    kernel = rng.standard_normal(
        (spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)
    ) * np.sqrt(2.0 / (spec.in_channels * spec.kernel_size**2))
    posterior = init_mfg_from_map(
        Tensor(kernel), InitSpec(spec.log_std, 0.0), rng
    )
    # one fixed input and one fixed target, replicated across the batch: every
    # instance then contributes the same gradient as a function of its weight
    # draw, which is the regime the comparison is about
    one = rng.standard_normal((1, spec.in_channels, spec.image_size, spec.image_size))
    x = np.broadcast_to(one, (batch_size,) + one.shape[1:]).copy()
    targets = np.full(batch_size, int(rng.integers(0, spec.out_channels)))
    pad = spec.kernel_size // 2

    def one_run(estimator: str, run_rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        with Graph() as g:
            if estimator == "standard":
                w = sample_mfg(posterior, run_rng)
                out = T.conv2d(Tensor(x), w, padding=pad)
            else:
                w = sample_mfg_exemplar(posterior, batch_size, run_rng)
                out = T.exemplar_conv2d(Tensor(x), w, padding=pad)
            logits = T.tensor_mean(out, axis=(2, 3))
            loss = nll_loss(logits, targets)
        g.backward(loss)
        g_mu = posterior.mu.grad.ravel().copy()
        g_ls = posterior.log_std.grad.ravel().copy()
        posterior.mu.grad = None
        posterior.log_std.grad = None
        return g_mu, g_ls

    results = {}
    macs = {}
    for estimator in ("standard", "exemplar"):
        grads_mu = np.empty((runs, posterior.mu.size))
        grads_ls = np.empty((runs, posterior.log_std.size))
        T.reset_mac_count()
        for r in range(runs):
            run_rng = np.random.default_rng(seed + 1 + r)
            grads_mu[r], grads_ls[r] = one_run(estimator, run_rng)
        macs[estimator] = T.mac_count()
        # shifting by the first run keeps the variance of bitwise-identical
        # gradient sequences at exactly zero
        grads_mu -= grads_mu[0]
        grads_ls -= grads_ls[0]
        results[estimator] = (grads_mu.var(axis=0, ddof=1), grads_ls.var(axis=0, ddof=1))
    T.reset_mac_count()

    var_mu_std, var_ls_std = results["standard"]
    var_mu_ex, var_ls_ex = results["exemplar"]
    mean_std = float(np.concatenate([var_mu_std, var_ls_std]).mean())
    mean_ex = float(np.concatenate([var_mu_ex, var_ls_ex]).mean())
    ratio = mean_std / mean_ex if mean_ex > 0 else float("nan")
    return VarianceStudyResult(
        variance_mu_standard=float(var_mu_std.mean()),
        variance_log_std_standard=float(var_ls_std.mean()),
        variance_mu_exemplar=float(var_mu_ex.mean()),
        variance_log_std_exemplar=float(var_ls_ex.mean()),
        ratio=ratio,
        macs_standard=macs["standard"],
        macs_exemplar=macs["exemplar"],
    )


# ---------------------------------------------------------------------------
# posterior statistics export
# ---------------------------------------------------------------------------


def _stats(values: np.ndarray) -> dict:
    return {
        "mean": float(values.mean()),
        "std": float(values.std()),
        "min": float(values.min()),
        "max": float(values.max()),
    }


def posterior_stats_export(model: BayesModel) -> list[dict]:
    """Per-layer summary rows: layer, param, mean, std, min, max."""
    rows = []
    for i, layer in enumerate(model.layers):
        name = f"layer{i}:{layer.kind}"
        if isinstance(layer.posterior, MFGPosterior):
            rows.append({"layer": name, "param": "mu", **_stats(layer.posterior.mu.data)})
            rows.append({"layer": name, "param": "std", **_stats(layer.posterior.std())})
        elif isinstance(layer.posterior, PSEPosterior):
            rows.append({"layer": name, "param": "shared", **_stats(layer.posterior.shared.data)})
            rows.append(
                {"layer": name, "param": "perturbation",
                 **_stats(np.abs(layer.posterior.perturbations()))}
            )
        else:
            rows.append({"layer": name, "param": "weight", **_stats(layer.weight.data)})
    return rows


STATS_COLUMNS = ["layer", "param", "mean", "std", "min", "max"]


# ---------------------------------------------------------------------------
# full evaluation report
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """One run's metrics, detection quality, buckets, and uncertainty histograms."""

    top1: float
    nll: float
    ece: float
    ap_per_ood_source: dict[str, float] = field(default_factory=dict)
    bucket_accuracies: list[float] = field(default_factory=list)
    histogram_edges: list[float] = field(default_factory=list)
    histogram_normal: list[int] = field(default_factory=list)
    histogram_ood: list[int] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))

    def metrics_row(self) -> dict:
        row = {"top1": self.top1, "nll": self.nll, "ece": self.ece}
        for source, ap in sorted(self.ap_per_ood_source.items()):
            row[f"ap_{source}"] = ap
        for i, acc in enumerate(self.bucket_accuracies):
            row[f"bucket{i}"] = acc
        return row


def evaluate_model(
    model: BayesModel,
    test: DatasetSplit,
    ood_sets: dict[str, np.ndarray] | None = None,
    n_samples: int = 20,
    rng: Optional[np.random.Generator] = None,
    ece_bins: int = 15,
    hist_bins: int = 40,
) -> EvalReport:
    """Posterior-predictive evaluation with MI-based OOD detection."""
    rng = rng if rng is not None else np.random.default_rng(0)
    samples, avg = posterior_predictive(model, test.x, n_samples, rng)
    mi_normal = mutual_information(samples)
    report = EvalReport(
        top1=top1_accuracy(avg, test.y),
        nll=nll_metric(avg, test.y),
        ece=ece(avg, test.y, bins=ece_bins),
        bucket_accuracies=list(rejection_buckets(mi_normal, avg, test.y)),
    )
    edges = np.linspace(0.0, np.log(test.n_classes), hist_bins + 1)
    report.histogram_edges = [float(e) for e in edges]
    report.histogram_normal = [int(c) for c in np.histogram(mi_normal, bins=edges)[0]]
    all_ood_mi = []
    if ood_sets:
        for source, x_ood in ood_sets.items():
            ood_samples, _ = posterior_predictive(model, x_ood, n_samples, rng)
            mi_ood = mutual_information(ood_samples)
            all_ood_mi.append(mi_ood)
            scores = np.concatenate([mi_normal, mi_ood])
            labels = np.concatenate([np.zeros(len(mi_normal)), np.ones(len(mi_ood))])
            report.ap_per_ood_source[source] = average_precision(scores, labels)
        combined = np.concatenate(all_ood_mi)
        report.histogram_ood = [int(c) for c in np.histogram(combined, bins=edges)[0]]
    return report


def _csv_text(columns: Sequence[str], rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns))
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def write_report(out_dir: str | Path, report: EvalReport) -> None:
    """Persist report.json, metrics.csv, and the MI histogram CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "report.json", report.to_json())
    row = report.metrics_row()
    atomic_write_text(out_dir / "metrics.csv", _csv_text(list(row), [row]))
    hist_rows = []
    edges = report.histogram_edges
    ood = report.histogram_ood or [0] * max(len(edges) - 1, 0)
    for i in range(len(edges) - 1):
        hist_rows.append(
            {
                "bin_lo": edges[i],
                "bin_hi": edges[i + 1],
                "count_normal": report.histogram_normal[i],
                "count_ood": ood[i],
            }
        )
    atomic_write_text(
        out_dir / "mi_histogram.csv",
        _csv_text(["bin_lo", "bin_hi", "count_normal", "count_ood"], hist_rows),
    )
