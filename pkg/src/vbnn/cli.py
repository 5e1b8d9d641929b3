"""Command-line pipeline: pretrain, finetune, eval, and the study commands.

Every subcommand reads a JSON config (``--config``), accepts ``--seed`` to
override the phase seed and ``--out`` for the output directory, and exits
with 0 on success, 2 on a configuration problem, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .config import ConfigError, RunConfig, load_config
from .datasets import DatasetSplit, gen_ood, make_blobs, make_pattern_images, make_two_moons
from .evaluation import (
    STATS_COLUMNS,
    ToyConvSpec,
    ensemble_size_curve,
    evaluate_model,
    gradient_variance_study,
    posterior_stats_export,
    write_report,
    _csv_text,
)
from .serialization import atomic_write_text
from .training import NumericalError, bayes_finetune, init_checkpoint, pretrain_map

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

MAP_CHECKPOINT = "map.ckpt"
BAYES_CHECKPOINT = "bayes.ckpt"


def _make_split(cfg: RunConfig, n: int, seed: int, name: str) -> DatasetSplit:
    d = cfg.data
    if d.generator == "two_moons":
        split = make_two_moons(n, noise_std=d.noise_std, seed=seed)
    elif d.generator == "blobs":
        split = make_blobs(n, n_classes=d.n_classes, spread=d.spread, seed=seed)
    else:
        split = make_pattern_images(n, n_classes=d.n_classes, size=d.size, seed=seed)
    split.name = name
    return split


def _train_split(cfg: RunConfig) -> DatasetSplit:
    return _make_split(cfg, cfg.data.n_train, cfg.data.seed, "train")


def _test_split(cfg: RunConfig) -> DatasetSplit:
    return _make_split(cfg, cfg.data.n_test, cfg.data.seed + 1, "test")


def _eval_and_write(model, cfg: RunConfig, out_dir: Path) -> None:
    test = _test_split(cfg)
    ood_sets = {}
    finetune_ood = cfg.finetune.ood
    if finetune_ood is not None:
        ood_sets[finetune_ood.kind] = gen_ood(test, finetune_ood)
    report = evaluate_model(
        model,
        test,
        ood_sets=ood_sets,
        n_samples=cfg.eval.mc_samples,
        rng=np.random.default_rng(cfg.eval.seed),
        ece_bins=cfg.eval.ece_bins,
        hist_bins=cfg.eval.hist_bins,
    )
    write_report(out_dir, report)


def _cmd_pretrain(cfg: RunConfig, out_dir: Path) -> int:
    ckpt = pretrain_map(cfg.pretrain, _train_split(cfg))
    ckpt.save(out_dir / MAP_CHECKPOINT)
    _eval_and_write(ckpt.to_model(), cfg, out_dir)
    return EXIT_OK


def _resolve_start(cfg: RunConfig, out_dir: Path) -> Path:
    start = Path(cfg.finetune_start)
    return start if start.is_absolute() else out_dir / start


def _cmd_finetune(cfg: RunConfig, out_dir: Path) -> int:
    train = _train_split(cfg)
    if cfg.finetune_from_scratch:
        start = init_checkpoint(
            dataclasses.replace(cfg.finetune, variational_family="none"), train
        )
    else:
        start_path = _resolve_start(cfg, out_dir)
        if not start_path.exists():
            raise ConfigError(f"start checkpoint not found: {start_path} (run pretrain first)")
        start = Checkpoint.load(start_path)
    ckpt = bayes_finetune(start, cfg.finetune, train)
    ckpt.save(out_dir / BAYES_CHECKPOINT)
    _eval_and_write(ckpt.to_model(), cfg, out_dir)
    return EXIT_OK


def _load_eval_checkpoint(cfg: RunConfig, out_dir: Path) -> Checkpoint:
    path = Path(cfg.eval.checkpoint)
    if not path.is_absolute():
        path = out_dir / path
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return Checkpoint.load(path)


def _cmd_eval(cfg: RunConfig, out_dir: Path) -> int:
    ckpt = _load_eval_checkpoint(cfg, out_dir)
    _eval_and_write(ckpt.to_model(), cfg, out_dir)
    return EXIT_OK


def _cmd_ood_detect(cfg: RunConfig, out_dir: Path) -> int:
    # eval with the OOD machinery is the detection pipeline; kept as its own
    # command so detection runs do not require relabeling configs
    return _cmd_eval(cfg, out_dir)


def _cmd_variance_study(cfg: RunConfig, out_dir: Path) -> int:
    vs = cfg.variance_study
    spec = ToyConvSpec(
        in_channels=int(vs["in_channels"]),
        image_size=int(vs["image_size"]),
        kernel_size=int(vs["kernel_size"]),
        out_channels=int(vs["out_channels"]),
    )
    result = gradient_variance_study(
        spec, batch_size=int(vs["batch_size"]), runs=int(vs["runs"]), seed=int(vs["seed"])
    )
    atomic_write_text(
        out_dir / "variance_study.csv",
        _csv_text(["estimator", "coordinate_group", "variance", "macs"], result.rows()),
    )
    return EXIT_OK


def _cmd_ensemble_curve(cfg: RunConfig, out_dir: Path) -> int:
    ckpt = _load_eval_checkpoint(cfg, out_dir)
    curve = ensemble_size_curve(
        ckpt.to_model(), _test_split(cfg), cfg.eval.s_max,
        rng=np.random.default_rng(cfg.eval.seed),
    )
    rows = [{"s": s + 1, "accuracy": float(a)} for s, a in enumerate(curve)]
    atomic_write_text(out_dir / "ensemble_curve.csv", _csv_text(["s", "accuracy"], rows))
    return EXIT_OK


def _cmd_export_posterior(cfg: RunConfig, out_dir: Path) -> int:
    ckpt = _load_eval_checkpoint(cfg, out_dir)
    rows = posterior_stats_export(ckpt.to_model())
    atomic_write_text(out_dir / "posterior_stats.csv", _csv_text(STATS_COLUMNS, rows))
    return EXIT_OK


_COMMANDS = {
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "eval": _cmd_eval,
    "ood-detect": _cmd_ood_detect,
    "variance-study": _cmd_variance_study,
    "ensemble-curve": _cmd_ensemble_curve,
    "export-posterior": _cmd_export_posterior,
}


def _apply_seed_override(cfg: RunConfig, command: str, seed: int) -> RunConfig:
    if command == "pretrain":
        return dataclasses.replace(cfg, pretrain=dataclasses.replace(cfg.pretrain, seed=seed))
    if command == "finetune":
        return dataclasses.replace(cfg, finetune=dataclasses.replace(cfg.finetune, seed=seed))
    if command == "variance-study":
        vs = dict(cfg.variance_study)
        vs["seed"] = seed
        return dataclasses.replace(cfg, variance_study=vs)
    return dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, seed=seed))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vbnn",
        description="Variational Bayesian neural networks on synthetic tasks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override the phase seed")
        p.add_argument("--out", default="run", help="output directory (default: run)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = _apply_seed_override(cfg, args.command, args.seed)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
