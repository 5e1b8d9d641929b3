"""Dataset generators, OOD sources, container files, config schema, CLI."""

import json
import csv

import numpy as np
import pytest

from vbnn.config import DEFAULT_CONFIG, ConfigError, load_config, resolve, save_config
from vbnn.datasets import (
    DatasetSplit,
    OODSpec,
    gen_ood,
    make_blobs,
    make_pattern_images,
    make_two_moons,
)
from vbnn.serialization import (
    CHECKPOINT_MAGIC,
    ContainerError,
    load_dataset,
    read_container,
    save_dataset,
)
from vbnn.cli import main


class TestGenerators:
    def test_noiseless_moons_lie_on_half_circles(self):
        split = make_two_moons(200, noise_std=0.0, seed=0)
        x, y = split.x, split.y
        upper = x[y == 0]
        lower = x[y == 1]
        r_up = np.hypot(upper[:, 0], upper[:, 1])
        np.testing.assert_allclose(r_up, 1.0, atol=1e-12)
        assert (upper[:, 1] >= -1e-12).all()
        r_lo = np.hypot(lower[:, 0] - 1.0, lower[:, 1] - 0.5)
        np.testing.assert_allclose(r_lo, 1.0, atol=1e-12)
        assert (lower[:, 1] <= 0.5 + 1e-12).all()

    def test_balanced_within_one(self):
        for n in (99, 100, 101):
            split = make_two_moons(n, seed=1)
            counts = np.bincount(split.y)
            assert abs(counts[0] - counts[1]) <= 1
        split = make_blobs(100, n_classes=3, seed=1)
        counts = np.bincount(split.y)
        assert counts.max() - counts.min() <= 1

    def test_same_seed_bitwise_identical(self):
        for make in (
            lambda s: make_two_moons(64, 0.15, seed=s),
            lambda s: make_blobs(64, 3, 0.4, seed=s),
            lambda s: make_pattern_images(32, 4, 10, seed=s),
        ):
            a, b = make(7), make(7)
            assert (a.x == b.x).all() and (a.y == b.y).all()

    def test_small_spread_blobs_linearly_separable(self):
        split = make_blobs(300, n_classes=3, spread=0.1, seed=2)
        angles = 2.0 * np.pi * np.arange(3) / 3
        centers = 3.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        separation = np.linalg.norm(centers[0] - centers[1])
        dists = np.linalg.norm(split.x - centers[split.y], axis=1)
        # every point closer to its own center than half the center gap
        assert dists.max() < separation / 2

    def test_pattern_images_shape_and_range(self):
        split = make_pattern_images(40, n_classes=4, size=12, seed=3)
        assert split.x.shape == (40, 1, 12, 12)
        assert split.data_range == (0.0, 1.0)
        assert split.x.min() >= 0.0 and split.x.max() <= 1.0

    def test_invalid_sizes_rejected(self):
        with pytest.raises(ValueError):
            make_blobs(2, n_classes=3)
        with pytest.raises(ValueError):
            make_pattern_images(10, n_classes=1)


class TestOOD:
    def test_default_budget_matches_recipe(self):
        assert OODSpec().delta_m == 0.031

    def test_uniform_noise_stays_within_budget_and_range(self):
        base = make_pattern_images(200, 4, 10, seed=4)
        spec = OODSpec("uniform_noise", delta_m=0.05, seed=5)
        out = gen_ood(base, spec)
        assert np.abs(out - base.x).max() <= 0.05
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_uniform_noise_budget_bound_many_draws(self):
        base = DatasetSplit(np.zeros((100_000, 1)), np.zeros(100_000, dtype=int), "z", {}, 1)
        out = gen_ood(base, OODSpec("uniform_noise", delta_m=0.031, seed=6))
        assert np.abs(out).max() <= 0.031

    def test_tiny_budget_approaches_identity(self):
        base = make_two_moons(50, seed=7)
        out = gen_ood(base, OODSpec("uniform_noise", delta_m=1e-12, seed=8))
        np.testing.assert_allclose(out, base.x, atol=1e-12)

    def test_zero_budget_rejected(self):
        with pytest.raises(ValueError):
            OODSpec("uniform_noise", delta_m=0.0)

    def test_out_of_support_leaves_training_region(self):
        base = make_two_moons(100, seed=9)
        out = gen_ood(base, OODSpec("out_of_support", seed=10))
        lo, hi = base.x.min(axis=0), base.x.max(axis=0)
        inside = (out >= lo).all(axis=1) & (out <= hi).all(axis=1)
        assert not inside.any()

    def test_noise_images_pure_uniform(self):
        base = make_pattern_images(50, 4, 8, seed=11)
        out = gen_ood(base, OODSpec("noise_images", seed=12))
        assert out.shape == base.x.shape
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            OODSpec("pgd")


class TestContainers:
    def test_dataset_roundtrip_bitwise(self, tmp_path):
        split = make_pattern_images(30, 4, 8, seed=13)
        path = tmp_path / "d.bin"
        save_dataset(path, split)
        loaded = load_dataset(path)
        assert (loaded.x == split.x).all()
        assert (loaded.y == split.y).all()
        assert loaded.spec == split.spec
        assert loaded.data_range == split.data_range

    def test_magic_enforced(self, tmp_path):
        split = make_two_moons(10, seed=14)
        path = tmp_path / "d.bin"
        save_dataset(path, split)
        with pytest.raises(ContainerError):
            read_container(path, CHECKPOINT_MAGIC)

    def test_truncation_detected(self, tmp_path):
        split = make_two_moons(10, seed=15)
        path = tmp_path / "d.bin"
        save_dataset(path, split)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(ContainerError):
            load_dataset(path)


class TestConfig:
    def test_empty_config_gives_documented_defaults(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{}")
        cfg = load_config(path)
        assert cfg.data.generator == "two_moons"
        assert cfg.eval.mc_samples == 20
        assert cfg.finetune.pse_candidates == 20
        assert cfg.finetune.pse_rank == 1
        assert cfg.pretrain.decay == 2e-4
        assert cfg.finetune.variational_family == "mfg"
        reg = DEFAULT_CONFIG["regularizer"]
        assert (reg["gamma"], reg["alpha"], reg["s_train"]) == (0.75, 3.0, 2)

    def test_unknown_key_named_in_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"pretrain": {"lr_schdule": "cosine"}}))
        with pytest.raises(ConfigError, match="lr_schdule"):
            load_config(path)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="optimizer"):
            resolve({"optimizer": {}})

    def test_version_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="config_version"):
            resolve({"config_version": 99})

    def test_parse_error(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_roundtrip_equality(self, tmp_path):
        src = tmp_path / "a.json"
        src.write_text(json.dumps({"finetune": {"variational_family": "pse", "epochs": 3}}))
        cfg = load_config(src)
        dst = tmp_path / "b.json"
        save_config(dst, cfg)
        assert load_config(dst) == cfg

    def test_bad_value_surfaces_as_config_error(self):
        with pytest.raises(ConfigError):
            resolve({"pretrain": {"momentum": 1.5}})
        with pytest.raises(ConfigError):
            resolve({"regularizer": {"enabled": True, "s_train": 1}})
        with pytest.raises(ConfigError):
            resolve({"data": {"generator": "cifar10"}})


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "fast.json"
    path.write_text(json.dumps({
        "data": {"n_train": 96, "n_test": 96},
        "pretrain": {"epochs": 6, "model": {"kind": "mlp", "hidden": [8]}},
        "finetune": {"epochs": 2},
        "eval": {"mc_samples": 4, "s_max": 4},
        "variance_study": {"runs": 8, "batch_size": 4},
    }))
    return path


class TestCLI:
    def test_full_pipeline(self, fast_config, tmp_path):
        out = tmp_path / "run"
        assert main(["pretrain", "--config", str(fast_config), "--out", str(out)]) == 0
        assert (out / "map.ckpt").exists()
        assert (out / "metrics.csv").exists()
        assert main(["finetune", "--config", str(fast_config), "--out", str(out)]) == 0
        assert (out / "bayes.ckpt").exists()
        assert main(["eval", "--config", str(fast_config), "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report) >= {"top1", "nll", "ece", "ap_per_ood_source", "bucket_accuracies"}
        assert main(["ood-detect", "--config", str(fast_config), "--out", str(out)]) == 0
        with open(out / "mi_histogram.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["bin_lo", "bin_hi", "count_normal", "count_ood"]

    def test_variance_study_schema(self, fast_config, tmp_path):
        out = tmp_path / "vs"
        assert main(["variance-study", "--config", str(fast_config), "--out", str(out)]) == 0
        with open(out / "variance_study.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["estimator", "coordinate_group", "variance", "macs"]
        assert {r["estimator"] for r in rows} == {"standard", "exemplar"}
        macs = {r["macs"] for r in rows}
        assert len(macs) == 1

    def test_ensemble_curve_and_export(self, fast_config, tmp_path):
        out = tmp_path / "run"
        main(["pretrain", "--config", str(fast_config), "--out", str(out)])
        main(["finetune", "--config", str(fast_config), "--out", str(out)])
        assert main(["ensemble-curve", "--config", str(fast_config), "--out", str(out)]) == 0
        with open(out / "ensemble_curve.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["s"] for r in rows] == ["1", "2", "3", "4"]
        assert main(["export-posterior", "--config", str(fast_config), "--out", str(out)]) == 0
        with open(out / "posterior_stats.csv") as fh:
            stats = list(csv.DictReader(fh))
        assert list(stats[0]) == ["layer", "param", "mean", "std", "min", "max"]

    def test_missing_config_exits_2(self, tmp_path, capsys):
        assert main(["eval", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
        assert "not found" in capsys.readouterr().err

    def test_bad_key_exits_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"pretrain": {"lr_schdule": 1}}))
        assert main(["pretrain", "--config", str(path), "--out", str(tmp_path)]) == 2

    def test_numerical_failure_exits_3(self, tmp_path):
        path = tmp_path / "explode.json"
        path.write_text(json.dumps({
            "data": {"n_train": 64, "n_test": 64},
            "pretrain": {"epochs": 1, "lr": 1e155, "model": {"kind": "mlp", "hidden": [8]}},
        }))
        assert main(["pretrain", "--config", str(path), "--out", str(tmp_path)]) == 3

    def test_finetune_before_pretrain_exits_2(self, fast_config, tmp_path):
        out = tmp_path / "empty"
        assert main(["finetune", "--config", str(fast_config), "--out", str(out)]) == 2

    def test_seed_override_changes_checkpoint(self, fast_config, tmp_path):
        out_a, out_b, out_c = (tmp_path / n for n in ("a", "b", "c"))
        main(["pretrain", "--config", str(fast_config), "--out", str(out_a), "--seed", "3"])
        main(["pretrain", "--config", str(fast_config), "--out", str(out_b), "--seed", "3"])
        main(["pretrain", "--config", str(fast_config), "--out", str(out_c), "--seed", "4"])
        a = (out_a / "map.ckpt").read_bytes()
        assert a == (out_b / "map.ckpt").read_bytes()
        assert a != (out_c / "map.ckpt").read_bytes()
