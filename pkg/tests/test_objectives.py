"""Likelihood estimators, posterior predictive, uncertainty, margin loss."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbnn.model import build_mlp
from vbnn.objectives import (
    PredictionSamples,
    RegularizerConfig,
    combined_objective,
    ell_exemplar,
    ell_standard,
    margin_uncertainty_loss,
    mutual_information,
    nll_loss,
    posterior_predictive,
    predictive_entropy,
)
from vbnn.tensor import Graph, Tensor
from vbnn.variational import IsotropicPrior


def tiny_model(seed=0, family=None, hidden=(6,), d_in=2, k=2, psi=-5.0, **kw):
    rng = np.random.default_rng(seed)
    prior = IsotropicPrior.from_decay(2e-4, 100)
    model = build_mlp(d_in, list(hidden), k, prior, rng)
    if family:
        from vbnn.variational import InitSpec

        model.make_variational(family, rng, psi_init=InitSpec(psi, 0.01), **kw)
    return model


class TestNLL:
    def test_uniform_logits_give_log_k(self):
        logits = Tensor(np.zeros((3, 10)))
        out = nll_loss(logits, np.array([0, 4, 9]))
        assert abs(out.item() - math.log(10)) < 1e-12

    def test_margin_limit_goes_to_zero(self):
        values = []
        for margin in (5.0, 20.0, 60.0):
            logits = np.zeros((1, 4))
            logits[0, 2] = margin
            values.append(nll_loss(Tensor(logits), np.array([2])).item())
        assert values[0] > values[1] > values[2] >= 0
        assert values[2] < 1e-20

    def test_hand_value(self):
        out = nll_loss(Tensor([[2.0, 0.0]]), np.array([0]))
        want = math.log(1 + math.exp(-2))  # 0.126928...
        assert abs(out.item() - want) < 1e-12
        assert abs(out.item() - 0.12692801104297263) < 1e-12

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            nll_loss(Tensor(np.zeros((2, 3))), np.array([0, 3]))


class TestLikelihoodEstimators:
    def test_zero_variance_equals_deterministic(self):
        model = tiny_model(1, "mfg", psi=-1000.0)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(8, 2))
        y = rng.integers(0, 2, size=8)
        det_logits = model.forward(x, mode="mean")
        want = -nll_loss(det_logits, y).item()
        got_standard = ell_standard(model, (x, y), np.random.default_rng(3)).item()
        got_exemplar = ell_exemplar(model, (x, y), np.random.default_rng(4)).item()
        assert got_standard == want
        assert got_exemplar == want

    def test_single_instance_same_stream(self):
        # with one exemplar the two estimators consume the rng identically
        model = tiny_model(5, "mfg", psi=-0.5)
        x = np.random.default_rng(6).normal(size=(1, 2))
        y = np.array([1])
        a = ell_standard(model, (x, y), np.random.default_rng(7)).item()
        b = ell_exemplar(model, (x, y), np.random.default_rng(7)).item()
        assert a == b

    def test_estimators_agree_in_expectation(self):
        model = tiny_model(8, "mfg", hidden=(4,), psi=-0.7)
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 2))
        y = rng.integers(0, 2, size=4)
        n = 10_000
        a = np.empty(n)
        b = np.empty(n)
        for s in range(n):
            a[s] = ell_standard(model, (x, y), np.random.default_rng(10_000 + s)).item()
            b[s] = ell_exemplar(model, (x, y), np.random.default_rng(50_000 + s)).item()
        se = np.sqrt(a.var(ddof=1) / n + b.var(ddof=1) / n)
        assert abs(a.mean() - b.mean()) < 3 * se

    def test_empty_batch_rejected(self):
        model = tiny_model(10, "mfg")
        with pytest.raises(ValueError):
            ell_standard(model, (np.zeros((0, 2)), np.zeros(0, dtype=int)), np.random.default_rng(0))


class TestPosteriorPredictive:
    def test_single_sample_is_one_forward(self):
        model = tiny_model(11, "mfg", psi=-0.5)
        x = np.random.default_rng(12).normal(size=(5, 2))
        samples, avg = posterior_predictive(model, x, 1, np.random.default_rng(13))
        assert samples.probs.shape == (1, 5, 2)
        np.testing.assert_array_equal(avg, samples.probs[0])

    def test_zero_variance_average_equals_deterministic(self):
        from vbnn.tensor import softmax

        model = tiny_model(14, "mfg", psi=-1000.0)
        x = np.random.default_rng(15).normal(size=(6, 2))
        want = softmax(model.forward(x, mode="mean"), axis=1).data
        for s in (1, 7, 20):
            samples, avg = posterior_predictive(model, x, s, np.random.default_rng(16))
            for row in samples.probs:
                np.testing.assert_array_equal(row, want)
            np.testing.assert_allclose(avg, want, atol=1e-15)

    def test_pse_enumerates_candidates_when_samples_cover_them(self):
        from vbnn.tensor import softmax

        model = tiny_model(17, "pse", n_candidates=4)
        x = np.random.default_rng(18).normal(size=(3, 2))
        samples, _ = posterior_predictive(model, x, 4, np.random.default_rng(19))
        for c in range(4):
            want = softmax(model.forward(x, mode="shared", candidate=c), axis=1).data
            np.testing.assert_array_equal(samples.probs[c], want)

    def test_requires_positive_samples(self):
        model = tiny_model(20, "mfg")
        with pytest.raises(ValueError):
            posterior_predictive(model, np.zeros((1, 2)), 0, np.random.default_rng(0))


class TestEntropyAndMI:
    def test_one_hot_entropy_zero(self):
        assert predictive_entropy(np.array([[1.0, 0.0, 0.0]]))[0] == 0.0

    def test_uniform_entropy_maximal(self):
        h = predictive_entropy(np.full((1, 10), 0.1))[0]
        assert abs(h - math.log(10)) < 1e-12

    def test_hand_value(self):
        h = predictive_entropy(np.array([[0.75, 0.25]]))[0]
        assert abs(h - 0.5623351446188083) < 1e-12

    def test_invalid_distribution_rejected(self):
        with pytest.raises(ValueError):
            predictive_entropy(np.array([[0.5, 0.6]]))

    def test_mi_zero_when_samples_agree(self):
        p = np.tile(np.array([[0.2, 0.8]]), (5, 3, 1))
        mi = mutual_information(PredictionSamples(p))
        assert (mi == 0.0).all()

    def test_mi_two_point_disagreement_is_log2(self):
        probs = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
        mi = mutual_information(PredictionSamples(probs))
        assert abs(mi[0] - math.log(2)) < 1e-12

    def test_mi_single_sample_zero(self):
        rng = np.random.default_rng(21)
        p = rng.dirichlet(np.ones(4), size=(1, 6)).reshape(1, 6, 4)
        mi = mutual_information(PredictionSamples(p))
        assert (mi == 0.0).all()

    def test_mi_decomposition_identity(self):
        rng = np.random.default_rng(22)
        p = rng.dirichlet(np.ones(5), size=(7, 4)).reshape(7, 4, 5)
        ps = PredictionSamples(p)
        lhs = mutual_information(ps)
        rhs = predictive_entropy(p.mean(axis=0)) - np.stack(
            [predictive_entropy(p[s]) for s in range(7)]
        ).mean(axis=0)
        np.testing.assert_allclose(lhs, np.maximum(rhs, 0.0), atol=1e-12)

    @given(st.integers(2, 6), st.integers(2, 8), st.integers(0, 10_000))
    @settings(max_examples=60, deadline=None)
    def test_mi_bounds(self, k, s, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.ones(k), size=(s, 3)).reshape(s, 3, k)
        mi = mutual_information(PredictionSamples(p))
        assert (mi >= 0.0).all()
        assert (mi <= math.log(k) + 1e-12).all()


class TestMarginLoss:
    def test_deterministic_posterior_gives_zero(self):
        model = tiny_model(23, "mfg", psi=-1000.0)
        cfg = RegularizerConfig(gamma=0.4, alpha=3.0, s_train=2)
        x = np.random.default_rng(24).normal(size=(6, 2))
        loss = margin_uncertainty_loss(model, x, cfg, np.random.default_rng(25))
        assert loss.item() == 0.0

    def test_saturated_margin_has_zero_gradient(self):
        # gamma 0 saturates every instance: loss = gamma, gradients vanish
        model = tiny_model(26, "mfg", psi=-0.3)
        cfg = RegularizerConfig(gamma=0.0, alpha=1.0, s_train=2)
        x = np.random.default_rng(27).normal(size=(5, 2))
        with Graph() as g:
            loss = margin_uncertainty_loss(model, x, cfg, np.random.default_rng(28))
        g.backward(loss)
        assert loss.item() == 0.0
        for p in model.parameters():
            if p.grad is not None:
                assert np.abs(p.grad).max() == 0.0

    def test_value_within_margin_bounds(self):
        model = tiny_model(29, "mfg", psi=-0.3)
        cfg = RegularizerConfig(gamma=0.4, alpha=3.0, s_train=2)
        x = np.random.default_rng(30).normal(size=(16, 2))
        loss = margin_uncertainty_loss(model, x, cfg, np.random.default_rng(31)).item()
        assert -1e-12 <= loss <= 0.4 + 1e-12

    def test_defaults_match_recipe(self):
        cfg = RegularizerConfig()
        assert cfg.gamma == 0.75 and cfg.alpha == 3.0 and cfg.s_train == 2

    def test_s_train_floor(self):
        with pytest.raises(ValueError):
            RegularizerConfig(s_train=1)


class TestCombinedObjective:
    def test_alpha_zero_reduces_to_exemplar_likelihood(self):
        model = tiny_model(32, "mfg", psi=-0.5)
        rng = np.random.default_rng(33)
        x = rng.normal(size=(4, 2))
        y = rng.integers(0, 2, size=4)
        cfg = RegularizerConfig(gamma=0.4, alpha=0.0, s_train=2)
        a = combined_objective(model, (x, y), None, cfg, np.random.default_rng(34)).item()
        b = ell_exemplar(model, (x, y), np.random.default_rng(34)).item()
        assert a == b

    def test_missing_ood_batch_with_positive_alpha(self):
        model = tiny_model(35, "mfg")
        cfg = RegularizerConfig(gamma=0.4, alpha=3.0, s_train=2)
        with pytest.raises(ValueError):
            combined_objective(
                model, (np.zeros((2, 2)), np.zeros(2, dtype=int)), np.zeros((0, 2)),
                cfg, np.random.default_rng(36),
            )

    def test_equals_sum_of_parts(self):
        model = tiny_model(37, "mfg", psi=-0.5)
        rng = np.random.default_rng(38)
        x = rng.normal(size=(4, 2))
        y = rng.integers(0, 2, size=4)
        ood = rng.normal(size=(4, 2))
        cfg = RegularizerConfig(gamma=0.4, alpha=3.0, s_train=2)
        total = combined_objective(model, (x, y), ood, cfg, np.random.default_rng(39)).item()
        rng2 = np.random.default_rng(39)
        part1 = ell_exemplar(model, (x, y), rng2).item()
        part2 = margin_uncertainty_loss(model, ood, cfg, rng2).item()
        assert abs(total - (part1 + 3.0 * part2)) < 1e-12


class TestPredictionSamplesValidation:
    def test_rejects_unnormalized_rows(self):
        with pytest.raises(ValueError):
            PredictionSamples(np.full((1, 1, 2), 0.4))

    def test_rejects_out_of_range(self):
        bad = np.array([[[1.2, -0.2]]])
        with pytest.raises(ValueError):
            PredictionSamples(bad)
