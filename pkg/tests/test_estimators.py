"""Scikit-learn facade: fit/predict contract, params, validation, uncertainty."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from vbnn.datasets import make_blobs, make_two_moons
from vbnn.estimators import (
    DeepEnsembleClassifier,
    LaplaceClassifier,
    MapClassifier,
    MCDropoutClassifier,
    VariationalClassifier,
)


@pytest.fixture(scope="module")
def moons_xy():
    train = make_two_moons(220, 0.12, seed=0)
    test = make_two_moons(220, 0.12, seed=1)
    return train.x, train.y, test.x, test.y


FAST = dict(epochs=10, batch_size=32, seed=0)


class TestMapClassifier:
    def test_fit_predict_accuracy(self, moons_xy):
        x, y, xt, yt = moons_xy
        clf = MapClassifier(hidden=(16,), **FAST).fit(x, y)
        assert clf.score(xt, yt) > 0.85

    def test_predict_proba_rows_sum_to_one(self, moons_xy):
        x, y, xt, _ = moons_xy
        clf = MapClassifier(hidden=(8,), **FAST).fit(x, y)
        probs = clf.predict_proba(xt)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_unfitted_raises(self, moons_xy):
        with pytest.raises(NotFittedError):
            MapClassifier().predict(moons_xy[0])

    def test_string_labels_roundtrip(self, moons_xy):
        x, y = moons_xy[0], moons_xy[1]
        names = np.array(["ham", "spam"])[y]
        clf = MapClassifier(hidden=(8,), epochs=6, seed=0).fit(x, names)
        assert set(clf.predict(x[:10])) <= {"ham", "spam"}

    def test_clone_and_get_params(self):
        clf = MapClassifier(hidden=(4,), epochs=3, lr=0.2)
        params = clf.get_params()
        assert params["lr"] == 0.2
        twin = clone(clf)
        assert twin.get_params() == params

    def test_input_validation(self, moons_xy):
        x, y = moons_xy[0], moons_xy[1]
        with pytest.raises(ValueError):
            MapClassifier().fit(x[:, 0], y)  # 1-D X
        clf = MapClassifier(hidden=(4,), epochs=2, seed=0).fit(x, y)
        with pytest.raises(ValueError):
            clf.predict_proba(np.array([[np.nan, 0.0]]))


class TestVariationalClassifier:
    def test_fit_predict_and_uncertainty(self, moons_xy):
        x, y, xt, yt = moons_xy
        clf = VariationalClassifier(
            family="mfg", hidden=(16,), pretrain_epochs=12, epochs=4, mc_samples=8, seed=0
        ).fit(x, y)
        assert clf.score(xt, yt) > 0.85
        mi = clf.mutual_information(xt)
        assert mi.shape == (len(xt),)
        assert (mi >= 0).all()
        far = np.full((5, 2), 30.0)
        assert clf.mutual_information(far).mean() >= 0

    def test_pse_family(self, moons_xy):
        x, y, xt, yt = moons_xy
        clf = VariationalClassifier(
            family="pse", hidden=(8,), pretrain_epochs=10, epochs=3,
            candidates=6, mc_samples=6, seed=0,
        ).fit(x, y)
        assert clf.score(xt, yt) > 0.8

    def test_from_scratch_mode_runs(self, moons_xy):
        x, y = moons_xy[0], moons_xy[1]
        clf = VariationalClassifier(
            hidden=(8,), epochs=2, warm_start_map=False, mc_samples=4, seed=0
        ).fit(x, y)
        assert clf.predict(x[:5]).shape == (5,)

    def test_regularized_fit_runs(self, moons_xy):
        x, y = moons_xy[0], moons_xy[1]
        clf = VariationalClassifier(
            hidden=(8,), pretrain_epochs=8, epochs=2, gamma=0.4, ood_delta=0.3,
            mc_samples=4, seed=0,
        ).fit(x, y)
        assert 0 <= clf.mutual_information(x[:10]).max() <= np.log(2) + 1e-12

    def test_predictions_deterministic_given_params(self, moons_xy):
        x, y, xt, _ = moons_xy
        a = VariationalClassifier(hidden=(8,), pretrain_epochs=6, epochs=2, mc_samples=4,
                                  seed=3).fit(x, y)
        b = VariationalClassifier(hidden=(8,), pretrain_epochs=6, epochs=2, mc_samples=4,
                                  seed=3).fit(x, y)
        np.testing.assert_array_equal(a.predict_proba(xt), b.predict_proba(xt))


class TestBaselineEstimators:
    def test_mc_dropout(self, moons_xy):
        x, y, xt, yt = moons_xy
        clf = MCDropoutClassifier(drop_rate=0.2, mc_samples=8, hidden=(16,), **FAST).fit(x, y)
        assert clf.score(xt, yt) > 0.8
        assert clf.mutual_information(xt).max() > 0

    def test_deep_ensemble(self, moons_xy):
        x, y, xt, yt = moons_xy
        clf = DeepEnsembleClassifier(n_members=3, hidden=(8,), **FAST).fit(x, y)
        assert len(clf.members_) == 3
        assert clf.score(xt, yt) > 0.85

    def test_laplace(self, moons_xy):
        # needs a sharper fit than the other baselines: the posterior width
        # is set by the local curvature, which grows as training converges
        x, y, xt, yt = moons_xy
        clf = LaplaceClassifier(hidden=(8,), mc_samples=20, epochs=40, seed=0).fit(x, y)
        assert clf.score(xt, yt) > 0.85
        assert (clf.mutual_information(xt) >= 0).all()


class TestMultiClass:
    def test_three_class_blobs(self):
        train = make_blobs(240, n_classes=3, spread=0.5, seed=2)
        test = make_blobs(240, n_classes=3, spread=0.5, seed=3)
        clf = VariationalClassifier(hidden=(16,), pretrain_epochs=15, epochs=3,
                                    mc_samples=8, seed=0).fit(train.x, train.y)
        assert clf.score(test.x, test.y) > 0.9
        assert clf.predict_proba(test.x).shape == (240, 3)
