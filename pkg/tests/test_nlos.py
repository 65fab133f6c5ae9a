import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpfgo.errors import DegenerateLabelsError, DimensionMismatchError, InvalidModelError
from gpfgo.gp import StateKnot
from gpfgo.measurements import SatObservation
from gpfgo.nlos import (FEATURE_NAMES, ClassifierModel, FeatureHistory, ScreenPolicy, TrainOptions,
                        dumps_classifier, extract_features, loads_classifier, predict,
                        read_labeled_csv, roc_auc, screen_epoch, train, write_labeled_csv)


def sat_obs(sid, cn0, t=0.0):
    return SatObservation(sid, (1.5e7, 1.1e7, 1.8e7), 2.6e7, cn0, 0.6, 1.0, t)


def toy_data(seed=0, n=400):
    """Two Gaussian blobs in the 7-D feature space."""
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < 0.3).astype(int)
    X = rng.normal(0, 1, (n, len(FEATURE_NAMES)))
    X[:, 0] += np.where(y == 1, -2.0, 2.0)
    X[:, 2] += np.where(y == 1, 1.5, 0.0)
    return X, y


class TestFeatures:
    def test_single_satellite(self):
        (fv,) = extract_features([sat_obs("A", 42.0)], StateKnot(0.0))
        assert fv.cn0_epoch_std == 0.0 and fv.cn0_delta == 0.0 and fv.sat_count == 1

    def test_population_statistics(self):
        fvs = extract_features([sat_obs("A", 40.0), sat_obs("B", 50.0)], StateKnot(0.0))
        assert fvs[0].cn0_epoch_mean == 45.0 and fvs[0].cn0_epoch_std == 5.0

    def test_temporal_delta(self):
        hist = FeatureHistory()
        extract_features([sat_obs("A", 45.0)], StateKnot(0.0), hist)
        (fv,) = extract_features([sat_obs("A", 40.0, 1.0)], StateKnot(1.0), hist)
        assert fv.cn0_delta == -5.0

    def test_residual_against_prior(self):
        (fv,) = extract_features([sat_obs("A", 45.0)], StateKnot(0.0, b=3.0))
        rng = np.linalg.norm([1.5e7, 1.1e7, 1.8e7])
        assert fv.residual_prior == pytest.approx(2.6e7 - rng - 3.0, abs=1e-6)

    def test_empty_epoch(self):
        with pytest.raises(ValueError):
            extract_features([], StateKnot(0.0))


class TestTrain:
    def test_separable_1d(self):
        x = np.concatenate([np.linspace(-3, -0.5, 20), np.linspace(0.5, 3, 20)])
        X = np.zeros((40, len(FEATURE_NAMES)))
        X[:, 0] = x
        y = (x > 0).astype(int)
        _, flag = predict(train(X, y), X)
        assert np.mean(flag == y) == 1.0

    def test_zero_steps_is_untrained(self):
        X, y = toy_data()
        m = train(X, y, TrainOptions(max_steps=0))
        assert np.all(m.weights == 0) and m.bias == 0
        assert np.allclose(m.predict_proba(X), 0.5)

    def test_duplicated_dataset(self):
        X, y = toy_data(1)
        a = train(X, y)
        b = train(np.vstack([X, X]), np.concatenate([y, y]))
        assert np.allclose(a.weights, b.weights, atol=1e-9)
        assert a.bias == pytest.approx(b.bias, abs=1e-9)

    def test_loss_non_increasing(self):
        X, y = toy_data(2)
        opts = TrainOptions()
        train(X, y, opts)
        assert len(opts.loss_trace) > 2
        assert np.all(np.diff(opts.loss_trace) <= 0)

    def test_single_class(self):
        X, _ = toy_data()
        with pytest.raises(DegenerateLabelsError):
            train(X, np.zeros(len(X)))

    def test_identity_standardisation_same_decisions(self):
        X, y = toy_data(3)
        Z = (X - X.mean(axis=0)) / X.std(axis=0)
        a = train(X, y)
        b = train(Z, y, TrainOptions(standardize=False))
        assert np.array_equal(predict(a, X)[1], predict(b, Z)[1])

    def test_held_out_auc(self):
        X, y = toy_data(4)
        Xt, yt = toy_data(5)
        assert roc_auc(train(X, y).predict_proba(Xt), yt) > 0.95


class TestPredict:
    def model(self, w=None, b=0.0, threshold=0.5):
        d = len(FEATURE_NAMES)
        return ClassifierModel(np.zeros(d) if w is None else w, b, np.zeros(d), np.ones(d), threshold)

    def test_zero_model_half(self):
        p, _ = predict(self.model(), np.ones((3, len(FEATURE_NAMES))))
        assert np.all(p == 0.5)

    def test_large_margin(self):
        w = np.zeros(len(FEATURE_NAMES))
        w[0] = 1.0
        p, flag = predict(self.model(w), np.full((1, len(FEATURE_NAMES)), 1e3))
        assert p[0] == pytest.approx(1.0) and flag[0]

    def test_threshold_boundary(self):
        logit = np.log(0.49 / 0.51)
        p, flag = predict(self.model(b=logit), np.zeros((1, len(FEATURE_NAMES))))
        assert p[0] == pytest.approx(0.49) and not flag[0]

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            predict(self.model(), np.zeros((2, 3)))

    def test_bad_model(self):
        with pytest.raises(InvalidModelError):
            ClassifierModel([1.0], 0.0, [0.0], [0.0])

    @given(st.floats(0.01, 0.98), st.floats(0.01, 0.98))
    def test_threshold_monotone_exclusions(self, t1, t2):
        X, y = toy_data(6, 200)
        m = train(X, y)
        lo, hi = sorted((t1, t2))
        m.threshold = lo
        n_lo = int(predict(m, X)[1].sum())
        m.threshold = hi
        assert int(predict(m, X)[1].sum()) <= n_lo


class TestScreen:
    epoch = [sat_obs(f"S{k}", 45.0) for k in range(8)]

    def test_no_flags(self):
        res = screen_epoch(self.epoch, (np.zeros(8), np.zeros(8, bool)))
        assert len(res.kept) == 8 and not res.excluded

    def test_three_flagged(self):
        flags = np.array([1, 0, 0, 1, 0, 0, 1, 0], bool)
        res = screen_epoch(self.epoch, (flags * 0.9, flags))
        assert len(res.kept) == 5 and len(res.excluded) == 3 and not res.retained_under_protest

    def test_min_keep_guard(self):
        ep = self.epoch[:5]
        prob = np.array([0.1, 0.9, 0.6, 0.7, 0.8])
        res = screen_epoch(ep, (prob, prob >= 0.5), ScreenPolicy(min_keep=4))
        assert len(res.kept) == 4
        assert [o.sat_id for o in res.retained_under_protest] == ["S2", "S3", "S4"]
        assert [o.sat_id for o in res.excluded] == ["S1"]

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=12), st.integers(1, 8))
    def test_never_below_min_keep(self, probs, min_keep):
        ep = [sat_obs(f"S{k}", 45.0) for k in range(len(probs))]
        p = np.array(probs)
        res = screen_epoch(ep, (p, p >= 0.5), ScreenPolicy(min_keep))
        assert len(res.kept) >= min(min_keep, len(ep))
        assert len(res.kept) + len(res.excluded) == len(ep)

    def test_misaligned(self):
        with pytest.raises(DimensionMismatchError):
            screen_epoch(self.epoch, (np.zeros(3), np.zeros(3, bool)))


class TestAucAndFiles:
    def test_auc_extremes(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
        assert roc_auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
        assert roc_auc([0.5, 0.5, 0.5, 0.5], [0, 1, 0, 1]) == 0.5

    def test_classifier_roundtrip(self):
        X, y = toy_data(7)
        m = train(X, y)
        back = loads_classifier(dumps_classifier(m))
        assert np.array_equal(back.weights, m.weights) and back.bias == m.bias
        assert np.array_equal(back.predict_proba(X), m.predict_proba(X))

    def test_malformed_classifier(self):
        with pytest.raises(InvalidModelError):
            loads_classifier("weights 1 2\n")

    def test_labeled_csv_roundtrip(self, tmp_path):
        fvs = extract_features([sat_obs("A", 40.0), sat_obs("B", 50.0)], StateKnot(0.0))
        write_labeled_csv(tmp_path / "f.csv", [(0, "A", fvs[0], True), (0, "B", fvs[1], False)])
        X, y = read_labeled_csv(tmp_path / "f.csv")
        assert np.array_equal(X[0], fvs[0].as_array()) and list(y) == [1, 0]
