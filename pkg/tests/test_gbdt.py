import numpy as np
import pytest

from driverid import gbdt
from driverid.errors import ConfigurationError, DataError, InvalidParameterError

FAST = gbdt.GbdtConfig(num_trees=20, num_leaves=8, max_depth=6,
                       feature_fraction=1.0, bagging_fraction=1.0,
                       min_samples_leaf=2, seed=0)


def blobs(n_per_class=100, k=3, dim=6, spread=0.3, seed=0):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((k, dim)) * 5.0
    x = np.concatenate([centers[c] + spread * rng.standard_normal((n_per_class, dim))
                        for c in range(k)])
    y = np.repeat(np.arange(k), n_per_class)
    return x, y


def tree_walk_oracle(tree, row):
    node = 0
    while tree.feature[node] >= 0:
        if row[tree.feature[node]] < tree.threshold[node]:
            node = tree.left[node]
        else:
            node = tree.right[node]
    return tree.value[node]


class TestGradHess:
    def test_uniform_raw_label_zero(self):
        g, h = gbdt.softmax_grad_hess(np.zeros(3), 0)
        np.testing.assert_allclose(g, [-2 / 3, 1 / 3, 1 / 3], atol=1e-15)
        np.testing.assert_allclose(h, [2 / 9, 2 / 9, 2 / 9], atol=1e-15)

    def test_confident_correct_prediction_small_gradient(self):
        g, _ = gbdt.softmax_grad_hess(np.array([50.0, 0.0, 0.0]), 0)
        assert np.abs(g).max() < 1e-12

    def test_gradient_sums_to_zero(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g, _ = gbdt.softmax_grad_hess(rng.standard_normal(5), 2)
            assert abs(g.sum()) < 1e-12


class TestFit:
    def test_root_only_newton_leaf_value(self):
        # All-identical class-0 samples at raw [0,0,0] leave a root-only tree;
        # the Newton value -G/(H+0) = (2/3)/(2/9) = 3 is what a single sample
        # gives too, since the ratio is unchanged by sample count.
        cfg = gbdt.GbdtConfig(num_trees=1, num_leaves=2, lambda_l2=0.0,
                              learning_rate=1.0, min_samples_leaf=1,
                              feature_fraction=1.0, bagging_fraction=1.0)
        model = gbdt.fit(np.zeros((3, 1)), np.zeros(3, dtype=int), cfg, n_classes=3)
        root_value = model.trees[0][0].value[0]
        assert abs(root_value - 3.0) < 1e-12
        assert model.trees[0][0].n_leaves == 1
        g, h = gbdt.softmax_grad_hess(np.zeros(3), 0)
        assert abs(-g[0] / h[0] - 3.0) < 1e-12

    def test_separable_blobs_high_train_accuracy(self):
        x, y = blobs(100, 3)
        cfg = gbdt.GbdtConfig(seed=1)
        model = gbdt.fit(x, y, cfg)
        acc = (model.predict_proba(x).argmax(axis=1) == y).mean()
        assert acc >= 0.99

    def test_constant_labels_one_hot(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((60, 4))
        y = np.ones(60, dtype=int)
        model = gbdt.fit(x, y, FAST, n_classes=3)
        probs = model.predict_proba(x)
        assert (probs.argmax(axis=1) == 1).all()
        assert probs[:, 1].min() > 0.9

    def test_monotone_train_logloss_without_subsampling(self):
        x, y = blobs(40, 3, spread=2.0, seed=3)
        cfg = gbdt.GbdtConfig(num_trees=50, feature_fraction=1.0,
                              bagging_fraction=1.0, seed=3)
        model = gbdt.fit(x, y, cfg)
        ll = np.array(model.train_logloss)
        assert (np.diff(ll) <= 1e-9).all()

    def test_leaf_and_depth_caps(self):
        x, y = blobs(80, 4, spread=3.0, seed=4)
        cfg = gbdt.GbdtConfig(num_trees=10, num_leaves=6, max_depth=3,
                              min_samples_leaf=1, seed=4)
        model = gbdt.fit(x, y, cfg)
        for per_class in model.trees:
            for tree in per_class:
                assert tree.n_leaves <= 6
                assert tree.max_depth_reached() <= 3

    def test_every_input_reaches_exactly_one_leaf(self):
        x, y = blobs(30, 2, seed=5)
        model = gbdt.fit(x, y, FAST)
        tree = model.trees[0][0]
        preds = tree.predict(x)
        for i in range(0, len(x), 7):
            assert preds[i] == tree_walk_oracle(tree, x[i])

    def test_deterministic(self):
        x, y = blobs(50, 3, seed=6)
        cfg = gbdt.GbdtConfig(num_trees=15, seed=9)
        m1 = gbdt.fit(x, y, cfg)
        m2 = gbdt.fit(x, y, cfg)
        for t1s, t2s in zip(m1.trees, m2.trees):
            for t1, t2 in zip(t1s, t2s):
                assert np.array_equal(t1.value, t2.value)
                assert np.array_equal(t1.feature, t2.feature)
                assert np.array_equal(t1.threshold, t2.threshold)

    def test_monotone_relabeling_invariance_on_training_rows(self):
        x, y = blobs(40, 3, seed=7)
        cfg = gbdt.GbdtConfig(num_trees=10, feature_fraction=1.0,
                              bagging_fraction=1.0, seed=7)
        m_raw = gbdt.fit(x, y, cfg)
        m_tr = gbdt.fit(np.exp(x), y, cfg)
        np.testing.assert_array_equal(m_raw.predict_proba(x),
                                      m_tr.predict_proba(np.exp(x)))

    def test_errors(self):
        with pytest.raises(DataError):
            gbdt.fit(np.zeros((2, 3)), np.array([0, 1]), FAST, n_classes=3)  # N < K
        with pytest.raises(DataError):
            gbdt.fit(np.array([[np.inf, 0.0]]), np.array([0]), FAST, n_classes=1)
        with pytest.raises(DataError):
            gbdt.fit(np.zeros((4, 2)), np.array([0, 1, 2, 3]), FAST, n_classes=3)
        with pytest.raises(ConfigurationError):
            gbdt.GbdtConfig(num_leaves=1).validate()
        with pytest.raises(ConfigurationError):
            gbdt.GbdtConfig(bagging_fraction=0.0).validate()


class TestPredict:
    def test_zero_rounds_uniform(self):
        x, y = blobs(20, 4, seed=8)
        cfg = gbdt.GbdtConfig(num_trees=0)
        model = gbdt.fit(x, y, cfg)
        probs = model.predict_proba(x)
        np.testing.assert_allclose(probs, 0.25, atol=1e-15)

    def test_rows_sum_to_one(self):
        x, y = blobs(60, 3, spread=2.0, seed=9)
        model = gbdt.fit(x, y, FAST)
        probs = model.predict_proba(x)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_matches_recursive_traversal_oracle(self):
        x, y = blobs(60, 3, seed=10)
        model = gbdt.fit(x, y, FAST)
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((50, x.shape[1])) * 3.0
        raw = model.predict_raw(rows)
        want = np.tile(model.init_scores, (50, 1))
        for per_class in model.trees:
            for k, tree in enumerate(per_class):
                for i in range(50):
                    want[i, k] += tree_walk_oracle(tree, rows[i])
        np.testing.assert_allclose(raw, want, atol=1e-12)


class TestRestricted:
    PROBS = np.array([0.6, 0.3, 0.1])

    def test_argmax_of_restriction(self):
        assert gbdt.restricted_argmax(self.PROBS, {1, 2}, 0.0) == 1

    def test_below_threshold_uncertain(self):
        assert gbdt.restricted_argmax(self.PROBS, {1, 2}, 0.5) == gbdt.UNCERTAIN

    def test_all_labels_plain_argmax(self):
        assert gbdt.restricted_argmax(self.PROBS, {0, 1, 2}, 0.0) == 0

    def test_tie_breaks_to_smallest_label(self):
        assert gbdt.restricted_argmax(np.array([0.4, 0.4, 0.2]), {0, 1}, 0.0) == 0
        assert gbdt.restricted_argmax(np.array([0.4, 0.4, 0.2]), {1, 0}, 0.0) == 0

    def test_model_level_wrapper(self):
        x, y = blobs(30, 3, seed=11)
        model = gbdt.fit(x, y, FAST)
        row = x[0]
        full = model.predict_proba(row[None])[0]
        got = gbdt.predict_restricted(model, row, {0, 1, 2}, threshold=0.0)
        assert got == int(full.argmax())
        with pytest.raises(InvalidParameterError):
            gbdt.predict_restricted(model, row, {0, 5})
        with pytest.raises(InvalidParameterError):
            gbdt.restricted_argmax(full, set(), 0.0)


class TestPersistence:
    def test_round_trip_identical_predictions(self, tmp_path):
        x, y = blobs(50, 3, seed=12)
        model = gbdt.fit(x, y, FAST)
        path = tmp_path / "model.json"
        gbdt.save_model(model, path)
        loaded = gbdt.load_model(path)
        np.testing.assert_array_equal(model.predict_proba(x), loaded.predict_proba(x))
        assert loaded.config == model.config

    def test_version_check(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format_version": 999}')
        with pytest.raises(ConfigurationError):
            gbdt.load_model(path)
