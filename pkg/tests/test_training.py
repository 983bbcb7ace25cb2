from dataclasses import dataclass

import numpy as np
import pytest

from driverid import numerics as nm
from driverid import training as tr
from driverid.encoder import EncoderConfig, embed_batch
from driverid.errors import ConfigurationError, DataError, ShapeMismatchError, TrainingDivergedError

TOY_CFG = EncoderConfig(in_channels=2, kernel_size=2, levels=3,
                        hidden_channels=4, tcn_embedding=4,
                        wavelet_embedding_per_branch=2, dropout_p=0.05,
                        window_length=8)


@dataclass
class ToyWindow:
    frames: np.ndarray
    driver: str


def toy_windows(n_per_driver=10, n_drivers=4, noise=0.1, seed=0, length=8):
    rng = np.random.default_rng(seed)
    windows = []
    for d in range(n_drivers):
        base = 2.0 * d
        for _ in range(n_per_driver):
            frames = base + noise * rng.standard_normal((2, length))
            frames[1] *= -1.0
            windows.append(ToyWindow(frames, f"drv{d}"))
    return windows


def eq1_oracle(r, p, n, alpha):
    return max(0.0, np.sum((r - p) ** 2) - np.sum((r - n) ** 2) + alpha)


class TestTripletLoss:
    def test_coincident_embeddings_give_margin(self):
        e = nm.tensor([0.3, -0.7])
        loss = tr.triplet_loss(e, nm.tensor([0.3, -0.7]), nm.tensor([0.3, -0.7]), 1.0)
        assert loss.item() == 1.0

    def test_satisfied_margin_is_zero(self):
        loss = tr.triplet_loss(nm.tensor([0.0, 0.0]), nm.tensor([0.0, 0.0]),
                               nm.tensor([2.0, 0.0]), 1.0)
        assert loss.item() == 0.0

    def test_direct_evaluation(self):
        loss = tr.triplet_loss(nm.tensor([0.0]), nm.tensor([1.0]), nm.tensor([1.2]), 1.0)
        assert loss.item() == eq1_oracle(np.array([0.0]), np.array([1.0]),
                                         np.array([1.2]), 1.0)
        assert np.isclose(loss.item(), 0.56)

    def test_matches_oracle_on_random_triples(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            r, p, n = rng.standard_normal((3, 6))
            alpha = float(rng.uniform(0.1, 2.0))
            got = tr.triplet_loss(nm.tensor(r), nm.tensor(p), nm.tensor(n), alpha).item()
            assert got == eq1_oracle(r, p, n, alpha)
            assert got >= 0.0

    def test_zero_when_negative_far(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            r = rng.standard_normal(4)
            p = r + 0.01 * rng.standard_normal(4)
            n = r + 100.0 * rng.standard_normal(4)
            d_rp = np.sum((r - p) ** 2)
            d_rn = np.sum((r - n) ** 2)
            if d_rn >= d_rp + 1.0:
                loss = tr.triplet_loss(nm.tensor(r), nm.tensor(p), nm.tensor(n), 1.0)
                assert loss.item() == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            tr.triplet_loss(nm.tensor([1.0]), nm.tensor([1.0, 2.0]), nm.tensor([1.0]), 1.0)

    def test_batched_matches_scalar_form(self):
        rng = np.random.default_rng(2)
        a, p, n = rng.standard_normal((3, 5, 7))
        batched = tr.batched_triplet_loss(nm.tensor(a), nm.tensor(p), nm.tensor(n), 1.0)
        singles = [tr.triplet_loss(nm.tensor(a[i]), nm.tensor(p[i]),
                                   nm.tensor(n[i]), 1.0).item() for i in range(5)]
        assert np.isclose(batched.item(), np.mean(singles))

    def test_gradient_through_hinge(self):
        rng = np.random.default_rng(3)
        r = nm.tensor(rng.standard_normal(4), requires_grad=True)
        p_const = nm.tensor(rng.standard_normal(4))
        n_const = nm.tensor(rng.standard_normal(4))
        err = nm.finite_difference_check(
            lambda: tr.triplet_loss(r, p_const, n_const, 1.0), [r])
        assert err <= 1e-4


class TestSampleTriplets:
    def test_invariants_minimal_split(self):
        windows = toy_windows(n_per_driver=2, n_drivers=2)
        rng = np.random.default_rng(0)
        for t in tr.sample_triplets(windows, 50, rng):
            assert t.anchor.driver == t.positive.driver
            assert t.anchor is not t.positive
            assert t.negative.driver != t.anchor.driver

    def test_fixed_seed_reproducible(self):
        windows = toy_windows()
        a = tr.sample_triplets(windows, 20, np.random.default_rng(42))
        b = tr.sample_triplets(windows, 20, np.random.default_rng(42))
        for ta, tb in zip(a, b):
            assert ta.anchor is tb.anchor
            assert ta.positive is tb.positive
            assert ta.negative is tb.negative

    def test_anchor_frequencies_uniform(self):
        windows = toy_windows(n_per_driver=4, n_drivers=5)
        rng = np.random.default_rng(7)
        counts = {f"drv{d}": 0 for d in range(5)}
        for t in tr.sample_triplets(windows, 10_000, rng):
            counts[t.anchor.driver] += 1
        sigma = np.sqrt(10_000 * 0.2 * 0.8)
        for c in counts.values():
            assert abs(c - 2000) <= 3 * sigma

    def test_driver_with_one_window_rejected(self):
        windows = toy_windows(n_per_driver=2, n_drivers=2)
        windows.append(ToyWindow(np.zeros((2, 8)), "lonely"))
        with pytest.raises(DataError, match="lonely"):
            tr.sample_triplets(windows, 4, np.random.default_rng(0))


class TestAdam:
    def test_zero_gradient_no_change(self):
        p = nm.tensor([1.0, -2.0], requires_grad=True)
        before = p.data.copy()
        state = tr.AdamState([p])
        tr.adam_step([p], [np.zeros(2)], state, lr=0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_first_step_magnitude(self):
        p = nm.tensor([0.0], requires_grad=True)
        state = tr.AdamState([p])
        tr.adam_step([p], [np.ones(1)], state, lr=4e-4)
        assert np.isclose(p.data[0], -4e-4, rtol=1e-6)

    def test_two_steps_match_reference(self):
        # straight-line reference of the bias-corrected update
        def reference(theta, g, lr, steps):
            m = v = 0.0
            for t in range(1, steps + 1):
                m = 0.9 * m + 0.1 * g
                v = 0.999 * v + 0.001 * g * g
                mh = m / (1 - 0.9 ** t)
                vh = v / (1 - 0.999 ** t)
                theta = theta - lr * mh / (np.sqrt(vh) + 1e-8)
            return theta

        p = nm.tensor([0.5], requires_grad=True)
        state = tr.AdamState([p])
        g = np.array([0.3])
        tr.adam_step([p], [g], state, lr=0.01)
        tr.adam_step([p], [g], state, lr=0.01)
        assert np.isclose(p.data[0], reference(0.5, 0.3, 0.01, 2), rtol=1e-12)


class TestTrain:
    def test_zero_epochs(self):
        windows = toy_windows()
        res = tr.train(windows, TOY_CFG, tr.TrainConfig(epochs=0, seed=1))
        assert res.history == []
        assert res.learning_rates == []

    def test_loss_decreases_on_separable_drivers(self):
        windows = toy_windows(n_per_driver=10, n_drivers=4, noise=0.05)
        cfg = tr.TrainConfig(learning_rate=2e-3, epochs=20, batch_size=8, seed=3)
        res = tr.train(windows, TOY_CFG, cfg)
        assert len(res.history) == 20
        assert res.history[0] > 0.4          # random embeddings start near the margin
        assert res.history[-1] < 0.5 * res.history[0]

    def test_learning_rate_schedule_exact(self):
        windows = toy_windows(n_per_driver=3, n_drivers=2)
        cfg = tr.TrainConfig(epochs=5, batch_size=4, seed=0)
        res = tr.train(windows, TOY_CFG, cfg)
        for k, lr in enumerate(res.learning_rates):
            assert lr == cfg.learning_rate * cfg.decay ** k

    def test_fixed_seed_bitwise_identical_history(self):
        windows = toy_windows()
        cfg = tr.TrainConfig(epochs=3, batch_size=8, seed=11)
        h1 = tr.train(windows, TOY_CFG, cfg).history
        h2 = tr.train(windows, TOY_CFG, cfg).history
        assert h1 == h2

    def test_divergence_reports_context(self):
        windows = toy_windows(noise=1.0)
        poisoned = np.full((2, 8), np.nan)
        windows[0] = ToyWindow(poisoned, windows[0].driver)
        windows[1] = ToyWindow(poisoned, windows[1].driver)
        cfg = tr.TrainConfig(epochs=2, batch_size=16, seed=0)
        with pytest.raises(TrainingDivergedError, match=r"epoch \d+, batch \d+"):
            tr.train(windows, TOY_CFG, cfg)

    def test_separation_on_held_out_windows(self):
        train_ws = toy_windows(n_per_driver=10, n_drivers=4, noise=0.05, seed=0)
        held_out = toy_windows(n_per_driver=5, n_drivers=4, noise=0.05, seed=99)
        cfg = tr.TrainConfig(learning_rate=2e-3, epochs=15, batch_size=8, seed=5)
        res = tr.train(train_ws, TOY_CFG, cfg)
        embs = embed_batch(res.params, TOY_CFG, np.stack([w.frames for w in held_out]))
        labels = np.array([int(w.driver[3:]) for w in held_out])
        within, between = [], []
        for i in range(len(held_out)):
            for j in range(i + 1, len(held_out)):
                d = np.sum((embs[i] - embs[j]) ** 2)
                (within if labels[i] == labels[j] else between).append(d)
        assert np.mean(within) < np.mean(between)

    def test_cross_entropy_mode(self):
        windows = toy_windows(n_per_driver=10, n_drivers=3, noise=0.05)
        cfg = tr.TrainConfig(learning_rate=2e-3, epochs=15, batch_size=8,
                             seed=2, mode="cross_entropy")
        res = tr.train(windows, TOY_CFG, cfg)
        assert res.head is not None
        w, b = res.head
        assert w.shape == (TOY_CFG.embedding_size, 3)
        assert res.history[-1] < res.history[0]

    def test_semi_hard_mining_runs(self):
        windows = toy_windows(n_per_driver=6, n_drivers=3)
        cfg = tr.TrainConfig(epochs=2, batch_size=4, seed=0, mining="semi_hard")
        res = tr.train(windows, TOY_CFG, cfg)
        assert len(res.history) == 2

    def test_bad_configs_rejected(self):
        with pytest.raises(ConfigurationError):
            tr.TrainConfig(margin=0.0).validate()
        with pytest.raises(ConfigurationError):
            tr.TrainConfig(decay=0.0).validate()
        with pytest.raises(ConfigurationError):
            tr.TrainConfig(decay=1.5).validate()
        with pytest.raises(ConfigurationError):
            tr.TrainConfig(mode="contrastive").validate()
