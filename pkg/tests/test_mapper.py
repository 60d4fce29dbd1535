import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oovmap.mapper import (
    BLOCK_SIZE,
    MapperModel,
    NumericalError,
    TrainingPairs,
    forward,
    forward_blocked,
    gradient_check,
    hardtanh,
    load_checkpoint,
    n_params,
    objective,
    pair_loss,
    save_checkpoint,
)


def random_pairs(rng, N, d, n):
    return TrainingPairs(
        tuple(f"w{i}" for i in range(N)), rng.normal(size=(N, d)), rng.normal(size=(N, n))
    )


def scalar_model(w1, b1, w2, b2):
    return MapperModel(np.array([[w1]]), np.array([b1]), np.array([[w2]]), np.array([b2]))


class TestHardtanh:
    def test_piecewise(self):
        np.testing.assert_array_equal(hardtanh([-2, 0.5, 3]), [-1, 0.5, 1])

    def test_zero(self):
        np.testing.assert_array_equal(hardtanh([0, 0, 0]), [0, 0, 0])

    def test_boundaries(self):
        np.testing.assert_array_equal(hardtanh([1, -1]), [1, -1])


class TestForward:
    def test_zero_network(self):
        m = MapperModel.zeros(3, 4, 2)
        np.testing.assert_array_equal(forward(m, [1.0, -2.0, 3.0]), [0.0, 0.0])

    def test_hand_evaluation(self):
        m = scalar_model(2.0, 0.0, 1.0, 0.5)
        np.testing.assert_allclose(forward(m, [0.25]), [1.0])

    def test_saturated_branch(self):
        m = scalar_model(2.0, 0.0, 1.0, 0.5)
        np.testing.assert_allclose(forward(m, [5.0]), [1.5])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(MapperModel.zeros(3, 2, 3), [1.0, 2.0])

    def test_non_square_dims(self):
        m = MapperModel.zeros(3, 5, 2)
        assert m.dims == (3, 5, 2)
        assert forward(m, np.ones((4, 3))).shape == (4, 2)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000), arrays(np.float64, 4, elements=st.floats(-1e3, 1e3)))
    def test_output_bound(self, seed, x):
        rng = np.random.default_rng(seed)
        m = MapperModel.unpack(rng.normal(size=n_params(4, 6, 3)), 4, 6, 3)
        bound = np.abs(m.W2).sum(axis=1).max() + np.abs(m.b2).max()
        assert np.max(np.abs(forward(m, x))) <= bound + 1e-9

    def test_blocked_matches_and_ignores_workers(self):
        rng = np.random.default_rng(1)
        m = MapperModel.unpack(rng.normal(size=n_params(3, 4, 3)), 3, 4, 3)
        X = rng.normal(size=(3 * BLOCK_SIZE + 7, 3))
        a = forward_blocked(m, X, workers=1)
        b = forward_blocked(m, X, workers=4)
        assert np.array_equal(a, b)
        np.testing.assert_allclose(a, forward(m, X), rtol=1e-13, atol=1e-13)


class TestPairLoss:
    def test_identity(self):
        assert pair_loss([1.0, 2.0], [1.0, 2.0], 0.3) == 0.0

    def test_pure_absolute(self):
        assert pair_loss([0, 0], [1, -1], 1.0) == 2.0

    def test_mixed(self):
        assert pair_loss([0, 0], [2, 0], 0.5) == 3.0

    def test_alpha_range(self):
        with pytest.raises(ValueError):
            pair_loss([0], [1], 1.5)

    @given(
        arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)),
        arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)),
        st.floats(0, 1),
    )
    def test_decomposition_and_symmetry(self, y, yh, alpha):
        l1 = sum(abs(a - b) for a, b in zip(y, yh))
        l2 = sum((a - b) ** 2 for a, b in zip(y, yh))
        value = pair_loss(y, yh, alpha)
        assert value == pytest.approx(alpha * l1 + (1 - alpha) * l2, rel=1e-12, abs=1e-9)
        assert value == pair_loss(yh, y, alpha)
        assert pair_loss(y, yh, 0.0) == pytest.approx(l2, rel=1e-12, abs=1e-12)
        assert pair_loss(y, yh, 1.0) == pytest.approx(l1, rel=1e-12, abs=1e-12)


class TestObjective:
    def test_regularizer_off_is_data_loss(self):
        rng = np.random.default_rng(0)
        data = random_pairs(rng, 6, 3, 2)
        theta = rng.normal(size=n_params(3, 4, 2))
        m = MapperModel.unpack(theta, 3, 4, 2)
        expected = sum(pair_loss(t, forward(m, x), 0.4) for x, t in zip(data.inputs, data.targets))
        value, _ = objective(theta, data, 0.4, 0.0, 0.0, 4)
        assert value == pytest.approx(expected, rel=1e-12)

    def test_exact_fit_with_l1(self):
        # theta = (0.1, 0, 0.1, 0.1): |theta|_1 = 0.3 and targets are produced by theta itself
        m = scalar_model(0.1, 0.0, 0.1, 0.1)
        x = np.array([[0.5], [-2.0], [3.0]])
        data = TrainingPairs(("a", "b", "c"), x, forward(m, x))
        value, _ = objective(m.pack(), data, 0.5, 1.0, 0.0, 1)
        assert value == pytest.approx(0.3, abs=1e-15)

    def test_l2_gradient_vanishes_at_zero(self):
        rng = np.random.default_rng(2)
        data = random_pairs(rng, 5, 2, 2)
        theta = np.zeros(n_params(2, 3, 2))
        _, g_reg = objective(theta, data, 0.0, 0.0, 0.7, 3)
        _, g_bare = objective(theta, data, 0.0, 0.0, 0.0, 3)
        np.testing.assert_array_equal(g_reg, g_bare)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        data = random_pairs(rng, 9, 3, 3)
        theta = rng.normal(size=n_params(3, 4, 3))
        perm = rng.permutation(9)
        v1, g1 = objective(theta, data, 0.5, 1e-3, 1e-3, 4)
        v2, g2 = objective(theta, data.take(perm), 0.5, 1e-3, 1e-3, 4)
        assert v1 == pytest.approx(v2, rel=1e-13)
        np.testing.assert_allclose(g1, g2, rtol=1e-12, atol=1e-12)

    def test_worker_count_is_bitwise_irrelevant(self):
        rng = np.random.default_rng(4)
        data = random_pairs(rng, 5 * BLOCK_SIZE + 3, 4, 4)
        theta = rng.normal(size=n_params(4, 6, 4))
        v1, g1 = objective(theta, data, 0.3, 1e-2, 1e-2, 6, workers=1)
        for w in (2, 3, 8):
            vw, gw = objective(theta, data, 0.3, 1e-2, 1e-2, 6, workers=w)
            assert vw == v1
            assert np.array_equal(gw, g1)

    def test_non_finite_names_block(self):
        rng = np.random.default_rng(5)
        data = random_pairs(rng, 3, 2, 2)
        theta = np.zeros(n_params(2, 3, 2))
        theta[7] = np.inf  # inside b1 (W1 holds 6 entries)
        with pytest.raises(NumericalError, match="b1"):
            objective(theta, data, 0.5, 0.0, 0.0, 3)

    def test_negative_lambda(self):
        data = random_pairs(np.random.default_rng(0), 2, 1, 1)
        with pytest.raises(ValueError):
            objective(np.zeros(n_params(1, 1, 1)), data, 0.5, -1.0, 0.0, 1)


class TestGradientCheck:
    @pytest.mark.parametrize("seed", range(5))
    def test_no_l1(self, seed):
        rng = np.random.default_rng(seed)
        data = random_pairs(rng, 6, 3, 3)
        assert gradient_check((3, 4, 3), data, 0.5, 0.0, 1e-3, seed) < 1e-6

    @pytest.mark.parametrize("seed", range(5))
    def test_with_l1(self, seed):
        rng = np.random.default_rng(10 + seed)
        data = random_pairs(rng, 5, 2, 4)
        assert gradient_check((2, 5, 4), data, 0.7, 1e-3, 0.0, seed) < 1e-6

    def test_single_pair_squared_loss(self):
        data = random_pairs(np.random.default_rng(7), 1, 4, 2)
        assert gradient_check((4, 3, 2), data, 0.0, 0.0, 0.0, 7) < 1e-6


class TestCheckpoint:
    def test_bitwise_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        m = MapperModel.unpack(rng.normal(size=n_params(3, 5, 2)) / 3.0, 3, 5, 2)
        save_checkpoint(m, tmp_path / "m.json")
        back = load_checkpoint(tmp_path / "m.json")
        assert back.dims == m.dims
        assert np.array_equal(back.pack(), m.pack())

    def test_pack_unpack(self):
        theta = np.arange(n_params(2, 3, 4), dtype=float)
        m = MapperModel.unpack(theta, 2, 3, 4)
        assert np.array_equal(m.pack(), theta)
        np.testing.assert_array_equal(m.W1, theta[:6].reshape(3, 2))
        np.testing.assert_array_equal(m.b2, theta[-4:])

    def test_rejects_unknown_order(self, tmp_path):
        save_checkpoint(MapperModel.zeros(1, 1, 1), tmp_path / "m.json")
        text = (tmp_path / "m.json").read_text().replace("W1:row-major", "W1:col-major")
        (tmp_path / "m.json").write_text(text)
        with pytest.raises(ValueError, match="order"):
            load_checkpoint(tmp_path / "m.json")
