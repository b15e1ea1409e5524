import itertools

import numpy as np
import pytest

from ebad.rbm import (
    BernoulliRbm,
    RbmParams,
    TrainConfig,
    cd_update,
    energy,
    exact_gradient,
    exact_log_likelihood,
    exact_model_moments,
    free_energy,
    gibbs_step,
    hidden_cond,
    init_params,
    log_partition_exact,
    reconstruct,
    train_rbm,
    visible_cond,
)


def small_params(m, k, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    return RbmParams(
        visible_bias=rng.normal(0, scale, m),
        hidden_bias=rng.normal(0, scale, k),
        weights=rng.normal(0, scale, (m, k)),
    )


def brute_force_log_z(params):
    """Direct sum over every joint (v, h) state."""
    m, k = params.weights.shape
    total = []
    for v_bits in itertools.product([0.0, 1.0], repeat=m):
        for h_bits in itertools.product([0.0, 1.0], repeat=k):
            v = np.array(v_bits)
            h = np.array(h_bits)
            total.append(-energy(v, h, params))
    total = np.array(total)
    peak = total.max()
    return peak + np.log(np.exp(total - peak).sum())


def test_energy_hand_value():
    params = RbmParams(
        visible_bias=np.array([1.0, 2.0]),
        hidden_bias=np.array([3.0]),
        weights=np.array([[4.0], [5.0]]),
    )
    v = np.array([1.0, 0.0])
    h = np.array([1.0])
    # -(1*1 + 2*0) - 3*1 - 1*4*1
    assert energy(v, h, params) == -8.0


def test_energy_zero_state_is_zero():
    params = small_params(3, 2)
    assert energy(np.zeros(3), np.zeros(2), params) == 0.0


def test_params_validation():
    with pytest.raises(ValueError):
        RbmParams(np.zeros(2), np.zeros(3), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        RbmParams(np.array([np.nan]), np.zeros(1), np.zeros((1, 1)))


def test_hidden_cond_neutral_is_half():
    params = RbmParams(np.zeros(4), np.zeros(2), np.zeros((4, 2)))
    np.testing.assert_array_equal(hidden_cond(np.ones(4), params), 0.5)


def test_hidden_cond_saturates_with_large_bias():
    params = RbmParams(np.zeros(2), np.array([30.0, -30.0]), np.zeros((2, 2)))
    probs = hidden_cond(np.zeros(2), params)
    assert probs[0] >= 1 - 1e-13
    assert probs[1] <= 1e-13


def test_conditionals_match_formulas(rng):
    params = small_params(4, 3, seed=1)
    v = rng.random((5, 4))
    h = rng.random((5, 3))
    np.testing.assert_allclose(
        hidden_cond(v, params),
        1 / (1 + np.exp(-(params.hidden_bias + v @ params.weights))),
        rtol=1e-12,
    )
    np.testing.assert_allclose(
        visible_cond(h, params),
        1 / (1 + np.exp(-(params.visible_bias + h @ params.weights.T))),
        rtol=1e-12,
    )


def test_gibbs_step_deterministic_with_saturated_units(rng):
    # huge hidden bias forces h=1, huge negative visible bias forces v=0
    params = RbmParams(np.full(3, -50.0), np.full(2, 50.0), np.zeros((3, 2)))
    v, h = gibbs_step(np.ones(3), params, rng)
    np.testing.assert_array_equal(h, 1.0)
    np.testing.assert_array_equal(v, 0.0)


def test_gibbs_step_hidden_statistics(rng):
    params = small_params(3, 2, seed=2)
    v0 = np.array([1.0, 0.0, 1.0])
    probs = hidden_cond(v0, params)
    draws = np.array([gibbs_step(v0, params, rng)[1] for _ in range(4000)])
    sigma = np.sqrt(probs * (1 - probs) / 4000)
    assert (np.abs(draws.mean(axis=0) - probs) < 4 * sigma + 1e-3).all()


def test_reconstruct_uses_probabilities_as_states():
    params = small_params(4, 2, seed=3)
    v = np.array([1.0, 0.0, 1.0, 1.0])
    v_r, h_r = reconstruct(v, params)
    np.testing.assert_allclose(h_r, hidden_cond(v, params), rtol=1e-14)
    np.testing.assert_allclose(v_r, visible_cond(h_r, params), rtol=1e-14)


def test_cd_update_moves_visible_bias_toward_data(rng):
    params = RbmParams(np.zeros(3), np.zeros(2), np.zeros((3, 2)))
    cfg = TrainConfig(epochs=1, learning_rate=0.5, cd_steps=1, batch_size=64)
    batch = np.ones((64, 3))
    new = cd_update(batch, params, cfg, rng)
    # data mean is 1, model mean is near 0.5, so the bias must rise
    assert (new.visible_bias > 0.1).all()


def test_cd_update_scales_linearly_with_learning_rate():
    params = small_params(4, 3, seed=4)
    batch = np.random.default_rng(5).integers(0, 2, (32, 4)).astype(float)
    small = cd_update(batch, params, TrainConfig(learning_rate=0.1), np.random.default_rng(9))
    big = cd_update(batch, params, TrainConfig(learning_rate=0.2), np.random.default_rng(9))
    np.testing.assert_allclose(
        big.weights - params.weights, 2 * (small.weights - params.weights), rtol=1e-12
    )


def test_cd_update_near_fixed_point_at_the_data_distribution(rng):
    # independent units: with weights 0 and matched bias the expected update vanishes
    params = RbmParams(np.array([1.0, -1.0]), np.zeros(2), np.zeros((2, 2)))
    probs = 1 / (1 + np.exp(-params.visible_bias))
    batch = (rng.random((8000, 2)) < probs).astype(float)
    cfg = TrainConfig(learning_rate=1.0)
    new = cd_update(batch, params, cfg, rng)
    assert np.abs(new.visible_bias - params.visible_bias).max() < 0.05
    assert np.abs(new.weights - params.weights).max() < 0.05


def test_cd_update_rejects_bad_batches(rng):
    params = small_params(3, 2)
    with pytest.raises(ValueError):
        cd_update(np.empty((0, 3)), params, TrainConfig(), rng)
    with pytest.raises(ValueError):
        cd_update(np.ones((4, 2)), params, TrainConfig(), rng)


def test_train_rbm_deterministic_per_seed(rng):
    data = np.random.default_rng(11).integers(0, 2, (40, 5)).astype(float)
    cfg = TrainConfig(epochs=3, batch_size=16, seed=2)
    a = train_rbm(data, 3, cfg)
    b = train_rbm(data, 3, cfg)
    np.testing.assert_array_equal(a.weights, b.weights)
    c = train_rbm(data, 3, TrainConfig(epochs=3, batch_size=16, seed=3))
    assert np.abs(a.weights - c.weights).max() > 0


def test_log_partition_zero_params_counts_states():
    params = RbmParams(np.zeros(4), np.zeros(3), np.zeros((4, 3)))
    assert log_partition_exact(params) == pytest.approx(7 * np.log(2), rel=1e-12)


def test_log_partition_single_pair_hand_value():
    # Z = 3 + e^w for a = b = 0 and one unit each
    params = RbmParams(np.zeros(1), np.zeros(1), np.array([[1.0]]))
    assert log_partition_exact(params) == pytest.approx(np.log(3 + np.e), rel=1e-12)


def test_log_partition_matches_brute_force():
    for seed in range(5):
        params = small_params(3, 4, seed=seed, scale=1.0)
        assert log_partition_exact(params) == pytest.approx(
            brute_force_log_z(params), rel=1e-11
        )


def test_log_partition_enumeration_side_is_symmetric():
    params = small_params(2, 6, seed=8, scale=1.0)
    flipped = RbmParams(params.hidden_bias, params.visible_bias, params.weights.T)
    assert log_partition_exact(params) == pytest.approx(
        log_partition_exact(flipped), rel=1e-12
    )


def test_log_partition_guards_big_models():
    params = RbmParams(np.zeros(30), np.zeros(30), np.zeros((30, 30)))
    with pytest.raises(ValueError):
        log_partition_exact(params)


def test_free_energy_marginalizes_hidden_layer():
    params = small_params(3, 3, seed=6, scale=1.0)
    v = np.array([1.0, 0.0, 1.0])
    direct = []
    for h_bits in itertools.product([0.0, 1.0], repeat=3):
        direct.append(-energy(v, np.array(h_bits), params))
    direct = np.array(direct)
    peak = direct.max()
    log_sum = peak + np.log(np.exp(direct - peak).sum())
    assert -free_energy(v, params) == pytest.approx(log_sum, rel=1e-12)


def test_exact_log_likelihood_matches_brute_force():
    params = small_params(3, 2, seed=7, scale=1.0)
    data = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
    log_z = brute_force_log_z(params)
    expected = np.mean([-free_energy(v, params) - log_z for v in data])
    assert exact_log_likelihood(data, params) == pytest.approx(expected, rel=1e-11)


def test_exact_model_moments_match_enumeration():
    params = small_params(3, 2, seed=9, scale=1.0)
    log_z = brute_force_log_z(params)
    ev = np.zeros(3)
    eh = np.zeros(2)
    evh = np.zeros((3, 2))
    for v_bits in itertools.product([0.0, 1.0], repeat=3):
        for h_bits in itertools.product([0.0, 1.0], repeat=2):
            v = np.array(v_bits)
            h = np.array(h_bits)
            p = np.exp(-energy(v, h, params) - log_z)
            ev += p * v
            eh += p * h
            evh += p * np.outer(v, h)
    got_v, got_h, got_vh = exact_model_moments(params)
    np.testing.assert_allclose(got_v, ev, rtol=1e-10)
    np.testing.assert_allclose(got_h, eh, rtol=1e-10)
    np.testing.assert_allclose(got_vh, evh, rtol=1e-10)


def test_exact_gradient_matches_finite_differences():
    params = small_params(4, 3, seed=10, scale=0.8)
    data = np.random.default_rng(12).integers(0, 2, (6, 4)).astype(float)
    da, db, dw = exact_gradient(data, params)
    eps = 1e-5

    def ll(p):
        return exact_log_likelihood(data, p)

    for i in range(4):
        shift = np.zeros(4)
        shift[i] = eps
        up = RbmParams(params.visible_bias + shift, params.hidden_bias, params.weights)
        down = RbmParams(params.visible_bias - shift, params.hidden_bias, params.weights)
        assert da[i] == pytest.approx((ll(up) - ll(down)) / (2 * eps), abs=1e-7)
    for j in range(3):
        shift = np.zeros(3)
        shift[j] = eps
        up = RbmParams(params.visible_bias, params.hidden_bias + shift, params.weights)
        down = RbmParams(params.visible_bias, params.hidden_bias - shift, params.weights)
        assert db[j] == pytest.approx((ll(up) - ll(down)) / (2 * eps), abs=1e-7)
    shift = np.zeros((4, 3))
    shift[2, 1] = eps
    up = RbmParams(params.visible_bias, params.hidden_bias, params.weights + shift)
    down = RbmParams(params.visible_bias, params.hidden_bias, params.weights - shift)
    assert dw[2, 1] == pytest.approx((ll(up) - ll(down)) / (2 * eps), abs=1e-7)


def test_training_increases_exact_likelihood():
    rng = np.random.default_rng(21)
    prototypes = np.array([[1, 1, 1, 0, 0, 0], [0, 0, 0, 1, 1, 1]], dtype=float)
    data = prototypes[rng.integers(0, 2, 80)]
    flips = rng.random(data.shape) < 0.05
    data = np.abs(data - flips)
    start = init_params(6, 2, np.random.default_rng(0))
    before = exact_log_likelihood(data, start)
    cfg = TrainConfig(epochs=150, learning_rate=0.1, batch_size=40, seed=0)
    trained = train_rbm(data, 2, cfg, init=start)
    after = exact_log_likelihood(data, trained)
    assert after > before + 0.3


def test_init_params_shapes_and_scale():
    params = init_params(5, 3, np.random.default_rng(0), weight_scale=0.01)
    assert params.visible_bias.shape == (5,)
    assert params.hidden_bias.shape == (3,)
    np.testing.assert_array_equal(params.visible_bias, 0)
    np.testing.assert_array_equal(params.hidden_bias, 0)
    assert 0 < np.abs(params.weights).max() < 0.1


class TestBernoulliRbmEstimator:
    def make_data(self):
        rng = np.random.default_rng(31)
        return rng.integers(0, 2, (50, 6)).astype(float)

    def test_fit_transform_shapes(self):
        model = BernoulliRbm(n_hidden=3, epochs=4, batch_size=25, random_state=0)
        data = self.make_data()
        hidden = model.fit(data).transform(data)
        assert hidden.shape == (50, 3)
        assert ((hidden >= 0) & (hidden <= 1)).all()
        assert model.params_.weights.shape == (6, 3)

    def test_reconstruction_errors_nonnegative(self):
        model = BernoulliRbm(n_hidden=3, epochs=4, batch_size=25, random_state=0)
        data = self.make_data()
        errors = model.fit(data).reconstruction_errors(data)
        assert errors.shape == (50,)
        assert (errors >= 0).all()

    def test_get_params_round_trip(self):
        model = BernoulliRbm(n_hidden=7, epochs=2)
        clone = BernoulliRbm(**model.get_params())
        assert clone.get_params() == model.get_params()

    def test_requires_fit(self):
        with pytest.raises(Exception):
            BernoulliRbm().transform(np.zeros((2, 4)))

    def test_rejects_out_of_range_values(self):
        model = BernoulliRbm(n_hidden=2, epochs=1)
        with pytest.raises(ValueError):
            model.fit(np.full((4, 3), 1.5))
