"""Stage discount profiles: weights, gradients, effective horizon."""

import numpy as np
import pytest

from foregame import DiscountSpec, discount_weight, effective_horizon
from foregame.discounting import stage_weight_gradients, stage_weights
from foregame.errors import GameConfigError, StageIndexError


def test_weights_match_power_formula():
    rng = np.random.default_rng(0)
    for _ in range(20):
        gamma = rng.uniform(0.0, 1.5)
        T = int(rng.integers(1, 40))
        w = stage_weights(gamma, T)
        expected = gamma ** np.arange(T)
        np.testing.assert_allclose(w, expected, rtol=1e-13, atol=0.0)


def test_weight_at_origin_is_one_even_for_zero_gamma():
    w = stage_weights(0.0, 5)
    np.testing.assert_array_equal(w, [1.0, 0.0, 0.0, 0.0, 0.0])


def test_undiscounted_profile_is_all_ones():
    np.testing.assert_array_equal(stage_weights(1.0, 7), np.ones(7))


def test_gamma_above_one_grows():
    w = stage_weights(1.1, 4)
    np.testing.assert_allclose(w, [1.0, 1.1, 1.21, 1.331], rtol=1e-12)


def test_discount_weight_respects_time_origin_labels():
    spec0 = DiscountSpec(gamma=0.5, horizon=4, time_origin=0)
    spec1 = DiscountSpec(gamma=0.5, horizon=4, time_origin=1)
    # Same physical profile, shifted labels.
    for offset in range(4):
        assert discount_weight(spec0, offset) == discount_weight(spec1, offset + 1)
    assert discount_weight(spec1, 1) == 1.0
    assert discount_weight(spec1, 3) == 0.25


def test_discount_weight_out_of_range_raises():
    spec = DiscountSpec(gamma=0.9, horizon=3, time_origin=1)
    with pytest.raises(StageIndexError):
        discount_weight(spec, 0)
    with pytest.raises(StageIndexError):
        discount_weight(spec, 4)


def test_spec_validation():
    with pytest.raises(GameConfigError):
        DiscountSpec(gamma=-0.1, horizon=5)
    with pytest.raises(GameConfigError):
        DiscountSpec(gamma=0.5, horizon=0)
    with pytest.raises(GameConfigError):
        DiscountSpec(gamma=0.5, horizon=5, time_origin=2)


def test_gradients_match_central_difference():
    h = 1e-6
    for gamma in (0.3, 0.7, 1.0, 1.2):
        g = stage_weight_gradients(gamma, 12)
        fd = (stage_weights(gamma + h, 12) - stage_weights(gamma - h, 12)) / (2 * h)
        np.testing.assert_allclose(g, fd, rtol=1e-7, atol=1e-9)


def test_gradient_of_origin_stage_is_zero():
    # The weight at the origin is constant 1, including at gamma = 0 where the
    # naive formula s * gamma**(s-1) would be ill-defined for s = 1.
    g = stage_weight_gradients(0.0, 3)
    np.testing.assert_array_equal(g, [0.0, 1.0, 0.0])
    assert stage_weight_gradients(0.9, 1)[0] == 0.0


def test_effective_horizon_hand_values():
    # 0.5**7 = 0.0078125 < 0.01 <= 0.5**6 = 0.015625
    assert effective_horizon(0.5, 0.01, 50) == 7
    assert effective_horizon(0.5, 0.01, 5) == 5  # capped
    assert effective_horizon(1.0, 0.5, 30) == 30  # no decay
    assert effective_horizon(1.3, 0.5, 30) == 30
    assert effective_horizon(0.0, 0.5, 30) == 1  # myopic


def test_effective_horizon_validates_tol():
    with pytest.raises(GameConfigError):
        effective_horizon(0.5, 0.0, 10)
    with pytest.raises(GameConfigError):
        effective_horizon(0.5, 1.0, 10)
