"""Adam update tests against hand-evaluated recurrences."""

import numpy as np
import pytest

from fewshot.autodiff import Parameter
from fewshot.optim import AdamState, adam_step


def test_first_step_magnitude():
    # t=1: m_hat = g, v_hat = g^2, so delta = -lr * g / (|g| + eps) ~ -lr * sign(g)
    p = Parameter(np.array([1.0]), "p")
    state = AdamState(learning_rate=1e-4)
    adam_step([p], {"p": np.array([0.1])}, state)
    delta = p.value[0] - 1.0
    assert abs(delta + 1e-4) < 1e-9
    assert state.step_count == 1


def test_exact_first_step_recurrence():
    g = 0.37
    lr, b1, b2, eps = 1e-4, 0.9, 0.999, 1e-8
    p = Parameter(np.array([2.0]), "p")
    adam_step([p], {"p": np.array([g])}, AdamState(learning_rate=lr))
    m_hat = (1 - b1) * g / (1 - b1)
    v_hat = (1 - b2) * g * g / (1 - b2)
    expected = 2.0 - lr * m_hat / (np.sqrt(v_hat) + eps)
    np.testing.assert_allclose(p.value[0], expected, rtol=1e-12)


def test_zero_gradient_leaves_params_unchanged():
    p = Parameter(np.array([3.0, -4.0]), "p")
    before = p.value.copy()
    adam_step([p], {"p": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(p.value, before)


def test_update_magnitude_bounded_by_lr():
    # constant gradient: m_hat = g, v_hat = g^2, |delta| <= lr for every step
    lr = 1e-3
    p = Parameter(np.array([0.0]), "p")
    state = AdamState(learning_rate=lr)
    for _ in range(2):
        before = p.value.copy()
        adam_step([p], {"p": np.array([0.5])}, state)
        assert abs(p.value[0] - before[0]) <= lr * (1 + 1e-7)


def test_shape_mismatch_rejected():
    p = Parameter(np.zeros(3), "p")
    with pytest.raises(ValueError, match="shape"):
        adam_step([p], {"p": np.zeros(2)}, AdamState())


def test_moment_shapes_follow_parameters():
    p = Parameter(np.zeros((2, 3)), "p")
    state = AdamState()
    adam_step([p], {"p": np.ones((2, 3))}, state)
    assert state.m["p"].shape == (2, 3)
    assert state.v["p"].shape == (2, 3)


def test_bias_correction_two_steps():
    # second step with the same gradient, against the written-out recurrences
    g, lr, b1, b2, eps = 0.2, 1e-2, 0.9, 0.999, 1e-8
    p = Parameter(np.array([0.0]), "p")
    state = AdamState(learning_rate=lr)
    adam_step([p], {"p": np.array([g])}, state)
    adam_step([p], {"p": np.array([g])}, state)
    m2 = (1 - b1) * g * (b1 + 1)
    v2 = (1 - b2) * g * g * (b2 + 1)
    m_hat = m2 / (1 - b1 ** 2)
    v_hat = v2 / (1 - b2 ** 2)
    step1 = -lr * g / (np.sqrt(g * g) + eps)
    step2 = -lr * m_hat / (np.sqrt(v_hat) + eps)
    np.testing.assert_allclose(p.value[0], step1 + step2, rtol=1e-10)
