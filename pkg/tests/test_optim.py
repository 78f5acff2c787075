import numpy as np
import pytest

from partial_screen.optim import AdamW, clip_grad_norm, global_grad_norm
from partial_screen.tensor import Tensor


def test_adamw_matches_closed_form_on_a_quadratic():
    lr, wd, b1, b2, eps = 0.1, 0.01, 0.9, 0.999, 1e-8
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = AdamW([p], lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)
    x, m, v = 2.0, 0.0, 0.0
    for step in range(1, 6):
        g = 2 * x  # d/dx x^2
        p.grad = np.array([2 * p.data[0]])
        opt.step()
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x * (1 - lr * wd)
        x = x - lr * (m / (1 - b1**step)) / (np.sqrt(v / (1 - b2**step)) + eps)
        assert p.data[0] == pytest.approx(x, abs=1e-8)


def test_zero_learning_rate_leaves_parameters_bitwise():
    p = Tensor(np.array([0.3, -1.2]), requires_grad=True)
    before = p.data.copy()
    opt = AdamW([p], lr=0.0, weight_decay=0.5)
    p.grad = np.array([1.0, 2.0])
    opt.step()
    np.testing.assert_array_equal(p.data, before)


def test_parameters_without_gradients_are_skipped():
    a, b = Tensor(np.ones(2), requires_grad=True), Tensor(np.ones(2), requires_grad=True)
    opt = AdamW([a, b], lr=0.1, weight_decay=0.1)
    a.grad = np.ones(2)
    opt.step()
    np.testing.assert_array_equal(b.data, 1.0)
    assert np.all(a.data < 1.0)


def test_clipping_scales_to_the_global_norm():
    a, b = Tensor(np.zeros(2)), Tensor(np.zeros(1))
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == pytest.approx(5.0)
    assert global_grad_norm([a, b]) == pytest.approx(1.0)
    np.testing.assert_allclose(a.grad, [0.6, 0.0])
    a.grad = np.array([0.1, 0.0])
    b.grad = np.array([0.0])
    clip_grad_norm([a, b], 1.0)
    np.testing.assert_allclose(a.grad, [0.1, 0.0])


def test_state_roundtrip():
    p = Tensor(np.ones(3), requires_grad=True)
    opt = AdamW([p], lr=0.1)
    p.grad = np.ones(3)
    opt.step()
    other = AdamW([Tensor(np.ones(3))], lr=0.1)
    other.load_state_arrays(opt.state_arrays(), opt.step_count)
    assert other.step_count == 1
    np.testing.assert_array_equal(other.m[0], opt.m[0])
    with pytest.raises(ValueError):
        other.load_state_arrays([np.ones(3)], 1)
