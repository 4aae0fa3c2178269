"""Both kernel paths must agree: compare the selected implementation against
the pure-numpy reference directly."""

import numpy as np
import pytest

from dimasr import kernels
from dimasr.kernels import (
    _adamw_update_np,
    _head_backward_np,
    _head_forward_np,
    _sigmoid_np,
    _sq_err_sum_np,
    clip_gradients,
    global_grad_norm,
)

rng = np.random.default_rng(123)


def test_selected_path_reported():
    assert isinstance(kernels.NUMBA_ENABLED, bool)


def test_sigmoid_matches_reference():
    x = rng.normal(scale=10, size=200)
    np.testing.assert_allclose(kernels.sigmoid(x), _sigmoid_np(x), rtol=0, atol=1e-14)


def test_sigmoid_extremes_stable():
    x = np.array([-800.0, 800.0])
    y = kernels.sigmoid(x)
    assert y[0] == pytest.approx(0.0) and y[1] == pytest.approx(1.0)
    assert np.all(np.isfinite(y))


def test_head_forward_backward_match_reference():
    n, d, hidden = 9, 12, 6
    H = rng.normal(size=(n, d))
    W1 = rng.normal(size=(hidden, d))
    b1 = rng.normal(size=hidden)
    w2 = rng.normal(size=hidden)
    b2 = float(rng.normal())
    A1, Z2 = kernels.head_forward(H, W1, b1, w2, b2)
    A1r, Z2r = _head_forward_np(H, W1, b1, w2, b2)
    np.testing.assert_allclose(A1, A1r, atol=1e-12)
    np.testing.assert_allclose(Z2, Z2r, atol=1e-12)

    dZ2 = rng.normal(size=n)
    got = kernels.head_backward(dZ2, H, A1, W1, w2)
    ref = _head_backward_np(dZ2, H, A1r, W1, w2)
    for g, r in zip(got, ref):
        np.testing.assert_allclose(g, r, atol=1e-10)


def test_adamw_matches_reference():
    p1 = rng.normal(size=50)
    p2 = p1.copy()
    g = rng.normal(size=50)
    m1, v1 = np.zeros(50), np.zeros(50)
    m2, v2 = np.zeros(50), np.zeros(50)
    for t in range(1, 6):
        kernels.adamw_update(p1, g, m1, v1, 1e-3, 0.9, 0.999, 1e-8, 0.01, t)
        _adamw_update_np(p2, g, m2, v2, 1e-3, 0.9, 0.999, 1e-8, 0.01, t)
    np.testing.assert_allclose(p1, p2, atol=1e-14)


def test_sq_err_sum_matches_reference():
    a, b, c, d = (rng.uniform(1, 9, size=40) for _ in range(4))
    assert kernels.sq_err_sum(a, b, c, d) == pytest.approx(_sq_err_sum_np(a, b, c, d), abs=1e-10)


def test_clip_gradients():
    grads = [rng.normal(size=(4, 4)), rng.normal(size=7)]
    pre = global_grad_norm(grads)
    returned = clip_gradients(grads, 1.0)
    assert returned == pytest.approx(pre)
    assert global_grad_norm(grads) <= 1.0 + 1e-6


def test_clip_noop_when_small():
    grads = [np.full(3, 1e-4)]
    clip_gradients(grads, 1.0)
    np.testing.assert_allclose(grads[0], 1e-4)
