"""Numeric kernels for the training loop.

Two implementations of every hot kernel: a numba @njit version and a pure
numpy version. The numpy path is selected by setting DIMASR_DISABLE_NUMBA=1
before import (or automatically when numba is unavailable). Both paths use
float64 throughout and are deterministic; a given process always runs one
path, so repeated runs produce bit-identical results.

See benchmarks/bench_kernels.py for a speed comparison of the two paths.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENABLED = os.environ.get("DIMASR_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

if NUMBA_ENABLED:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False


# ---------------------------------------------------------------------------
# pure numpy implementations

def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _head_forward_np(H, W1, b1, w2, b2):
    """Batch forward through one regression head (no dropout).

    H: (n, d) inputs; W1: (hidden, d); b1: (hidden,); w2: (hidden,); b2: scalar.
    Returns (A1, Z2): tanh hidden activations (n, hidden) and raw outputs (n,).
    """
    A1 = np.tanh(H @ W1.T + b1)
    Z2 = A1 @ w2 + b2
    return A1, Z2


def _head_backward_np(dZ2, H, A1, W1, w2):
    """Gradients of one head given dL/dZ2.

    Returns (dW1, db1, dw2, db2, dH).
    """
    dw2 = A1.T @ dZ2
    db2 = float(np.sum(dZ2))
    dA1 = np.outer(dZ2, w2)
    dZ1 = dA1 * (1.0 - A1 * A1)
    dW1 = dZ1.T @ H
    db1 = dZ1.sum(axis=0)
    dH = dZ1 @ W1
    return dW1, db1, dw2, db2, dH


def _adamw_update_np(p, g, m, v, lr, beta1, beta2, eps, weight_decay, t):
    """In-place decoupled-weight-decay Adam step on flat float64 arrays."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p)


def _sq_err_sum_np(pred_v, pred_a, gold_v, gold_a):
    dv = pred_v - gold_v
    da = pred_a - gold_a
    return float(np.sum(dv * dv) + np.sum(da * da))


# ---------------------------------------------------------------------------
# numba implementations

if NUMBA_ENABLED:

    @njit(cache=True)
    def _sigmoid_nb(x):
        out = np.empty_like(x)
        for i in range(x.size):
            xi = x.flat[i]
            if xi >= 0.0:
                out.flat[i] = 1.0 / (1.0 + np.exp(-xi))
            else:
                e = np.exp(xi)
                out.flat[i] = e / (1.0 + e)
        return out

    @njit(cache=True)
    def _head_forward_nb(H, W1, b1, w2, b2):
        # matmuls go through BLAS; bias/tanh/output passes are fused loops
        n = H.shape[0]
        hidden = W1.shape[0]
        A1 = np.dot(H, W1.T)
        Z2 = np.empty(n)
        for i in range(n):
            z2 = b2
            for j in range(hidden):
                a = np.tanh(A1[i, j] + b1[j])
                A1[i, j] = a
                z2 += w2[j] * a
            Z2[i] = z2
        return A1, Z2

    @njit(cache=True)
    def _head_backward_nb(dZ2, H, A1, W1, w2):
        n = H.shape[0]
        hidden = W1.shape[0]
        dw2 = np.zeros(hidden)
        db1 = np.zeros(hidden)
        db2 = 0.0
        dZ1 = np.empty((n, hidden))
        for i in range(n):
            g2 = dZ2[i]
            db2 += g2
            for j in range(hidden):
                a = A1[i, j]
                dw2[j] += a * g2
                dz1 = g2 * w2[j] * (1.0 - a * a)
                dZ1[i, j] = dz1
                db1[j] += dz1
        dW1 = np.dot(dZ1.T, H)
        dH = np.dot(dZ1, W1)
        return dW1, db1, dw2, db2, dH

    @njit(cache=True)
    def _adamw_update_nb(p, g, m, v, lr, beta1, beta2, eps, weight_decay, t):
        c1 = 1.0 - beta1**t
        c2 = 1.0 - beta2**t
        for i in range(p.size):
            gi = g.flat[i]
            m.flat[i] = beta1 * m.flat[i] + (1.0 - beta1) * gi
            v.flat[i] = beta2 * v.flat[i] + (1.0 - beta2) * gi * gi
            mhat = m.flat[i] / c1
            vhat = v.flat[i] / c2
            p.flat[i] -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * p.flat[i])

    @njit(cache=True)
    def _sq_err_sum_nb(pred_v, pred_a, gold_v, gold_a):
        total = 0.0
        for i in range(pred_v.size):
            dv = pred_v[i] - gold_v[i]
            da = pred_a[i] - gold_a[i]
            total += dv * dv + da * da
        return total


if NUMBA_ENABLED:
    sigmoid = _sigmoid_nb
    head_forward = _head_forward_nb
    head_backward = _head_backward_nb
    adamw_update = _adamw_update_nb
    sq_err_sum = _sq_err_sum_nb
else:
    sigmoid = _sigmoid_np
    head_forward = _head_forward_np
    head_backward = _head_backward_np
    adamw_update = _adamw_update_np
    sq_err_sum = _sq_err_sum_np


def sigmoid_scalar(x: float) -> float:
    if x >= 0.0:
        return 1.0 / (1.0 + float(np.exp(-x)))
    e = float(np.exp(x))
    return e / (1.0 + e)


def global_grad_norm(grads) -> float:
    """L2 norm over a collection of gradient arrays."""
    total = 0.0
    for g in grads:
        total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return float(np.sqrt(total))


def clip_gradients(grads, max_norm: float) -> float:
    """Scale gradient arrays in place so the global norm is <= max_norm.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm
