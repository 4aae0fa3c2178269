"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run twice to compare the two paths end to end:

    python3 benchmarks/bench_kernels.py
    DIMASR_DISABLE_NUMBA=1 python3 benchmarks/bench_kernels.py

Within one process the script also times the numpy reference functions
directly, so a single run shows the per-kernel speedup.
"""

import os
import time

import numpy as np

from dimasr import kernels
from dimasr.kernels import (
    _adamw_update_np,
    _head_backward_np,
    _head_forward_np,
    _sigmoid_np,
    _sq_err_sum_np,
)

REPEATS = 200


def bench(label, selected, reference, warmup=True):
    if warmup:
        selected()  # trigger JIT compilation outside the timed region
    t0 = time.perf_counter()
    for _ in range(REPEATS):
        selected()
    t_sel = (time.perf_counter() - t0) / REPEATS
    t0 = time.perf_counter()
    for _ in range(REPEATS):
        reference()
    t_ref = (time.perf_counter() - t0) / REPEATS
    speedup = t_ref / t_sel if t_sel > 0 else float("inf")
    print(f"{label:<22} selected {t_sel * 1e6:9.1f} us   numpy {t_ref * 1e6:9.1f} us"
          f"   speedup x{speedup:.2f}")


def main():
    path = "numba" if kernels.NUMBA_ENABLED else "numpy fallback"
    print(f"selected kernel path: {path}")

    rng = np.random.default_rng(0)
    n, d = 64, 768  # one full-scale batch through one head
    hidden = d // 2
    H = rng.normal(size=(n, d))
    W1 = rng.normal(size=(hidden, d)) * 0.02
    b1 = np.zeros(hidden)
    w2 = rng.normal(size=hidden) * 0.02
    b2 = 0.0
    x = rng.normal(size=100_000)
    dZ2 = rng.normal(size=n)
    A1, _ = _head_forward_np(H, W1, b1, w2, b2)

    p = rng.normal(size=hidden * d)
    g = rng.normal(size=hidden * d)
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    pv, pa, gv, ga = (rng.uniform(1, 9, size=5000) for _ in range(4))

    # desk-scale batch (tiny stand-in encoder)
    ns, ds = 16, 32
    Hs = rng.normal(size=(ns, ds))
    W1s = rng.normal(size=(ds // 2, ds)) * 0.02
    b1s = np.zeros(ds // 2)
    w2s = rng.normal(size=ds // 2) * 0.02
    dZ2s = rng.normal(size=ns)
    A1s, _ = _head_forward_np(Hs, W1s, b1s, w2s, 0.0)

    bench("sigmoid (100k)",
          lambda: kernels.sigmoid(x),
          lambda: _sigmoid_np(x))
    bench("head_forward 16x32",
          lambda: kernels.head_forward(Hs, W1s, b1s, w2s, 0.0),
          lambda: _head_forward_np(Hs, W1s, b1s, w2s, 0.0))
    bench("head_backward 16x32",
          lambda: kernels.head_backward(dZ2s, Hs, A1s, W1s, w2s),
          lambda: _head_backward_np(dZ2s, Hs, A1s, W1s, w2s))
    bench("head_forward 64x768",
          lambda: kernels.head_forward(H, W1, b1, w2, b2),
          lambda: _head_forward_np(H, W1, b1, w2, b2))
    bench("head_backward 64x768",
          lambda: kernels.head_backward(dZ2, H, A1, W1, w2),
          lambda: _head_backward_np(dZ2, H, A1, W1, w2))
    bench("adamw_update 295k",
          lambda: kernels.adamw_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.01, 1),
          lambda: _adamw_update_np(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.01, 1))
    bench("sq_err_sum 5k",
          lambda: kernels.sq_err_sum(pv, pa, gv, ga),
          lambda: _sq_err_sum_np(pv, pa, gv, ga))


if __name__ == "__main__":
    main()
