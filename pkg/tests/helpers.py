"""Shared test harnesses built on the package and the oracles."""

import numpy as np

from chexhier.model import Architecture, init_params, loss_and_gradients
from oracles import central_differences


def gradient_check(seed, step=1e-5, floor=1e-6):
    """Worst per-coordinate relative error between analytic and central
    finite-difference gradients on a random instance."""
    rng = np.random.default_rng(seed)
    d, L, B = (int(v) for v in rng.integers(1, 6, size=3))
    hidden = tuple(int(v) for v in rng.integers(1, 6, size=rng.integers(0, 3)))
    m = init_params(d, L, Architecture(hidden), rng)
    for a in m.arrays():
        a[...] = rng.standard_normal(a.shape)
    X = rng.standard_normal((B, d))
    T = rng.random((B, L))
    M = (rng.random((B, L)) < 0.8).astype(float)
    _, grads = loss_and_gradients(m, X, T, M)
    numeric = central_differences(lambda: loss_and_gradients(m, X, T, M)[0], m.arrays(), step)
    worst = 0.0
    for g, n in zip(grads, numeric):
        rel = np.abs(g - n) / np.maximum(np.maximum(np.abs(g), np.abs(n)), floor)
        worst = max(worst, float(rel.max(initial=0.0)))
    return worst
