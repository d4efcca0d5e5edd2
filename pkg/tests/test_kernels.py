import math

import numpy as np
import pytest

from embedadapt import _kernels
from embedadapt._kernels import fallback


def reference_adam(param, grad, m, v, lr, b1, b2, eps, step):
    """Scalar-loop reference, independent of both backends."""
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    for i in range(param.size):
        g = grad[i]
        m[i] = b1 * m[i] + (1.0 - b1) * g
        v[i] = b2 * v[i] + (1.0 - b2) * g * g
        param[i] -= lr * (m[i] / bc1) / (math.sqrt(v[i] / bc2) + eps)


def run_steps(update, n=257, steps=7, seed=0):
    rng = np.random.default_rng(seed)
    param = rng.standard_normal(n)
    m = np.zeros(n)
    v = np.zeros(n)
    for step in range(1, steps + 1):
        grad = rng.standard_normal(n)
        update(param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, step)
    return param, m, v


def test_fallback_matches_scalar_reference():
    got = run_steps(fallback.adam_update)
    want = run_steps(reference_adam)
    for a, b in zip(got, want):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_selected_backend_matches_scalar_reference():
    got = run_steps(_kernels.adam_update)
    want = run_steps(reference_adam)
    for a, b in zip(got, want):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


@pytest.mark.skipif(_kernels.BACKEND != "compiled", reason="extension not built")
def test_compiled_matches_fallback():
    got = run_steps(_kernels.adam_update, n=1024, steps=11, seed=3)
    want = run_steps(fallback.adam_update, n=1024, steps=11, seed=3)
    for a, b in zip(got, want):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-15)


def test_first_step_is_full_bias_corrected():
    # at step 1 the update direction is lr * sign(g) up to eps
    param = np.zeros(3)
    grad = np.array([1.0, -2.0, 0.5])
    m = np.zeros(3)
    v = np.zeros(3)
    _kernels.adam_update(param, grad, m, v, 1e-3, 0.9, 0.999, 0.0, 1)
    assert np.allclose(param, -1e-3 * np.sign(grad), atol=1e-12)
