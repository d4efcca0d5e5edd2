# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused Adam update kernel.

Single pass over the parameter vector; avoids the temporaries the numpy
fallback allocates on every optimizer step.
"""

from libc.math cimport sqrt, pow


def adam_update(double[::1] param, double[::1] grad, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, long step):
    """One bias-corrected Adam update, in place (flat float64 views)."""
    cdef Py_ssize_t i, n = param.shape[0]
    cdef double bc1 = 1.0 - pow(beta1, step)
    cdef double bc2 = 1.0 - pow(beta2, step)
    cdef double g
    for i in range(n):
        g = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g)
        param[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
