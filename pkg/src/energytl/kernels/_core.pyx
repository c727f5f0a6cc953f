#cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementations of the hot numeric kernels.

Same contracts as ``_py.py``; selected automatically at import when built.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh

cnp.import_array()

BACKEND_NAME = "compiled"

cdef double GELU_C = sqrt(2.0 / 3.141592653589793)


def matmul(a, b):
    """Matrix product of 2-D arrays or stacks of matrices (3-D, equal batch).

    Delegates to numpy's BLAS-backed matmul: hand-rolled loops lose to
    BLAS at every size the models touch (see benchmarks/bench_kernels.py),
    so the compiled core keeps only the fused kernels below.
    """
    return np.matmul(a, b)


def softmax_last(x):
    """Row-wise softmax of a 2-D array, stabilized by max subtraction.

    numpy's vectorized exp beats a scalar libm loop here, so this stays
    on the numpy path; the fused kernels below are where compilation
    pays off.
    """
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_last(x, double eps):
    """Normalize rows of a 2-D array to mean 0, variance 1.

    Returns ``(xhat, inv_std)``; ``inv_std`` is reused by the backward pass.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] xv = x
    out = np.empty_like(x)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t rows = xv.shape[0], cols = xv.shape[1]
    inv_std = np.empty(rows, dtype=np.float64)
    cdef double[::1] sv = inv_std
    cdef Py_ssize_t i, j
    cdef double mean, var, d, s
    for i in range(rows):
        mean = 0.0
        for j in range(cols):
            mean += xv[i, j]
        mean /= cols
        var = 0.0
        for j in range(cols):
            d = xv[i, j] - mean
            var += d * d
        var /= cols
        s = 1.0 / sqrt(var + eps)
        sv[i] = s
        for j in range(cols):
            ov[i, j] = (xv[i, j] - mean) * s
    return out, inv_std


def gelu(x):
    """GELU activation (tanh form), elementwise on a 1-D array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] xv = x
    out = np.empty_like(x)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v
    for i in range(n):
        v = xv[i]
        ov[i] = 0.5 * v * (1.0 + tanh(GELU_C * (v + 0.044715 * v * v * v)))
    return out


def gelu_grad(x):
    """Derivative of the tanh-form GELU, elementwise on a 1-D array."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] xv = x
    out = np.empty_like(x)
    cdef double[::1] ov = out
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double v, t, dinner
    for i in range(n):
        v = xv[i]
        t = tanh(GELU_C * (v + 0.044715 * v * v * v))
        dinner = GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        ov[i] = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * dinner
    return out


def adam_step(param, grad, m, v, long t, double lr, double beta1, double beta2, double eps):
    """One in-place Adam update on flat float64 arrays.

    ``t`` is the 1-based step count used for bias correction.
    """
    cdef double[::1] pv = param
    cdef double[::1] gv = grad
    cdef double[::1] mv = m
    cdef double[::1] vv = v
    cdef Py_ssize_t i, n = pv.shape[0]
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef double g
    for i in range(n):
        g = gv[i]
        mv[i] = beta1 * mv[i] + (1.0 - beta1) * g
        vv[i] = beta2 * vv[i] + (1.0 - beta2) * g * g
        pv[i] -= lr * (mv[i] / c1) / (sqrt(vv[i] / c2) + eps)
