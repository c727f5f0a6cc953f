"""Pure numpy implementations of the hot numeric kernels.

This is the fallback backend used when the compiled extension is not
built. Both backends implement the same contracts on float64 arrays and
agree to floating-point noise; see ``benchmarks/bench_kernels.py`` for a
speed comparison.
"""

import numpy as np

BACKEND_NAME = "python"

_GELU_C = np.sqrt(2.0 / np.pi)


def matmul(a, b):
    """Matrix product of 2-D arrays or stacks of matrices (3-D, equal batch)."""
    return np.matmul(a, b)


def softmax_last(x):
    """Row-wise softmax of a 2-D array, stabilized by max subtraction."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_last(x, eps):
    """Normalize rows of a 2-D array to mean 0, variance 1.

    Returns ``(xhat, inv_std)``; ``inv_std`` is reused by the backward pass.
    """
    mean = x.mean(axis=1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return (x - mean) * inv_std, inv_std[:, 0]


def gelu(x):
    """GELU activation (tanh form), elementwise on a 1-D array."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def gelu_grad(x):
    """Derivative of the tanh-form GELU, elementwise on a 1-D array."""
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    dinner = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner


def adam_step(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One in-place Adam update on flat float64 arrays.

    ``t`` is the 1-based step count used for bias correction.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
