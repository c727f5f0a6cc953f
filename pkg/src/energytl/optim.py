"""Adam optimizer over named parameter tensors."""

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params):
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.t = 0


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Apply one Adam update in place; returns the mutated (params, state).

    ``params`` and ``grads`` are name-aligned dicts of tensors/arrays. The
    update is the standard bias-corrected rule and is deterministic given
    its inputs.
    """
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        g_arr = getattr(g, "data", g)
        if g_arr.shape != p.data.shape:
            raise DimensionError(f"grad shape {g_arr.shape} does not match param {name!r} {p.data.shape}")
        kernels.adam_step(
            p.data.reshape(-1),
            np.ascontiguousarray(g_arr, dtype=np.float64).reshape(-1),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            state.t,
            lr,
            beta1,
            beta2,
            eps,
        )
    return params, state


class Adam:
    """Stateful wrapper reading gradients straight off the parameters."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState(params)

    def step(self):
        grads = {}
        for name, p in self.params.items():
            grads[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
