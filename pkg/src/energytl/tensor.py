"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a row-major numpy array together with an optional
gradient. Operations record their parents and a backward closure; calling
:meth:`Tensor.backward` on a scalar loss walks the recorded graph in exact
reverse topological order and accumulates gradients into every tensor that
requires them.

Only the operations needed to express the three forecasting models are
provided. Everything runs in float64; any op that would produce NaN or Inf
raises :class:`~energytl.errors.NumericError` instead of propagating the
value.
"""

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError, DimensionError, NumericError


class Tensor:
    """Node in the autodiff graph: value, optional grad, backward closure."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    # --- graph construction -------------------------------------------------

    @staticmethod
    def _result(data, parents, op, backward):
        """Wrap an op result, validating finiteness and wiring the graph."""
        if not np.isfinite(data).all():
            raise NumericError(f"non-finite values produced by op {op!r}")
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        out.op = op
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Populate grads of all reachable requires_grad tensors.

        The receiver must be a scalar (single-element) tensor.
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # --- elementwise ops ----------------------------------------------------

    def _coerce(self, other):
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = _broadcast_op(np.add, a.data, b.data, "add")

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._result(data, (a, b), "add", backward)

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = _broadcast_op(np.subtract, a.data, b.data, "sub")

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.data.shape))

        return Tensor._result(data, (a, b), "sub", backward)

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        data = _broadcast_op(np.multiply, a.data, b.data, "mul")

        def backward(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._result(data, (a, b), "mul", backward)

    def __neg__(self):
        a = self

        def backward(g):
            a._accumulate(-g)

        return Tensor._result(-a.data, (a,), "neg", backward)

    __radd__ = __add__
    __rmul__ = __mul__

    def __rsub__(self, other):
        return self._coerce(other) - self

    def square(self):
        return self * self

    def relu(self):
        a = self
        data = np.maximum(a.data, 0.0)

        def backward(g):
            a._accumulate(g * (a.data > 0.0))

        return Tensor._result(data, (a,), "relu", backward)

    def gelu(self):
        a = self
        flat = np.ascontiguousarray(a.data.reshape(-1))
        data = kernels.gelu(flat).reshape(a.data.shape)

        def backward(g):
            a._accumulate(g * kernels.gelu_grad(flat).reshape(a.data.shape))

        return Tensor._result(data, (a,), "gelu", backward)

    # --- shape ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        old_shape = a.data.shape
        try:
            data = a.data.reshape(shape)
        except ValueError as exc:
            raise DimensionError(f"cannot reshape {old_shape} to {shape}") from exc

        def backward(g):
            a._accumulate(g.reshape(old_shape))

        return Tensor._result(data, (a,), "reshape", backward)

    def transpose(self, axes):
        a = self
        axes = tuple(axes)
        inverse = tuple(int(i) for i in np.argsort(axes))
        data = np.ascontiguousarray(a.data.transpose(axes))

        def backward(g):
            a._accumulate(g.transpose(inverse))

        return Tensor._result(data, (a,), "transpose", backward)

    # --- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

        return Tensor._result(data, (a,), "sum", backward)

    def mean(self, axis=None, keepdims=False):
        a = self
        if axis is None:
            count = a.data.size
        else:
            count = a.data.shape[axis]
        out = a.sum(axis=axis, keepdims=keepdims) * (1.0 / count)
        out.op = "mean"
        return out


def matmul(a, b):
    """Matrix product with the standard gradient rules.

    Accepts 2-D operands or stacks of matrices (3-D with equal batch).
    Gradients: dA = dC @ B^T, dB = A^T @ dC.
    """
    if a.data.ndim != b.data.ndim or a.data.ndim not in (2, 3):
        raise DimensionError(f"matmul requires matching 2-D or 3-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    if a.data.ndim == 3 and a.data.shape[0] != b.data.shape[0]:
        raise DimensionError(f"matmul batch dimensions disagree: {a.data.shape} @ {b.data.shape}")
    a_arr = np.ascontiguousarray(a.data)
    b_arr = np.ascontiguousarray(b.data)
    data = kernels.matmul(a_arr, b_arr)

    def backward(g):
        if a.requires_grad:
            a._accumulate(kernels.matmul(np.ascontiguousarray(g), np.ascontiguousarray(b_arr.swapaxes(-1, -2))))
        if b.requires_grad:
            b._accumulate(kernels.matmul(np.ascontiguousarray(a_arr.swapaxes(-1, -2)), np.ascontiguousarray(g)))

    return Tensor._result(data, (a, b), "matmul", backward)


def softmax(x, axis=-1):
    """Numerically stabilized softmax along ``axis``.

    Each slice along ``axis`` of the result is nonnegative and sums to 1.
    """
    a = x
    if not np.isfinite(a.data).all():
        raise NumericError("softmax received non-finite input")
    axis = axis % a.data.ndim
    moved = np.moveaxis(a.data, axis, -1)
    lead_shape = moved.shape
    flat = np.ascontiguousarray(moved.reshape(-1, lead_shape[-1]))
    y2 = kernels.softmax_last(flat)
    y = np.moveaxis(y2.reshape(lead_shape), -1, axis)

    def backward(g):
        gm = np.moveaxis(g, axis, -1).reshape(-1, lead_shape[-1])
        ds = y2 * (gm - (gm * y2).sum(axis=1, keepdims=True))
        a._accumulate(np.moveaxis(ds.reshape(lead_shape), -1, axis))

    return Tensor._result(y, (a,), "softmax", backward)


def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalize the last axis to mean 0 / variance 1, then apply affine.

    ``gamma`` and ``beta`` broadcast over the last axis; omitting them
    yields the pre-affine normalized values. ``eps`` guards zero variance.
    """
    a = x
    last = a.data.shape[-1]
    flat = np.ascontiguousarray(a.data.reshape(-1, last))
    xhat2, inv_std = kernels.layer_norm_last(flat, eps)
    xhat = xhat2.reshape(a.data.shape)

    def backward_norm(g):
        g2 = g.reshape(-1, last)
        mean_g = g2.mean(axis=1, keepdims=True)
        mean_gx = (g2 * xhat2).mean(axis=1, keepdims=True)
        dx = inv_std[:, None] * (g2 - mean_g - xhat2 * mean_gx)
        a._accumulate(dx.reshape(a.data.shape))

    normed = Tensor._result(xhat, (a,), "layer_norm", backward_norm)
    if gamma is None and beta is None:
        return normed
    out = normed * gamma
    if beta is not None:
        out = out + beta
    return out


def dropout(x, rate, train_mode, rng):
    """Inverted dropout; identity in eval mode or at rate 0.

    ``rng`` is a numpy Generator (normally the run's "dropout" stream).
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x
    a = x
    keep = 1.0 - rate
    mask = (rng.random(a.data.shape) < keep) / keep

    def backward(g):
        a._accumulate(g * mask)

    return Tensor._result(a.data * mask, (a,), "dropout", backward)


def patchify(x, patch_len, stride):
    """Slice the last axis into overlapping windows.

    A length-L series becomes ``N = floor((L - P) / S) + 1`` patches of
    length P, order preserving: patch i covers ``[i*S, i*S + P)``. Works on
    any leading shape; a 1-D series yields the spec'd ``[N, P]`` layout.
    """
    a = x
    L = a.data.shape[-1]
    if patch_len <= 0 or stride <= 0:
        raise ConfigError(f"patch_len and stride must be positive, got {patch_len}, {stride}")
    if patch_len > L:
        raise ConfigError(f"patch_len {patch_len} exceeds series length {L}")
    n = (L - patch_len) // stride + 1
    idx = stride * np.arange(n)[:, None] + np.arange(patch_len)[None, :]
    data = np.ascontiguousarray(a.data[..., idx])

    def backward(g):
        dx = np.zeros_like(a.data)
        np.add.at(dx, (Ellipsis, idx), g)
        a._accumulate(dx)

    return Tensor._result(data, (a,), "patchify", backward)


def mse_loss(pred, target):
    """Mean squared error; ``target`` may be a Tensor or an array."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.data.shape != target.data.shape:
        raise DimensionError(f"mse_loss shapes disagree: {pred.data.shape} vs {target.data.shape}")
    diff = pred - target
    return (diff * diff).mean()


def _broadcast_op(fn, x, y, name):
    try:
        return fn(x, y)
    except ValueError as exc:
        raise DimensionError(f"{name}: incompatible shapes {x.shape} and {y.shape}") from exc


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad
