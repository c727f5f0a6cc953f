"""Hot numeric kernels with backend selection at import time.

The compiled Cython core (``_core``) is preferred when built; otherwise
the numpy fallback (``_py``) is used. Both expose the same functions on
float64 arrays. ``ENERGYTL_KERNELS=python`` forces the fallback, which is
also what ``benchmarks/bench_kernels.py`` uses to compare the two.
"""

import os

from . import _py

try:
    from . import _core
except ImportError:
    _core = None

_FORCED = os.environ.get("ENERGYTL_KERNELS", "").strip().lower()
if _FORCED == "python" or _core is None:
    _active = _py
else:
    _active = _core

BACKEND = _active.BACKEND_NAME

matmul = _active.matmul
softmax_last = _active.softmax_last
layer_norm_last = _active.layer_norm_last
gelu = _active.gelu
gelu_grad = _active.gelu_grad
adam_step = _active.adam_step


def available_backends():
    """Names of the kernel backends importable in this environment."""
    names = ["python"]
    if _core is not None:
        names.append("compiled")
    return names


def get_backend(name):
    """Return the kernel module for ``name`` ('python' or 'compiled')."""
    if name == "python":
        return _py
    if name == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernel core is not built")
        return _core
    raise ValueError(f"unknown kernel backend {name!r}")
