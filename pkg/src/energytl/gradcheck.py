"""Finite-difference gradient verification for ops and whole architectures."""

import numpy as np

from .errors import ConfigError
from .models import ARCHITECTURES, ModelConfig, build_model
from .rng import RunRng
from .tensor import mse_loss


def central_diff(f, arr, h=1e-4):
    """Central-difference gradient of scalar ``f()`` w.r.t. ``arr``.

    ``arr`` is perturbed in place entry by entry and restored; ``f`` must
    re-run the computation reading the current array contents.
    """
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f()
        flat[i] = orig - h
        f_minus = f()
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-2):
    """Worst-case relative error with a denominator floor.

    The floor turns the comparison absolute for near-zero gradients,
    where central differences hit their rounding noise floor.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


TOY_CONFIG = dict(
    d_model=8,
    n_heads=2,
    n_encoder_layers=1,
    n_decoder_layers=1,
    ff_dim=16,
    dropout_rate=0.0,
    lookback=16,
    horizon=4,
    n_features=3,
    patch_len=8,
    stride=4,
    probsparse_factor=1.0,
    allow_any_horizon=True,
)


def check_architecture(arch, seed=7, batch=2, h=1e-4, overrides=None):
    """Compare every parameter gradient against central differences.

    Builds the architecture at toy scale, computes the MSE training loss
    on a fixed random batch (dropout off, so the loss is a pure function
    of the parameters), and returns per-parameter and worst-case relative
    errors.
    """
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}")
    settings = dict(TOY_CONFIG)
    if overrides:
        settings.update(overrides)
    config = ModelConfig(arch=arch, **settings)
    model = build_model(config, RunRng(seed))

    data_rng = np.random.Generator(np.random.Philox(key=seed + 1))
    x = data_rng.normal(size=(batch, config.lookback, config.n_features))
    y = data_rng.normal(size=(batch, config.horizon))

    def loss_value():
        return mse_loss(model.forward(x, train_mode=False), y).item()

    loss = mse_loss(model.forward(x, train_mode=False), y)
    model.zero_grad()
    loss.backward()

    per_param = {}
    worst = 0.0
    n_entries = 0
    for name, p in model.params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = central_diff(loss_value, p.data, h)
        err = max_rel_error(analytic, numeric)
        per_param[name] = err
        worst = max(worst, err)
        n_entries += p.data.size
    return {"arch": arch, "max_rel_error": worst, "per_param": per_param, "n_entries": n_entries}
