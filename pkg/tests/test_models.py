"""Forecaster architectures: patching, shapes, equivalences, checkpoints."""

import numpy as np
import pytest

from energytl.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from energytl.errors import ConfigError, DataError, DimensionError
from energytl.models import (
    ForecastBatch,
    ModelConfig,
    build_model,
    forward,
)
from energytl.optim import Adam
from energytl.rng import RunRng
from energytl.tensor import Tensor, mse_loss, patchify

TOY = dict(
    d_model=8,
    n_heads=2,
    n_encoder_layers=1,
    n_decoder_layers=1,
    ff_dim=16,
    dropout_rate=0.1,
    lookback=16,
    horizon=4,
    n_features=3,
    patch_len=8,
    stride=4,
    allow_any_horizon=True,
)


def toy_config(arch, **overrides):
    settings = dict(TOY)
    settings.update(overrides)
    return ModelConfig(arch=arch, **settings)


# --- patchify -------------------------------------------------------------------


def test_patchify_two_patches_reconstruct_input():
    series = np.arange(16.0)
    patches = patchify(Tensor(series), 8, 8).data
    assert patches.shape == (2, 8)
    np.testing.assert_array_equal(patches.reshape(-1), series)


def test_patchify_stride_two_start_indices():
    series = np.arange(10.0)
    patches = patchify(Tensor(series), 4, 2).data
    assert patches.shape == (4, 4)
    for i in range(4):
        np.testing.assert_array_equal(patches[i], series[2 * i : 2 * i + 4])


def test_patchify_full_length_single_patch():
    series = np.arange(7.0)
    patches = patchify(Tensor(series), 7, 7).data
    assert patches.shape == (1, 7)
    np.testing.assert_array_equal(patches[0], series)


def test_patchify_patch_longer_than_series():
    with pytest.raises(ConfigError):
        patchify(Tensor(np.arange(4.0)), 5, 1)


def test_patch_count_formula():
    rng = np.random.default_rng(0)
    for _ in range(50):
        L = int(rng.integers(4, 64))
        P = int(rng.integers(1, L + 1))
        S = int(rng.integers(1, L + 1))
        n = patchify(Tensor(np.zeros(L)), P, S).data.shape[0]
        assert n == (L - P) // S + 1


# --- config validation ------------------------------------------------------------


def test_heads_must_divide_d_model():
    with pytest.raises(ConfigError):
        toy_config("vanilla", d_model=8, n_heads=3)


def test_horizon_restricted_without_flag():
    with pytest.raises(ConfigError):
        toy_config("vanilla", horizon=48, allow_any_horizon=False)
    toy_config("vanilla", horizon=96, allow_any_horizon=False)  # allowed


def test_patch_len_bounded_by_lookback():
    with pytest.raises(ConfigError):
        toy_config("patchtst", patch_len=32, lookback=16)


# --- forward shapes and determinism -------------------------------------------------


@pytest.mark.parametrize("arch", ["vanilla", "informer", "patchtst"])
@pytest.mark.parametrize("horizon", [24, 96])
def test_forecast_shape_is_batch_by_horizon(arch, horizon):
    config = toy_config(arch, horizon=horizon, lookback=24, patch_len=8, stride=8, allow_any_horizon=False)
    model = build_model(config, RunRng(1))
    x = np.random.default_rng(0).normal(size=(3, 24, 3))
    out = model.forward(x)
    assert out.data.shape == (3, horizon)
    assert np.isfinite(out.data).all()


@pytest.mark.parametrize("arch", ["vanilla", "informer", "patchtst"])
def test_eval_forward_is_deterministic(arch):
    model = build_model(toy_config(arch), RunRng(3))
    x = np.random.default_rng(1).normal(size=(2, 16, 3))
    first = model.forward(x, train_mode=False).data.tobytes()
    for _ in range(3):
        assert model.forward(x, train_mode=False).data.tobytes() == first


def test_train_mode_dropout_consumes_rng():
    model = build_model(toy_config("vanilla", dropout_rate=0.5), RunRng(3))
    x = np.random.default_rng(1).normal(size=(2, 16, 3))
    a = model.forward(x, train_mode=True).data
    b = model.forward(x, train_mode=True).data
    assert not np.array_equal(a, b)


def test_batch_shape_mismatch_raises():
    model = build_model(toy_config("vanilla"), RunRng(0))
    with pytest.raises(DimensionError):
        model.forward(np.zeros((2, 10, 3)))
    with pytest.raises(DimensionError):
        model.forward(np.zeros((2, 16, 5)))


def test_informer_with_huge_factor_matches_vanilla_on_same_weights():
    vanilla = build_model(toy_config("vanilla"), RunRng(7))
    informer = build_model(toy_config("informer", probsparse_factor=1000.0), RunRng(7))
    # identical construction order and seed -> identical weights
    for name, p in vanilla.params.items():
        np.testing.assert_array_equal(p.data, informer.params[name].data)
    x = np.random.default_rng(5).normal(size=(2, 16, 3))
    out_v = vanilla.forward(x).data
    out_i = informer.forward(x).data
    assert np.max(np.abs(out_v - out_i)) < 1e-5


def test_patchtst_single_token_when_patch_is_lookback():
    config = toy_config("patchtst", patch_len=16, stride=16)
    model = build_model(config, RunRng(2))
    assert model.n_patches == 1
    out = model.forward(np.zeros((2, 16, 3)))
    assert out.data.shape == (2, 4)


def test_vanilla_converges_to_constant_series():
    # 50 updates on a constant standardized series: forecast lands within
    # 0.05 of the constant
    config = toy_config("vanilla", n_features=1, dropout_rate=0.0)
    model = build_model(config, RunRng(11))
    const = 0.3
    x = np.full((8, 16, 1), const)
    y = np.full((8, 4), const)
    opt = Adam(model.params, lr=0.02)
    for _ in range(50):
        loss = mse_loss(model.forward(x, train_mode=True), y)
        model.zero_grad()
        loss.backward()
        opt.step()
    preds = model.forward(x).data
    assert np.max(np.abs(preds - const)) < 0.05


# --- batch type ---------------------------------------------------------------------


def test_forecast_batch_validation():
    with pytest.raises(DataError):
        ForecastBatch(np.full((1, 4, 2), np.nan), np.zeros((1, 2)))
    with pytest.raises(DimensionError):
        ForecastBatch(np.zeros((2, 4)), np.zeros((2, 2)))
    batch = ForecastBatch(np.zeros((2, 16, 3)), np.zeros((2, 4)), series_id=["a", "b"])
    model = build_model(toy_config("vanilla"), RunRng(0))
    out = forward(model, batch)
    assert out.data.shape == (2, 4)


# --- checkpoints ---------------------------------------------------------------------


@pytest.mark.parametrize("arch", ["vanilla", "informer", "patchtst"])
def test_checkpoint_round_trip_bit_exact(arch, tmp_path):
    model = build_model(toy_config(arch), RunRng(13))
    path = tmp_path / "model.bin"
    original = save_checkpoint(model, path)

    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    for name, p in model.params.items():
        assert p.data.tobytes() == loaded.params[name].data.tobytes()
    assert checkpoint_bytes(loaded) == original

    x = np.random.default_rng(3).normal(size=(2, 16, 3))
    assert model.forward(x).data.tobytes() == loaded.forward(x).data.tobytes()
