"""Three windowed-input transformer forecasters over one shared interface.

* ``vanilla``  - encoder-decoder with full scaled-dot attention
* ``informer`` - same layout with sparse top-u attention in the encoder
                 self-attention (factor ``probsparse_factor``)
* ``patchtst`` - channel-independent encoder over patch tokens

All share ``forward(model, batch, train_mode) -> Tensor[batch, horizon]``.
The decoder of the encoder-decoder pair is one-shot generative: the
horizon positions enter as a zero placeholder and are predicted in a
single pass, so 24h and 96h blocks are produced without an autoregressive
loop.

Parameters live in an insertion-ordered name -> Tensor dict; that order is
the canonical serialization order used by checkpoints. Weights use scaled
uniform init (+-sqrt(6/(fan_in+fan_out))) drawn from the run's "init"
stream; biases start at zero and layer-norm affines at identity.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import prob_sparse_attention, scaled_dot_attention
from .errors import ConfigError, DataError, DimensionError
from .rng import RunRng
from .tensor import Tensor, dropout, layer_norm, matmul, patchify

ARCHITECTURES = ("vanilla", "informer", "patchtst")


@dataclass
class ModelConfig:
    """Architecture hyperparameters; defaults are the toy test scale."""

    arch: str = "vanilla"
    n_features: int = 1
    d_model: int = 32
    n_heads: int = 4
    n_encoder_layers: int = 2
    n_decoder_layers: int = 2
    ff_dim: int = 64
    dropout_rate: float = 0.1
    lookback: int = 168
    horizon: int = 24
    patch_len: int = 16
    stride: int = 8
    probsparse_factor: float = 5.0
    allow_any_horizon: bool = False

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}; expected one of {ARCHITECTURES}")
        for name in ("n_features", "d_model", "n_heads", "n_encoder_layers", "ff_dim", "lookback", "horizon"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_decoder_layers < 0:
            raise ConfigError("n_decoder_layers must be nonnegative")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.horizon not in (24, 96) and not self.allow_any_horizon:
            raise ConfigError(f"horizon must be 24 or 96 (or set allow_any_horizon), got {self.horizon}")
        if self.arch == "patchtst":
            if self.patch_len > self.lookback:
                raise ConfigError(f"patch_len {self.patch_len} exceeds lookback {self.lookback}")
            if self.stride < 1:
                raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.arch == "informer" and self.probsparse_factor <= 0:
            raise ConfigError(f"probsparse_factor must be positive, got {self.probsparse_factor}")


@dataclass
class ForecastBatch:
    """Standardized model inputs: past window plus future load targets."""

    x_past: np.ndarray  # [batch, lookback, n_features]
    y_future: np.ndarray  # [batch, horizon]
    series_id: list = field(default_factory=list)

    def __post_init__(self):
        self.x_past = np.asarray(self.x_past, dtype=np.float64)
        self.y_future = np.asarray(self.y_future, dtype=np.float64)
        if self.x_past.ndim != 3:
            raise DimensionError(f"x_past must be [batch, L, F], got shape {self.x_past.shape}")
        if self.y_future.ndim != 2 or self.y_future.shape[0] != self.x_past.shape[0]:
            raise DimensionError(f"y_future must be [batch, H], got shape {self.y_future.shape}")
        if not np.isfinite(self.x_past).all() or not np.isfinite(self.y_future).all():
            raise DataError("forecast batch contains NaN or Inf")

    def __len__(self):
        return self.x_past.shape[0]


def sinusoidal_encoding(length, d_model):
    """Fixed sin/cos position table, shape [length, d_model]."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(idx / 2.0) / d_model)
    return np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))


class _Forecaster:
    """Shared parameter bookkeeping for the three architectures."""

    def __init__(self, config: ModelConfig, rng: RunRng):
        self.config = config
        self.rng = rng
        self.params: dict[str, Tensor] = {}
        self._init_rng = rng.stream("init")

    def _add_linear(self, name, fan_in, fan_out):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        w = self._init_rng.uniform(-bound, bound, size=(fan_in, fan_out))
        self.params[f"{name}.w"] = Tensor(w, requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    def _add_layer_norm(self, name):
        d = self.config.d_model
        self.params[f"{name}.g"] = Tensor(np.ones(d), requires_grad=True)
        self.params[f"{name}.b"] = Tensor(np.zeros(d), requires_grad=True)

    def _add_attention(self, name):
        d = self.config.d_model
        for proj in ("wq", "wk", "wv", "wo"):
            self._add_linear(f"{name}.{proj}", d, d)

    def _linear(self, x, name):
        w = self.params[f"{name}.w"]
        b = self.params[f"{name}.b"]
        lead = x.shape[:-1]
        flat = x.reshape((-1, x.shape[-1]))
        return (matmul(flat, w) + b).reshape(lead + (w.shape[1],))

    def _layer_norm(self, x, name):
        return layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def _dropout(self, x, train_mode):
        return dropout(x, self.config.dropout_rate, train_mode, self.rng.stream("dropout"))

    def _heads_split(self, x):
        b, length, d = x.shape
        h = self.config.n_heads
        return x.reshape((b, length, h, d // h)).transpose((0, 2, 1, 3)).reshape((b * h, length, d // h))

    def _heads_merge(self, x, batch):
        h = self.config.n_heads
        _, length, dk = x.shape
        return x.reshape((batch, h, length, dk)).transpose((0, 2, 1, 3)).reshape((batch, length, h * dk))

    def _attention(self, name, q_in, kv_in, attn_fn):
        batch = q_in.shape[0]
        q = self._heads_split(self._linear(q_in, f"{name}.wq"))
        k = self._heads_split(self._linear(kv_in, f"{name}.wk"))
        v = self._heads_split(self._linear(kv_in, f"{name}.wv"))
        return self._linear(self._heads_merge(attn_fn(q, k, v), batch), f"{name}.wo")

    def _feed_forward(self, x, name):
        return self._linear(self._linear(x, f"{name}.in").gelu(), f"{name}.out")

    def parameters(self):
        return self.params

    def state_arrays(self):
        """Snapshot of parameter values in canonical order."""
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_arrays(self, arrays):
        for name, p in self.params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise DimensionError(f"parameter {name!r} shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _check_batch(self, x_past):
        cfg = self.config
        if x_past.ndim != 3 or x_past.shape[1] != cfg.lookback or x_past.shape[2] != cfg.n_features:
            raise DimensionError(
                f"batch shape {x_past.shape} does not match (·, L={cfg.lookback}, F={cfg.n_features})"
            )


class EncDecForecaster(_Forecaster):
    """Encoder-decoder forecaster; vanilla and informer differ only in the
    encoder self-attention operator."""

    def __init__(self, config, rng):
        super().__init__(config, rng)
        cfg = config
        self._add_linear("enc_embed", cfg.n_features, cfg.d_model)
        self._add_linear("dec_embed", cfg.n_features, cfg.d_model)
        for i in range(cfg.n_encoder_layers):
            self._add_attention(f"enc.{i}.attn")
            self._add_layer_norm(f"enc.{i}.ln1")
            self._add_linear(f"enc.{i}.ff.in", cfg.d_model, cfg.ff_dim)
            self._add_linear(f"enc.{i}.ff.out", cfg.ff_dim, cfg.d_model)
            self._add_layer_norm(f"enc.{i}.ln2")
        for i in range(cfg.n_decoder_layers):
            self._add_attention(f"dec.{i}.self_attn")
            self._add_layer_norm(f"dec.{i}.ln1")
            self._add_attention(f"dec.{i}.cross_attn")
            self._add_layer_norm(f"dec.{i}.ln2")
            self._add_linear(f"dec.{i}.ff.in", cfg.d_model, cfg.ff_dim)
            self._add_linear(f"dec.{i}.ff.out", cfg.ff_dim, cfg.d_model)
            self._add_layer_norm(f"dec.{i}.ln3")
        self._add_linear("head", cfg.d_model, 1)
        self._pe_enc = sinusoidal_encoding(cfg.lookback, cfg.d_model)
        self._pe_dec = sinusoidal_encoding(cfg.horizon, cfg.d_model)

    def _encoder_attn_fn(self):
        if self.config.arch == "informer":
            c = self.config.probsparse_factor
            return lambda q, k, v: prob_sparse_attention(q, k, v, c)
        return scaled_dot_attention

    def forward(self, x_past, train_mode=False):
        self._check_batch(x_past)
        cfg = self.config
        batch = x_past.shape[0]
        attn_fn = self._encoder_attn_fn()

        h = self._linear(Tensor(x_past), "enc_embed") + Tensor(self._pe_enc)
        h = self._dropout(h, train_mode)
        for i in range(cfg.n_encoder_layers):
            a = self._attention(f"enc.{i}.attn", h, h, attn_fn)
            h = self._layer_norm(h + self._dropout(a, train_mode), f"enc.{i}.ln1")
            f = self._feed_forward(h, f"enc.{i}.ff")
            h = self._layer_norm(h + self._dropout(f, train_mode), f"enc.{i}.ln2")

        dec_in = np.zeros((batch, cfg.horizon, cfg.n_features))
        d = self._linear(Tensor(dec_in), "dec_embed") + Tensor(self._pe_dec)
        d = self._dropout(d, train_mode)
        for i in range(cfg.n_decoder_layers):
            a = self._attention(f"dec.{i}.self_attn", d, d, scaled_dot_attention)
            d = self._layer_norm(d + self._dropout(a, train_mode), f"dec.{i}.ln1")
            a = self._attention(f"dec.{i}.cross_attn", d, h, scaled_dot_attention)
            d = self._layer_norm(d + self._dropout(a, train_mode), f"dec.{i}.ln2")
            f = self._feed_forward(d, f"dec.{i}.ff")
            d = self._layer_norm(d + self._dropout(f, train_mode), f"dec.{i}.ln3")

        return self._linear(d, "head").reshape((batch, cfg.horizon))


class PatchTSTForecaster(_Forecaster):
    """Encoder over patch tokens; the load channel is forecast from its own
    patched history with covariate patches appended to each token."""

    def __init__(self, config, rng):
        super().__init__(config, rng)
        cfg = config
        self.n_patches = (cfg.lookback - cfg.patch_len) // cfg.stride + 1
        token_dim = cfg.patch_len * cfg.n_features
        self._add_linear("patch_embed", token_dim, cfg.d_model)
        for i in range(cfg.n_encoder_layers):
            self._add_attention(f"enc.{i}.attn")
            self._add_layer_norm(f"enc.{i}.ln1")
            self._add_linear(f"enc.{i}.ff.in", cfg.d_model, cfg.ff_dim)
            self._add_linear(f"enc.{i}.ff.out", cfg.ff_dim, cfg.d_model)
            self._add_layer_norm(f"enc.{i}.ln2")
        self._add_linear("head", self.n_patches * cfg.d_model, cfg.horizon)
        self._pe = sinusoidal_encoding(self.n_patches, cfg.d_model)

    def forward(self, x_past, train_mode=False):
        self._check_batch(x_past)
        cfg = self.config
        batch = x_past.shape[0]

        # [B, L, F] -> per-channel patches -> [B, N, F * P] tokens
        channels = Tensor(x_past).transpose((0, 2, 1))
        patches = patchify(channels, cfg.patch_len, cfg.stride)
        tokens = patches.transpose((0, 2, 1, 3)).reshape((batch, self.n_patches, cfg.n_features * cfg.patch_len))

        h = self._linear(tokens, "patch_embed") + Tensor(self._pe)
        h = self._dropout(h, train_mode)
        for i in range(cfg.n_encoder_layers):
            a = self._attention(f"enc.{i}.attn", h, h, scaled_dot_attention)
            h = self._layer_norm(h + self._dropout(a, train_mode), f"enc.{i}.ln1")
            f = self._feed_forward(h, f"enc.{i}.ff")
            h = self._layer_norm(h + self._dropout(f, train_mode), f"enc.{i}.ln2")

        flat = h.reshape((batch, self.n_patches * cfg.d_model))
        return self._linear(flat, "head")


def build_model(config: ModelConfig, rng: RunRng):
    """Construct the forecaster named by ``config.arch``."""
    if config.arch in ("vanilla", "informer"):
        return EncDecForecaster(config, rng)
    if config.arch == "patchtst":
        return PatchTSTForecaster(config, rng)
    raise ConfigError(f"unknown architecture {config.arch!r}")


def forward(model, batch, train_mode=False):
    """Run ``model`` on a :class:`ForecastBatch`; returns Tensor[batch, H]."""
    x = batch.x_past if isinstance(batch, ForecastBatch) else np.asarray(batch, dtype=np.float64)
    return model.forward(x, train_mode=train_mode)
