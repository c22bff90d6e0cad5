"""
Conv1D -> LSTM -> dense cascade used for each building.

Input windows are ``[batch, L, 8]``.  The convolution treats the L timesteps
as input channels and slides along the 8-feature axis; its ``out_channels``
feature maps then become the LSTM's time axis, each step carrying 8 values.
Both reinterpretations live in :func:`to_conv_input` and
:func:`to_lstm_sequence` so another reading only has to change them.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .data import N_FEATURES, write_bytes_atomic
from .errors import ConfigError, LoadError, NonFiniteError, ShapeError
from .layers import (
    LOSSES,
    Conv1DParams,
    DenseParams,
    LSTMParams,
    Mode,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    lstm_backward,
    lstm_sequence_forward,
    relu,
)


@dataclass(frozen=True)
class ConvLSTMConfig:
    window_length: int
    conv_out_channels: int
    kernel_size: int = 3
    padding: int = 1
    stride: int = 1
    lstm_input: int = N_FEATURES
    lstm_hidden: int = 32
    dropout_rate: float = 0.1
    fc1_out: int = 10
    fc2_out: int = 1
    n_features: int = N_FEATURES

    def __post_init__(self):
        ints = {k: v for k, v in asdict(self).items() if k not in ("dropout_rate", "padding")}
        for name, value in ints.items():
            if int(value) < 1:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.conv_length_out < 1:
            raise ConfigError("conv output length < 1 for this kernel/padding/stride")
        if self.conv_length_out != self.lstm_input:
            raise ConfigError(
                f"conv output length {self.conv_length_out} must equal lstm_input {self.lstm_input}"
            )

    @property
    def conv_length_out(self) -> int:
        return (self.n_features + 2 * self.padding - self.kernel_size) // self.stride + 1


PRESETS = {
    "A": ConvLSTMConfig(window_length=7, conv_out_channels=64),
    "B": ConvLSTMConfig(window_length=5, conv_out_channels=64),
    "C": ConvLSTMConfig(window_length=3, conv_out_channels=32),
}


def preset(name: str) -> ConvLSTMConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True, eq=False)
class ModelParams:
    conv: Conv1DParams
    lstm: LSTMParams
    fc1: DenseParams
    fc2: DenseParams
    config: ConvLSTMConfig
    seed: int = 0

    def tensors(self) -> dict[str, np.ndarray]:
        """All learnable tensors, keyed in declaration order."""
        out = {"conv.kernels": self.conv.kernels, "conv.bias": self.conv.bias}
        out.update({f"lstm.{k}": v for k, v in self.lstm.tensors().items()})
        out.update(
            {
                "fc1.weight": self.fc1.weight,
                "fc1.bias": self.fc1.bias,
                "fc2.weight": self.fc2.weight,
                "fc2.bias": self.fc2.bias,
            }
        )
        return out

    def with_tensors(self, t: dict[str, np.ndarray]) -> "ModelParams":
        missing = set(self.tensors()) - set(t)
        if missing:
            raise ShapeError(f"missing tensors {sorted(missing)}")
        for name, old in self.tensors().items():
            if t[name].shape != old.shape:
                raise ShapeError(f"{name}: shape {t[name].shape} != {old.shape}")
        cfg = self.config
        return ModelParams(
            Conv1DParams(t["conv.kernels"], t["conv.bias"], cfg.stride, cfg.padding),
            LSTMParams(*(t[f"lstm.{k}"] for k in self.lstm.tensors())),
            DenseParams(t["fc1.weight"], t["fc1.bias"]),
            DenseParams(t["fc2.weight"], t["fc2.bias"]),
            cfg,
            self.seed,
        )

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors().values())

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        a, b = self.tensors(), other.tensors()
        return (
            self.config == other.config
            and self.seed == other.seed
            and all(a[k].shape == b[k].shape and np.array_equal(a[k], b[k]) for k in a)
        )


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_model(config: ConvLSTMConfig, seed: int = 0) -> ModelParams:
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    L, O, K = config.window_length, config.conv_out_channels, config.kernel_size
    H, I = config.lstm_hidden, config.lstm_input
    conv = Conv1DParams(
        _glorot(rng, (O, L, K), L * K, O * K), np.zeros(O), config.stride, config.padding
    )
    gates = [_glorot(rng, (H, H + I), H + I, H) for _ in range(4)]
    lstm = LSTMParams(*gates, *(np.zeros(H) for _ in range(4)))
    fc1 = DenseParams(_glorot(rng, (config.fc1_out, H), H, config.fc1_out), np.zeros(config.fc1_out))
    fc2 = DenseParams(
        _glorot(rng, (config.fc2_out, config.fc1_out), config.fc1_out, config.fc2_out),
        np.zeros(config.fc2_out),
    )
    return ModelParams(conv, lstm, fc1, fc2, config, int(seed))


def zero_model(config: ConvLSTMConfig) -> ModelParams:
    p = build_model(config, 0)
    return p.with_tensors({k: np.zeros_like(v) for k, v in p.tensors().items()})


def to_conv_input(x):
    """[batch, L, features] -> conv layout [batch, in_channels=L, length=features]."""
    return x


def to_lstm_sequence(feature_maps):
    """Conv output [batch, out_channels, length] -> LSTM [batch, T=out_channels, input=length]."""
    return feature_maps


def from_lstm_sequence_grad(grad_seq):
    return grad_seq


def from_conv_input_grad(grad):
    return grad


@dataclass
class ForwardCache:
    conv: object
    relu1: object
    lstm: object
    dropout_mask: np.ndarray
    relu2: object
    fc1: object
    relu3: object
    fc2: object


def forward(params: ModelParams, x, mode: Mode = "eval", rng: np.random.Generator | None = None):
    """Predict ``[batch, 1]`` from windows ``[batch, L, 8]``."""
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != cfg.window_length or x.shape[2] != cfg.n_features:
        raise ShapeError(
            f"input {x.shape} does not match [batch, {cfg.window_length}, {cfg.n_features}]"
        )
    a, conv_cache = conv1d_forward(to_conv_input(x), params.conv)
    a, relu1 = relu(a)
    h, lstm_cache = lstm_sequence_forward(to_lstm_sequence(a), params.lstm)
    h, mask = dropout_forward(h, cfg.dropout_rate, mode, rng)
    h, relu2 = relu(h)
    h, fc1_cache = dense_forward(h, params.fc1)
    h, relu3 = relu(h)
    pred, fc2_cache = dense_forward(h, params.fc2)
    return pred, ForwardCache(conv_cache, relu1, lstm_cache, mask, relu2, fc1_cache, relu3, fc2_cache)


def backward(params: ModelParams, grad_pred, cache: ForwardCache) -> dict[str, np.ndarray]:
    g, gw2, gb2 = dense_backward(grad_pred, cache.fc2)
    g = cache.relu3(g)
    g, gw1, gb1 = dense_backward(g, cache.fc1)
    g = cache.relu2(g)
    g = dropout_backward(g, cache.dropout_mask)
    g_seq, g_lstm = lstm_backward(g, cache.lstm)
    g = cache.relu1(from_lstm_sequence_grad(g_seq))
    _, gk, gb = conv1d_backward(g, cache.conv)
    grads = {"conv.kernels": gk, "conv.bias": gb}
    grads.update({f"lstm.{k}": v for k, v in g_lstm.tensors().items()})
    grads.update({"fc1.weight": gw1, "fc1.bias": gb1, "fc2.weight": gw2, "fc2.bias": gb2})
    return grads


def forward_backward(params: ModelParams, x, y, loss: str = "mse", rng=None, mode: Mode = "train"):
    """Scalar loss and its gradient for every tensor in ``params.tensors()``."""
    try:
        loss_fn = LOSSES[loss]
    except KeyError:
        raise ConfigError(f"unknown loss {loss!r}") from None
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != np.shape(x)[0]:
        raise ShapeError(f"{y.shape[0]} targets for {np.shape(x)[0]} windows")
    pred, cache = forward(params, x, mode, rng)
    value, grad_pred = loss_fn(pred, y)
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite {loss} loss {value}", loss=value)
    return value, backward(params, grad_pred, cache)


def predict(params: ModelParams, x, chunk: int = 4096) -> np.ndarray:
    """Eval-mode predictions as a flat array, batched to bound memory."""
    x = np.asarray(x, dtype=np.float64)
    out = [forward(params, x[s : s + chunk], "eval")[0][:, 0] for s in range(0, len(x), chunk)]
    return np.concatenate(out) if out else np.empty(0)


# -- parameter file --------------------------------------------------------

MAGIC = b"CLSTM1"
VERSION = 1
_CONFIG_INTS = (
    "window_length",
    "conv_out_channels",
    "kernel_size",
    "padding",
    "stride",
    "lstm_input",
    "lstm_hidden",
    "fc1_out",
    "fc2_out",
    "n_features",
)
_HEADER = struct.Struct("<6sI" + "I" * len(_CONFIG_INTS) + "dQI")


def params_to_bytes(params: ModelParams) -> bytes:
    cfg = params.config
    tensors = params.tensors()
    parts = [
        _HEADER.pack(
            MAGIC,
            VERSION,
            *(getattr(cfg, k) for k in _CONFIG_INTS),
            cfg.dropout_rate,
            params.seed,
            len(tensors),
        )
    ]
    for arr in tensors.values():
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def params_from_bytes(blob: bytes, source: str = "<bytes>", expected: ConvLSTMConfig | None = None):
    if len(blob) < _HEADER.size:
        raise LoadError(f"{source}: truncated header")
    magic, version, *rest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise LoadError(f"{source}: field 'magic' is {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise LoadError(f"{source}: field 'version' is {version}, expected {VERSION}")
    ints = dict(zip(_CONFIG_INTS, rest[: len(_CONFIG_INTS)]))
    dropout, seed, n_tensors = rest[len(_CONFIG_INTS) :]
    try:
        config = ConvLSTMConfig(**ints, dropout_rate=dropout)
    except ConfigError as e:
        raise LoadError(f"{source}: invalid config: {e}") from None
    if expected is not None and config != expected:
        diff = [k for k in asdict(config) if getattr(config, k) != getattr(expected, k)]
        raise LoadError(f"{source}: config mismatch in field(s) {', '.join(diff)}")
    template = build_model(config, 0).tensors()
    if n_tensors != len(template):
        raise LoadError(f"{source}: field 'n_tensors' is {n_tensors}, expected {len(template)}")
    off = _HEADER.size
    loaded = {}
    for name, ref in template.items():
        try:
            (rank,) = struct.unpack_from("<I", blob, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
        except struct.error:
            raise LoadError(f"{source}: truncated at tensor {name!r}") from None
        if tuple(dims) != ref.shape:
            raise LoadError(f"{source}: tensor {name!r} has shape {tuple(dims)}, expected {ref.shape}")
        nbytes = 8 * int(np.prod(dims))
        if off + nbytes > len(blob):
            raise LoadError(f"{source}: truncated at tensor {name!r}")
        loaded[name] = np.frombuffer(blob, "<f8", count=int(np.prod(dims)), offset=off).reshape(dims).astype(np.float64)
        off += nbytes
    if off != len(blob):
        raise LoadError(f"{source}: {len(blob) - off} trailing bytes")
    base = replace(build_model(config, 0), seed=int(seed))
    return base.with_tensors(loaded)


def save_params(params: ModelParams, path) -> None:
    write_bytes_atomic(path, params_to_bytes(params))


def load_params(path, expected: ConvLSTMConfig | None = None) -> ModelParams:
    path = Path(path)
    return params_from_bytes(path.read_bytes(), str(path), expected)
