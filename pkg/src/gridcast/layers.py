"""
Handwritten layers with analytic backward passes, float64 throughout.

Every forward returns its output together with whatever the matching backward
needs (a closure for the activations, a cache object for the parameterised
layers).  Tensors are plain numpy arrays in row-major layout.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Literal

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EmptyInputError, InvalidRangeError, ShapeError

Mode = Literal["train", "eval"]


# -- activations -----------------------------------------------------------

def _sigmoid(x):
    # exp overflow for very negative x gives 1/inf = 0, which is the right limit
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(x):
    out = _sigmoid(np.asarray(x, dtype=np.float64))

    def backward(upstream):
        return upstream * out * (1.0 - out)

    return out, backward


def tanh_op(x):
    out = np.tanh(np.asarray(x, dtype=np.float64))

    def backward(upstream):
        return upstream * (1.0 - out * out)

    return out, backward


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    active = x > 0
    out = np.where(active, x, 0.0)

    def backward(upstream):
        return np.where(active, upstream, 0.0)

    return out, backward


# -- Conv1D ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Conv1DParams:
    kernels: np.ndarray  # [out_channels, in_channels, kernel_size]
    bias: np.ndarray  # [out_channels]
    stride: int = 1
    padding: int = 1

    def __post_init__(self):
        if self.kernels.ndim != 3 or self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"conv kernels {self.kernels.shape} / bias {self.bias.shape} inconsistent")
        if self.kernels.shape[2] < 1 or self.stride < 1 or self.padding < 0:
            raise ShapeError("conv needs kernel_size >= 1, stride >= 1, padding >= 0")

    @property
    def out_channels(self) -> int:
        return self.kernels.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernels.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[2]

    def out_length(self, length_in: int) -> int:
        return (length_in + 2 * self.padding - self.kernel_size) // self.stride + 1


@dataclass
class Conv1DCache:
    cols: np.ndarray  # [batch, in_ch, L_out, kernel] windows of the padded input
    input_shape: tuple
    params: Conv1DParams


def conv1d_forward(x, p: Conv1DParams):
    """Zero-padded cross-correlation ``[batch, in_ch, L_in] -> [batch, out_ch, L_out]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1] != p.in_channels:
        raise ShapeError(f"conv input {x.shape} does not match in_channels={p.in_channels}")
    length_in = x.shape[2]
    if length_in + 2 * p.padding < p.kernel_size:
        raise ShapeError(f"conv input length {length_in} too short for kernel {p.kernel_size}")
    xp = np.pad(x, ((0, 0), (0, 0), (p.padding, p.padding)))
    cols = sliding_window_view(xp, p.kernel_size, axis=2)[:, :, :: p.stride, :]
    out = np.tensordot(cols, p.kernels, axes=([1, 3], [1, 2]))  # [B, L_out, O]
    out = out.transpose(0, 2, 1) + p.bias[None, :, None]
    return np.ascontiguousarray(out), Conv1DCache(cols, x.shape, p)


def conv1d_backward(upstream, cache: Conv1DCache):
    """Return ``(grad_x, grad_kernels, grad_bias)``."""
    p = cache.params
    batch, _, length_in = cache.input_shape
    l_out = cache.cols.shape[2]
    if upstream.shape != (batch, p.out_channels, l_out):
        raise ShapeError(f"conv upstream {upstream.shape} != {(batch, p.out_channels, l_out)}")
    grad_bias = upstream.sum(axis=(0, 2))
    grad_kernels = np.tensordot(upstream, cache.cols, axes=([0, 2], [0, 2]))  # [O, C, K]
    grad_cols = np.tensordot(upstream, p.kernels, axes=([1], [0]))  # [B, L_out, C, K]
    grad_xp = np.zeros((batch, p.in_channels, length_in + 2 * p.padding))
    span = p.stride * (l_out - 1) + 1
    for k in range(p.kernel_size):
        grad_xp[:, :, k : k + span : p.stride] += grad_cols[:, :, :, k].transpose(0, 2, 1)
    grad_x = grad_xp[:, :, p.padding : p.padding + length_in]
    return np.ascontiguousarray(grad_x), grad_kernels, grad_bias


# -- LSTM ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LSTMParams:
    """Per-gate weights over the concatenation ``[h_prev, x]``: shape [hidden, hidden + input]."""

    w_f: np.ndarray
    w_i: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    def __post_init__(self):
        w_shape = self.w_f.shape
        if len(w_shape) != 2 or w_shape[1] <= w_shape[0]:
            raise ShapeError(f"LSTM weight shape {w_shape} must be [hidden, hidden + input]")
        for w in (self.w_i, self.w_c, self.w_o):
            if w.shape != w_shape:
                raise ShapeError("LSTM gate weights must share one shape")
        for b in (self.b_f, self.b_i, self.b_c, self.b_o):
            if b.shape != (w_shape[0],):
                raise ShapeError("LSTM gate biases must be [hidden]")

    @property
    def hidden(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1] - self.w_f.shape[0]

    def stacked(self):
        """Gate weights/biases stacked in f, i, c, o order."""
        return (
            np.concatenate([self.w_f, self.w_i, self.w_c, self.w_o], axis=0),
            np.concatenate([self.b_f, self.b_i, self.b_c, self.b_o]),
        )

    @classmethod
    def from_stacked(cls, w, b) -> "LSTMParams":
        wf, wi, wc, wo = np.split(w, 4, axis=0)
        bf, bi, bc, bo = np.split(b, 4)
        return cls(wf, wi, wc, wo, bf, bi, bc, bo)

    @classmethod
    def zeros(cls, hidden: int, input_size: int) -> "LSTMParams":
        w = lambda: np.zeros((hidden, hidden + input_size))  # noqa: E731
        b = lambda: np.zeros(hidden)  # noqa: E731
        return cls(w(), w(), w(), w(), b(), b(), b(), b())

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: int | None = None) -> "LSTMState":
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class LSTMStepCache:
    z: np.ndarray
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c_prev: np.ndarray
    tanh_c: np.ndarray


def _gates(a, hidden):
    s = _sigmoid(a)
    return (
        s[..., :hidden],
        s[..., hidden : 2 * hidden],
        np.tanh(a[..., 2 * hidden : 3 * hidden]),
        s[..., 3 * hidden :],
    )


def _cell_step(z, c_prev, w, b, hidden):
    a = z @ w.T + b
    f, i, g, o = _gates(a, hidden)
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LSTMStepCache(z, f, i, g, o, c_prev, tanh_c)


def _preact_grad(dh, dc, cache: LSTMStepCache):
    """Gradient on the stacked gate pre-activations, and on c_prev."""
    do = dh * cache.tanh_c
    dc = dc + dh * cache.o * (1.0 - cache.tanh_c * cache.tanh_c)
    df = dc * cache.c_prev
    di = dc * cache.g
    dg = dc * cache.i
    dc_prev = dc * cache.f
    da = np.concatenate(
        [
            df * cache.f * (1.0 - cache.f),
            di * cache.i * (1.0 - cache.i),
            dg * (1.0 - cache.g * cache.g),
            do * cache.o * (1.0 - cache.o),
        ],
        axis=-1,
    )
    return da, dc_prev


def _cell_step_backward(dh, dc, cache: LSTMStepCache, w, hidden):
    """Returns (dz, dc_prev, da) where da is the gradient on the stacked pre-activations."""
    da, dc_prev = _preact_grad(dh, dc, cache)
    return da @ w, dc_prev, da


def _check_state(x_t, state: LSTMState, p: LSTMParams):
    if x_t.shape[-1] != p.input_size:
        raise ShapeError(f"LSTM input size {x_t.shape[-1]} != {p.input_size}")
    if state.h.shape != x_t.shape[:-1] + (p.hidden,) or state.c.shape != state.h.shape:
        raise ShapeError(f"LSTM state shape {state.h.shape} inconsistent with input {x_t.shape}")


def lstm_cell_forward(x_t, state: LSTMState, p: LSTMParams):
    """One LSTM step; ``x_t`` is [input] or [batch, input].  Returns (new state, cache)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    _check_state(x_t, state, p)
    z = np.concatenate([state.h, x_t], axis=-1)
    w, b = p.stacked()
    h, c, cache = _cell_step(z, state.c, w, b, p.hidden)
    return LSTMState(h, c), cache


def lstm_cell_backward(dh, dc, cache: LSTMStepCache, p: LSTMParams):
    """Backward through one step.  Returns (dx, dh_prev, dc_prev, grad LSTMParams)."""
    w, _ = p.stacked()
    dz, dc_prev, da = _cell_step_backward(dh, dc, cache, w, p.hidden)
    da2 = np.atleast_2d(da)
    dw = da2.T @ np.atleast_2d(cache.z)
    db = da2.sum(axis=0)
    return dz[..., p.hidden :], dz[..., : p.hidden], dc_prev, LSTMParams.from_stacked(dw, db)


@dataclass
class LSTMSequenceCache:
    x_seq: np.ndarray
    steps: list  # LSTMStepCache per step; ``z`` holds only h_prev here
    params: LSTMParams
    w: np.ndarray


def lstm_sequence_forward(x_seq, p: LSTMParams):
    """Run the cell over ``[batch, T, input]`` from a zero state; return (h_last [batch, hidden], cache)."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 3:
        raise ShapeError(f"LSTM sequence must be [batch, T, input], got {x_seq.shape}")
    batch, T, n_in = x_seq.shape
    if T == 0:
        raise EmptyInputError("LSTM sequence has zero timesteps")
    if n_in != p.input_size:
        raise ShapeError(f"LSTM input size {n_in} != {p.input_size}")
    w, b = p.stacked()
    H = p.hidden
    w_h_t = w[:, :H].T
    # input projections for all steps at once; only the h term is recurrent
    ax = x_seq @ w[:, H:].T + b
    h = np.zeros((batch, H))
    c = np.zeros((batch, H))
    steps = []
    for t in range(T):
        f, i, g, o = _gates(ax[:, t, :] + h @ w_h_t, H)
        c_prev = c
        c = f * c_prev + i * g
        tanh_c = np.tanh(c)
        steps.append(LSTMStepCache(h, f, i, g, o, c_prev, tanh_c))
        h = o * tanh_c
    return h, LSTMSequenceCache(x_seq, steps, p, w)


def lstm_backward(upstream, cache: LSTMSequenceCache):
    """Backpropagation through time from a gradient on ``h_last``.

    Returns ``(grad_x_seq, grad LSTMParams)``.
    """
    batch, T, n_in = cache.x_seq.shape
    H = cache.params.hidden
    if upstream.shape != (batch, H):
        raise ShapeError(f"LSTM upstream {upstream.shape} != {(batch, H)}")
    w_h = cache.w[:, :H]
    da_all = np.empty((batch, T, 4 * H))
    dw_h = np.zeros((4 * H, H))
    dh = upstream
    dc = np.zeros((batch, H))
    for t in reversed(range(T)):
        step = cache.steps[t]
        da, dc = _preact_grad(dh, dc, step)
        da_all[:, t, :] = da
        dw_h += da.T @ step.z
        dh = da @ w_h
    dw_x = np.tensordot(da_all, cache.x_seq, axes=([0, 1], [0, 1]))
    db = da_all.sum(axis=(0, 1))
    grad_x = da_all @ cache.w[:, H:]
    return grad_x, LSTMParams.from_stacked(np.concatenate([dw_h, dw_x], axis=1), db)


# -- dense -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DenseParams:
    weight: np.ndarray  # [out, in]
    bias: np.ndarray  # [out]

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(f"dense weight {self.weight.shape} / bias {self.bias.shape} inconsistent")


@dataclass
class DenseCache:
    x: np.ndarray
    params: DenseParams


def dense_forward(x, p: DenseParams):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.weight.shape[1]:
        raise ShapeError(f"dense input {x.shape} does not match weight {p.weight.shape}")
    return x @ p.weight.T + p.bias, DenseCache(x, p)


def dense_backward(upstream, cache: DenseCache):
    """Return ``(grad_x, grad_weight, grad_bias)``."""
    w = cache.params.weight
    if upstream.shape != cache.x.shape[:-1] + (w.shape[0],):
        raise ShapeError(f"dense upstream {upstream.shape} inconsistent with input {cache.x.shape}")
    up2 = upstream.reshape(-1, w.shape[0])
    x2 = cache.x.reshape(-1, w.shape[1])
    return upstream @ w, up2.T @ x2, up2.sum(axis=0)


# -- dropout ---------------------------------------------------------------

def dropout_forward(x, rate: float, mode: Mode, rng: np.random.Generator | None = None):
    """Inverted dropout.  Returns ``(y, mask)``; ``mask`` already carries the 1/(1-rate) scale."""
    if not 0.0 <= rate < 1.0:
        raise InvalidRangeError(f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "eval" or rate == 0.0:
        return x, np.ones_like(x)
    if mode != "train":
        raise InvalidRangeError(f"unknown mode {mode!r}")
    if rng is None:
        raise InvalidRangeError("train-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(upstream, mask):
    return upstream * mask


# -- losses ----------------------------------------------------------------

def _loss_inputs(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.size != target.size:
        raise ShapeError(f"prediction size {pred.size} != target size {target.size}")
    if pred.size == 0:
        raise EmptyInputError("loss over zero samples")
    return pred, target.reshape(pred.shape)


def mse_loss(pred, target):
    """Mean squared error and its gradient with respect to ``pred``."""
    pred, target = _loss_inputs(pred, target)
    r = pred - target
    return float(np.mean(r * r)), 2.0 * r / r.size


def mae_loss(pred, target):
    """Mean absolute error; subgradient sign(0) = 0."""
    pred, target = _loss_inputs(pred, target)
    r = pred - target
    return float(np.mean(np.abs(r))), np.sign(r) / r.size


LOSSES: dict[str, Callable] = {"mse": mse_loss, "mae": mae_loss}
