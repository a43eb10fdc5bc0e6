"""Minimal differentiable-layer toolkit on numpy.

A fixed menu of layers (dense, LSTM cell, 1-d convolution, batch norm,
softmax with cross entropy) with hand-derived backward passes, plus Adam
and a central-finite-difference gradient checker. There is no general
autodiff here on purpose: the networks in this package compose a small,
known set of blocks, and every backward pass is held to a 1e-4 relative
error bound against finite differences in the test suite.

Conventions: batch axis first, features last. Forward functions return
``(output, cache)``; the matching backward takes ``(d_output, cache)``
and returns input gradients followed by parameter gradients in the same
order the forward took them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError

__all__ = [
    "ParamStore",
    "AdamState",
    "adam_step",
    "dense_forward",
    "dense_backward",
    "relu_forward",
    "relu_backward",
    "lstm_cell_forward",
    "lstm_cell_backward",
    "conv1d_forward",
    "conv1d_backward",
    "batchnorm_forward",
    "batchnorm_backward",
    "softmax",
    "softmax_cross_entropy",
    "finite_diff_check",
    "init_dense",
    "init_lstm",
    "init_conv1d",
    "init_batchnorm",
]

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


class ParamStore:
    """Named parameter tensors with a fixed dtype and stable ordering.

    Insertion order is the serialization order and the iteration order
    everywhere, so checkpoints and optimizer state line up by name.
    Arrays whose names start with an underscore after the final dot
    (e.g. ``v.fc1._running_mean``) are buffers: saved and loaded but not
    touched by the optimizer.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, np.ndarray] = {}

    def add(self, name: str, array: np.ndarray) -> np.ndarray:
        if name in self._params:
            raise ParameterError(f"duplicate parameter name {name!r}")
        if any(ch.isspace() for ch in name):
            raise ParameterError(f"parameter name {name!r} contains whitespace")
        arr = np.ascontiguousarray(array, dtype=self.dtype)
        self._params[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._params:
            raise ParameterError(f"unknown parameter {name!r}")
        if value.shape != self._params[name].shape:
            raise ParameterError(f"shape mismatch for {name!r}")
        self._params[name] = np.ascontiguousarray(value, dtype=self.dtype)

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    @staticmethod
    def is_buffer(name: str) -> bool:
        return name.rsplit(".", 1)[-1].startswith("_")

    def trainable_names(self) -> list[str]:
        return [n for n in self._params if not self.is_buffer(n)]

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(self._params[n]) for n in self.trainable_names()}

    def copy(self) -> "ParamStore":
        other = ParamStore(self.dtype)
        for n, a in self._params.items():
            other.add(n, a.copy())
        return other

    def astype(self, dtype) -> "ParamStore":
        other = ParamStore(dtype)
        for n, a in self._params.items():
            other.add(n, a)
        return other


def init_dense(store: ParamStore, prefix: str, fan_in: int, fan_out: int,
               rng: np.random.Generator, zero: bool = False) -> None:
    """Fan-in-scaled uniform weights, zero bias. ``zero`` makes both zero
    (used for final heads so fresh networks emit uniform distributions)."""
    if zero:
        w = np.zeros((fan_in, fan_out))
    else:
        bound = math.sqrt(1.0 / max(1, fan_in))
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    store.add(prefix + ".w", w)
    store.add(prefix + ".b", np.zeros(fan_out))


def init_lstm(store: ParamStore, prefix: str, width: int, rng: np.random.Generator) -> None:
    """Single-input LSTM cell params: gate matrix (width, 4*width), gate
    order (input, forget, cell, output); forget bias starts at +1."""
    bound = math.sqrt(1.0 / max(1, width))
    store.add(prefix + ".w", rng.uniform(-bound, bound, size=(width, 4 * width)))
    b = np.zeros(4 * width)
    b[width : 2 * width] = 1.0
    store.add(prefix + ".b", b)


def init_conv1d(store: ParamStore, prefix: str, filter_size: int, c_in: int, c_out: int,
                rng: np.random.Generator) -> None:
    bound = math.sqrt(1.0 / max(1, filter_size * c_in))
    store.add(prefix + ".k", rng.uniform(-bound, bound, size=(filter_size, c_in, c_out)))
    store.add(prefix + ".b", np.zeros(c_out))


def init_batchnorm(store: ParamStore, prefix: str, width: int) -> None:
    store.add(prefix + ".gamma", np.ones(width))
    store.add(prefix + ".beta", np.zeros(width))
    store.add(prefix + "._running_mean", np.zeros(width))
    store.add(prefix + "._running_var", np.ones(width))


# ---------------------------------------------------------------- layers


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def dense_backward(dy: np.ndarray, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


def relu_forward(x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(dy: np.ndarray, cache):
    return dy * cache


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_cell_forward(x: np.ndarray, c: np.ndarray, w: np.ndarray, b: np.ndarray):
    """One step of a single-input LSTM cell.

    The incoming activation ``x`` plays the role of both input and
    recurrent state: gates are computed from ``x`` alone, and the
    returned ``h`` is fed back as the next step's ``x``.
    """
    width = x.shape[-1]
    gates = x @ w + b
    i = _sigmoid(gates[..., :width])
    f = _sigmoid(gates[..., width : 2 * width])
    g = np.tanh(gates[..., 2 * width : 3 * width])
    o = _sigmoid(gates[..., 3 * width :])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h = o * tanh_c
    return h, c_new, (x, c, w, i, f, g, o, tanh_c)


def lstm_cell_backward(dh: np.ndarray, dc_new: np.ndarray, cache):
    x, c, w, i, f, g, o, tanh_c = cache
    dc_total = dc_new + dh * o * (1.0 - tanh_c * tanh_c)
    do = dh * tanh_c
    di = dc_total * g
    df = dc_total * c
    dg = dc_total * i
    dc = dc_total * f
    dgates = np.concatenate(
        [
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ],
        axis=-1,
    )
    dx = dgates @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dgates.reshape(-1, dgates.shape[-1])
    db = dgates.reshape(-1, dgates.shape[-1]).sum(axis=0)
    return dx, dc, dw, db


def _im2col(x: np.ndarray, filter_size: int) -> np.ndarray:
    # x (B, S, C) -> (B, S, filter_size*C) with zero 'same' padding.
    b, s, c = x.shape
    pad = filter_size // 2
    xp = np.zeros((b, s + 2 * pad, c), dtype=x.dtype)
    xp[:, pad : pad + s, :] = x
    cols = np.empty((b, s, filter_size * c), dtype=x.dtype)
    for tap in range(filter_size):
        cols[:, :, tap * c : (tap + 1) * c] = xp[:, tap : tap + s, :]
    return cols


def conv1d_forward(x: np.ndarray, kernel: np.ndarray, b: np.ndarray):
    """'Same'-padded 1-d convolution. x (B, S, C_in), kernel
    (filter, C_in, C_out), output (B, S, C_out). Odd filter sizes only."""
    filter_size, c_in, c_out = kernel.shape
    if filter_size % 2 == 0:
        raise ParameterError("filter size must be odd for same padding")
    if x.shape[-1] != c_in:
        raise ParameterError(f"input has {x.shape[-1]} channels, kernel wants {c_in}")
    cols = _im2col(x, filter_size)
    w2 = kernel.reshape(filter_size * c_in, c_out)
    y = cols @ w2 + b
    return y, (cols, kernel, x.shape)


def conv1d_backward(dy: np.ndarray, cache):
    cols, kernel, x_shape = cache
    filter_size, c_in, c_out = kernel.shape
    b, s, _ = x_shape
    w2 = kernel.reshape(filter_size * c_in, c_out)
    dcols = dy @ w2.T
    dw2 = cols.reshape(-1, filter_size * c_in).T @ dy.reshape(-1, c_out)
    db = dy.reshape(-1, c_out).sum(axis=0)
    pad = filter_size // 2
    dxp = np.zeros((b, s + 2 * pad, c_in), dtype=dy.dtype)
    for tap in range(filter_size):
        dxp[:, tap : tap + s, :] += dcols[:, :, tap * c_in : (tap + 1) * c_in]
    dx = dxp[:, pad : pad + s, :]
    return dx, dw2.reshape(filter_size, c_in, c_out), db


def batchnorm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray,
                      running_mean: np.ndarray, running_var: np.ndarray,
                      training: bool, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """Normalize over all leading axes, per trailing feature channel.

    In training mode batch statistics are used and the running buffers
    are updated in place (biased variance). In eval mode the buffers are
    used and nothing is mutated.
    """
    width = x.shape[-1]
    flat = x.reshape(-1, width)
    if training:
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = gamma * xhat + beta
    return y, (xhat, gamma, inv_std, training)


def batchnorm_backward(dy: np.ndarray, cache):
    xhat, gamma, inv_std, training = cache
    width = dy.shape[-1]
    dxhat = dy * gamma
    flat_dxhat = dxhat.reshape(-1, width)
    flat_xhat = xhat.reshape(-1, width)
    dgamma = (dy.reshape(-1, width) * flat_xhat).sum(axis=0)
    dbeta = dy.reshape(-1, width).sum(axis=0)
    if training:
        n = flat_xhat.shape[0]
        dx = (inv_std / n) * (
            n * flat_dxhat
            - flat_dxhat.sum(axis=0)
            - flat_xhat * (flat_dxhat * flat_xhat).sum(axis=0)
        )
        dx = dx.reshape(dy.shape)
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, target: np.ndarray, eps: float = 1e-12):
    """Mean cross entropy between softmax(logits) and target rows.

    Returns (loss, probs, dlogits) where dlogits is the gradient of the
    mean loss with respect to the logits: (probs - target) / rows.
    """
    probs = softmax(logits, axis=-1)
    rows = int(np.prod(probs.shape[:-1])) or 1
    loss = float(-(target * np.log(np.maximum(probs, eps))).sum() / rows)
    dlogits = (probs - target) / rows
    return loss, probs, dlogits


# ------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    """Per-parameter first/second moment estimates plus the step count."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @staticmethod
    def for_store(store: ParamStore, lr: float = 0.001) -> "AdamState":
        state = AdamState(lr=lr)
        for name in store.trainable_names():
            state.m[name] = np.zeros_like(store[name], dtype=np.float64)
            state.v[name] = np.zeros_like(store[name], dtype=np.float64)
        return state


def adam_step(store: ParamStore, grads: dict[str, np.ndarray], state: AdamState) -> None:
    """One bias-corrected Adam update, in place.

    ``grads`` must cover exactly the trainable parameters of the store;
    callers pass explicit zeros for parameters that received no signal.
    """
    expected = set(store.trainable_names())
    got = set(grads)
    if expected != got:
        missing = sorted(expected - got)[:3]
        extra = sorted(got - expected)[:3]
        raise ContractError(f"gradient keys mismatch (missing={missing}, extra={extra})")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name in store.trainable_names():
        g = grads[name].astype(np.float64)
        if g.shape != store[name].shape:
            raise ContractError(f"gradient shape mismatch for {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        store[name] = store[name] - update.astype(store.dtype)


# ---------------------------------------------------------- grad checker


def finite_diff_check(loss_fn, store: ParamStore, analytic: dict[str, np.ndarray],
                      rng: np.random.Generator, samples_per_tensor: int = 4,
                      eps: float = 1e-5, names: list[str] | None = None) -> float:
    """Central-difference check of ``analytic`` against ``loss_fn``.

    ``loss_fn()`` must recompute the scalar loss from the store's current
    values. For each checked tensor a random subsample of entries is
    perturbed in place by +-eps (scaled by entry magnitude) and the
    two-sided slope is compared. Returns the maximum relative error
    max |fd - an| / max(|fd|, |an|, 1e-4) over the sampled entries.

    Run this in double precision; float32 roundoff swamps the bound.
    """
    if store.dtype != np.float64:
        raise ParameterError("finite_diff_check requires a float64 store")
    worst = 0.0
    for name in names if names is not None else list(analytic):
        arr = store[name]
        if arr.size == 0:
            continue
        flat_idx = rng.choice(arr.size, size=min(samples_per_tensor, arr.size), replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(int(fi), arr.shape)
            orig = arr[idx]
            h = eps * max(1.0, abs(float(orig)))
            arr[idx] = orig + h
            up = loss_fn()
            arr[idx] = orig - h
            down = loss_fn()
            arr[idx] = orig
            fd = (up - down) / (2.0 * h)
            an = float(analytic[name][idx])
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-4)
            worst = max(worst, err)
    return worst
