"""Forward/backward pairs for the sequence layers.

Sequences are laid out time-major as ``(T, B, F)``. Every ``*_forward``
returns ``(out, cache)`` and the matching ``*_backward`` consumes that cache.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import ShapeError, activation, activation_grad, sigmoid


# --- IndRNN ------------------------------------------------------------------


@dataclass
class IndRnnLayerParams:
    input_weights: np.ndarray      # (D, H)
    recurrent_weights: np.ndarray  # (H,)
    bias: np.ndarray               # (H,)
    activation: str = "relu"
    recurrent_clip: float = 1.0

    def __post_init__(self):
        d, h = self.input_weights.shape
        if d <= 0 or h <= 0:
            raise ShapeError("IndRNN needs input_dim > 0 and hidden > 0")
        if self.recurrent_weights.shape != (h,) or self.bias.shape != (h,):
            raise ShapeError(
                f"recurrent weights {self.recurrent_weights.shape} / bias {self.bias.shape} "
                f"do not match hidden size {h}")
        if self.recurrent_clip <= 0:
            raise ValueError("recurrent_clip must be positive")

    @property
    def hidden(self) -> int:
        return self.input_weights.shape[1]


def indrnn_forward(params: IndRnnLayerParams, x: np.ndarray, h0: np.ndarray | None = None):
    """Run h_t = act(x_t W + u * h_{t-1} + b) over all T steps.

    Returns the hidden sequence ``(T, B, H)`` and a cache for the backward pass.
    """
    if x.ndim != 3:
        raise ShapeError(f"IndRNN input must be (T, B, D), got {x.shape}")
    steps, batch, dim = x.shape
    w, u, b = params.input_weights, params.recurrent_weights, params.bias
    if dim != w.shape[0]:
        raise ShapeError(f"input feature size {dim} does not match input weights {w.shape}")
    if steps < 1:
        raise ShapeError("IndRNN needs at least one time step")
    hidden = w.shape[1]
    if h0 is None:
        h0 = np.zeros((batch, hidden), dtype=x.dtype)
    elif h0.shape != (batch, hidden):
        raise ShapeError(f"h0 shape {h0.shape} != {(batch, hidden)}")

    # input projection for all steps at once; only the diagonal recurrence loops
    proj = (x.reshape(steps * batch, dim) @ w).reshape(steps, batch, hidden) + b
    pre = np.empty_like(proj)
    hs = np.empty_like(proj)
    h = h0
    for t in range(steps):
        pre[t] = proj[t] + u * h
        h = activation(pre[t], params.activation)
        hs[t] = h
    cache = (x, params, h0, pre, hs)
    return hs, cache


def indrnn_backward(cache, grad_hs: np.ndarray):
    """Exact BPTT through one IndRNN layer.

    Returns ``(dW, du, db, dx, dh0)``.
    """
    x, params, h0, pre, hs = cache
    if grad_hs.shape != hs.shape:
        raise ShapeError(f"upstream gradient {grad_hs.shape} does not match cache {hs.shape}")
    steps, batch, dim = x.shape
    u = params.recurrent_weights
    hidden = u.shape[0]

    dpre = np.empty_like(pre)
    du = np.zeros_like(u)
    carry = np.zeros((batch, hidden), dtype=grad_hs.dtype)
    for t in range(steps - 1, -1, -1):
        dh = grad_hs[t] + carry
        dp = dh * activation_grad(pre[t], params.activation)
        dpre[t] = dp
        h_prev = hs[t - 1] if t > 0 else h0
        du += (dp * h_prev).sum(axis=0)
        carry = dp * u

    flat = dpre.reshape(steps * batch, hidden)
    dw = x.reshape(steps * batch, dim).T @ flat
    db = flat.sum(axis=0)
    dx = (flat @ params.input_weights.T).reshape(x.shape)
    return dw, du, db, dx, carry


# --- batch normalization -----------------------------------------------------


class BatchNormError(RuntimeError):
    pass


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.9
    mode: str = "train"
    stats_ready: bool = False

    @classmethod
    def create(cls, features: int, dtype=np.float32, **kw) -> "BatchNormState":
        return cls(gamma=np.ones(features, dtype), beta=np.zeros(features, dtype),
                   running_mean=np.zeros(features, dtype), running_var=np.ones(features, dtype), **kw)

    def load_running(self, mean: np.ndarray, var: np.ndarray) -> None:
        if np.any(var < 0):
            raise ValueError("running variance must be non-negative")
        self.running_mean[...] = mean
        self.running_var[...] = var
        self.stats_ready = True


def batchnorm_forward(state: BatchNormState, x: np.ndarray):
    """Normalize each feature over the merged time x batch axis."""
    features = x.shape[-1]
    if features != state.gamma.shape[0]:
        raise ShapeError(f"BN expects {state.gamma.shape[0]} features, got {features}")
    flat = x.reshape(-1, features)
    if state.mode == "train":
        if flat.shape[0] < 2:
            raise BatchNormError("train-mode batch norm needs at least 2 samples per feature")
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * mean
        state.running_var[...] = m * state.running_var + (1 - m) * var
        state.stats_ready = True
    elif state.mode == "eval":
        if not state.stats_ready:
            raise BatchNormError("eval-mode batch norm used before running statistics exist")
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown batch norm mode {state.mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (flat - mean) * inv_std
    out = (state.gamma * xhat + state.beta).reshape(x.shape).astype(x.dtype, copy=False)
    cache = (xhat, inv_std, state.gamma, state.mode, x.shape)
    return out, cache


def batchnorm_backward(cache, dout: np.ndarray):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, gamma, mode, shape = cache
    g = dout.reshape(xhat.shape)
    dbeta = g.sum(axis=0)
    dgamma = (g * xhat).sum(axis=0)
    dxhat = g * gamma
    if mode == "eval":
        dx = dxhat * inv_std
    else:
        n = xhat.shape[0]
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx.reshape(shape).astype(dout.dtype, copy=False), dgamma, dbeta


# --- temporal pooling --------------------------------------------------------


def pooled_length(steps: int, window: int = 2, stride: int = 2) -> int:
    """Ceil-mode output length; a trailing partial window still emits."""
    if steps < 1:
        raise ShapeError("pooling needs at least one time step")
    return -(-max(steps - window, 0) // stride) + 1


def maxpool_time_forward(x: np.ndarray, window: int = 2, stride: int = 2):
    steps = x.shape[0]
    out_len = pooled_length(steps, window, stride)
    padded_len = (out_len - 1) * stride + window
    # (out_len, window) time indices; positions past the end read -inf padding
    idx = np.arange(out_len)[:, None] * stride + np.arange(window)[None, :]
    padded = np.full((padded_len,) + x.shape[1:], -np.inf, dtype=x.dtype)
    padded[:steps] = x
    windows = padded[idx]                        # (out_len, window, B, F)
    arg = windows.argmax(axis=1)                 # first maximal index
    out = np.take_along_axis(windows, arg[:, None], axis=1)[:, 0]
    src = idx[np.arange(out_len)[:, None, None], arg]   # absolute time index
    return out, (src, x.shape)


def maxpool_time_backward(cache, dout: np.ndarray) -> np.ndarray:
    src, shape = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    b_idx = np.arange(shape[1])[None, :, None]
    f_idx = np.arange(shape[2])[None, None, :]
    np.add.at(dx, (src, b_idx, f_idx), dout)
    return dx


def avgpool_time_forward(x: np.ndarray):
    if x.shape[0] < 1:
        raise ShapeError("average pooling needs at least one time step")
    return x.mean(axis=0), x.shape


def avgpool_time_backward(shape, dout: np.ndarray) -> np.ndarray:
    steps = shape[0]
    return np.broadcast_to(dout / dout.dtype.type(steps), shape).copy()


# --- fully connected ---------------------------------------------------------


@dataclass
class FullyConnectedParams:
    weights: np.ndarray  # (in, out)
    bias: np.ndarray     # (out,)
    activation: str = "identity"
    alpha: float = 0.01

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"FC weights {self.weights.shape} and bias {self.bias.shape} disagree")


def fc_forward(params: FullyConnectedParams, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != params.weights.shape[0]:
        raise ShapeError(f"FC input {x.shape} does not match weights {params.weights.shape}")
    z = x @ params.weights + params.bias
    return activation(z, params.activation, params.alpha), (x, z, params)


def fc_backward(cache, dout: np.ndarray):
    """Returns ``(dW, db, dx)``."""
    x, z, params = cache
    dz = dout * activation_grad(z, params.activation, params.alpha)
    return x.T @ dz, dz.sum(axis=0), dz @ params.weights.T


def time_distributed_fc_forward(params: FullyConnectedParams, x: np.ndarray):
    steps, batch, dim = x.shape
    out, cache = fc_forward(params, x.reshape(steps * batch, dim))
    return out.reshape(steps, batch, -1), (cache, x.shape)


def time_distributed_fc_backward(cache, dout: np.ndarray):
    inner, shape = cache
    dw, db, dx = fc_backward(inner, dout.reshape(shape[0] * shape[1], -1))
    return dw, db, dx.reshape(shape)


# --- LSTM ----------------------------------------------------------------------


@dataclass
class LstmParams:
    input_weights: np.ndarray      # (D, 4H), gate order i, f, g, o
    recurrent_weights: np.ndarray  # (H, 4H)
    bias: np.ndarray               # (4H,)

    @property
    def hidden(self) -> int:
        return self.recurrent_weights.shape[0]


def lstm_forward(params: LstmParams, x: np.ndarray):
    steps, batch, dim = x.shape
    wx, wh, b = params.input_weights, params.recurrent_weights, params.bias
    if dim != wx.shape[0]:
        raise ShapeError(f"LSTM input size {dim} does not match weights {wx.shape}")
    hdim = params.hidden
    proj = (x.reshape(steps * batch, dim) @ wx).reshape(steps, batch, 4 * hdim) + b
    h = np.zeros((batch, hdim), dtype=x.dtype)
    c = np.zeros_like(h)
    hs = np.empty((steps, batch, hdim), dtype=x.dtype)
    cs = np.empty_like(hs)
    gates = np.empty((steps, batch, 4 * hdim), dtype=x.dtype)
    for t in range(steps):
        a = proj[t] + h @ wh
        i = sigmoid(a[:, :hdim])
        f = sigmoid(a[:, hdim:2 * hdim])
        g = np.tanh(a[:, 2 * hdim:3 * hdim])
        o = sigmoid(a[:, 3 * hdim:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, g, o], axis=1)
        hs[t] = h
        cs[t] = c
    return hs, (x, params, gates, hs, cs)


def lstm_backward(cache, grad_hs: np.ndarray):
    """Returns ``(dWx, dWh, db, dx)``."""
    x, params, gates, hs, cs = cache
    steps, batch, dim = x.shape
    hdim = params.hidden
    wh = params.recurrent_weights
    da_all = np.empty_like(gates)
    dh_next = np.zeros((batch, hdim), dtype=grad_hs.dtype)
    dc_next = np.zeros_like(dh_next)
    dwh = np.zeros_like(wh)
    for t in range(steps - 1, -1, -1):
        i, f, g, o = (gates[t][:, k * hdim:(k + 1) * hdim] for k in range(4))
        c = cs[t]
        c_prev = cs[t - 1] if t > 0 else np.zeros_like(c)
        h_prev = hs[t - 1] if t > 0 else np.zeros_like(c)
        tc = np.tanh(c)
        dh = grad_hs[t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
        da_all[t] = da
        dwh += h_prev.T @ da
        dh_next = da @ wh.T
        dc_next = dc * f
    flat = da_all.reshape(steps * batch, 4 * hdim)
    dwx = x.reshape(steps * batch, dim).T @ flat
    db = flat.sum(axis=0)
    dx = (flat @ params.input_weights.T).reshape(x.shape)
    return dwx, dwh, db, dx


# --- 1-D convolution over time -------------------------------------------------


@dataclass
class Conv1dParams:
    weights: np.ndarray  # (k, C_in, C_out)
    bias: np.ndarray     # (C_out,)

    @property
    def kernel(self) -> int:
        return self.weights.shape[0]


def _same_pad(kernel: int) -> tuple[int, int]:
    left = (kernel - 1) // 2
    return left, kernel - 1 - left


def conv1d_forward(params: Conv1dParams, x: np.ndarray):
    """Stride-1, zero 'same'-padded convolution (cross-correlation) over time."""
    steps, batch, cin = x.shape
    k, wcin, cout = params.weights.shape
    if cin != wcin:
        raise ShapeError(f"conv input channels {cin} != kernel channels {wcin}")
    left, right = _same_pad(k)
    xp = np.concatenate([np.zeros((left, batch, cin), x.dtype), x,
                         np.zeros((right, batch, cin), x.dtype)], axis=0)
    cols = np.stack([xp[j:j + steps] for j in range(k)], axis=2)  # (T, B, k, C)
    flat = cols.reshape(steps * batch, k * cin)
    out = (flat @ params.weights.reshape(k * cin, cout)).reshape(steps, batch, cout) + params.bias
    return out, (flat, params, x.shape)


def conv1d_backward(cache, dout: np.ndarray):
    """Returns ``(dW, db, dx)``."""
    flat, params, shape = cache
    steps, batch, cin = shape
    k, _, cout = params.weights.shape
    g = dout.reshape(steps * batch, cout)
    dw = (flat.T @ g).reshape(params.weights.shape)
    db = g.sum(axis=0)
    dcols = (g @ params.weights.reshape(k * cin, cout).T).reshape(steps, batch, k, cin)
    left, right = _same_pad(k)
    dxp = np.zeros((steps + k - 1, batch, cin), dtype=dout.dtype)
    for j in range(k):
        dxp[j:j + steps] += dcols[:, :, j, :]
    return dw, db, dxp[left:left + steps]


def activation_layer_forward(x: np.ndarray, kind: str, alpha: float = 0.01):
    return activation(x, kind, alpha), (x, kind, alpha)


def activation_layer_backward(cache, dout: np.ndarray) -> np.ndarray:
    x, kind, alpha = cache
    return dout * activation_grad(x, kind, alpha)

