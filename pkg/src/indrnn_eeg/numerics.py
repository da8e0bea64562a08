"""Dense-array arithmetic, activations, loss, RNG streams and initializers.

Tensors are plain ``numpy.ndarray`` values in row-major (C) order. Training
runs in float32; gradient checks switch to float64.
"""

from __future__ import annotations

import numpy as np

FLOAT32 = np.float32
FLOAT64 = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


def as_tensor(data, dtype=FLOAT32) -> np.ndarray:
    """Return a C-contiguous array of ``dtype`` holding ``data``."""
    return np.ascontiguousarray(data, dtype=dtype)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard expects identical shapes, got {a.shape} and {b.shape}")
    return a * b


# --- activations ---------------------------------------------------------

ACTIVATIONS = ("identity", "relu", "leaky_relu", "sigmoid", "tanh")


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x: np.ndarray, kind: str, alpha: float = 0.01) -> np.ndarray:
    """Apply an elementwise activation ``kind`` to ``x``."""
    if kind == "identity":
        return x.copy()
    if kind == "relu":
        return np.maximum(x, 0).astype(x.dtype, copy=False)
    if kind == "leaky_relu":
        if alpha <= 0:
            raise ValueError("leaky_relu requires alpha > 0")
        return np.where(x > 0, x, x * x.dtype.type(alpha))
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(x: np.ndarray, kind: str, alpha: float = 0.01) -> np.ndarray:
    """Pointwise derivative of ``activation(x, kind)`` evaluated at ``x``.

    ReLU's derivative at exactly 0 is 0; leaky ReLU's is ``alpha``.
    """
    one = x.dtype.type(1)
    if kind == "identity":
        return np.ones_like(x)
    if kind == "relu":
        return (x > 0).astype(x.dtype)
    if kind == "leaky_relu":
        if alpha <= 0:
            raise ValueError("leaky_relu requires alpha > 0")
        return np.where(x > 0, one, x.dtype.type(alpha))
    if kind == "sigmoid":
        s = sigmoid(x)
        return s * (one - s)
    if kind == "tanh":
        t = np.tanh(x)
        return one - t * t
    raise ValueError(f"unknown activation {kind!r}")


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of ``logits`` (B x C) against integer ``labels``.

    Returns ``(loss, grad_logits)`` with ``grad = (softmax - onehot) / B``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"logits {logits.shape} do not match labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError("labels out of range for the number of classes")
    batch = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(batch)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    grad = softmax(logits)
    grad[rows, labels] -= 1
    grad /= batch
    return loss, grad


# --- random streams --------------------------------------------------------


class SeededRng:
    """Deterministic PCG64 stream with derivable child streams.

    ``SeededRng(seed, stream=(i, j))`` is the stream for key ``(i, j)`` under
    master ``seed``; equal arguments always give equal draws.
    """

    def __init__(self, seed: int, stream: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def derive(self, *key: int) -> "SeededRng":
        """Independent stream keyed by ``key``, not consuming this stream."""
        return SeededRng(self.seed, self.stream + tuple(key))

    def uniform(self, low, high, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, stream={self.stream})"


def init_params(rng: SeededRng, shape, scheme: str = "he_fan_in", *, low: float = 0.0,
                high: float = 1.0, fan_in: int | None = None, dtype=FLOAT32) -> np.ndarray:
    """Draw a parameter tensor of ``shape``.

    ``scheme`` is ``"uniform"`` (on ``[low, high)``), ``"he_fan_in"`` (normal with
    variance ``2 / fan_in``; ``fan_in`` defaults to ``shape[0]``) or ``"zeros"``.
    """
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if any(s <= 0 for s in shape):
        raise ShapeError(f"invalid parameter shape {shape}")
    if scheme == "zeros":
        return np.zeros(shape, dtype=dtype)
    if scheme == "uniform":
        if low > high:
            raise ValueError(f"uniform bounds reversed: {low} > {high}")
        if low == high:
            return np.full(shape, low, dtype=dtype)
        return rng.uniform(low, high, shape).astype(dtype)
    if scheme == "he_fan_in":
        fan = shape[0] if fan_in is None else int(fan_in)
        if fan <= 0:
            raise ValueError("fan_in must be positive")
        return rng.normal(0.0, np.sqrt(2.0 / fan), shape).astype(dtype)
    raise ValueError(f"unknown init scheme {scheme!r}")
