"""Layer wrappers, model builders, gradient checking and checkpoint files."""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import layers as L
from .io_utils import atomic_write_bytes
from .numerics import FLOAT32, FLOAT64, SeededRng, init_params, softmax_cross_entropy


class Layer:
    """A layer owns named parameter arrays and the matching gradient arrays.

    Optimizers update ``params`` in place, so the arrays are shared with the
    per-layer parameter dataclasses used by the functional kernels.
    """

    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.cache = None

    def forward(self, x, train: bool):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def buffers(self) -> dict[str, np.ndarray]:
        """Non-trainable state saved with checkpoints."""
        return {}

    def clips(self) -> dict[str, float]:
        return {}


class IndRnnLayer(Layer):
    name = "indrnn"

    def __init__(self, p: L.IndRnnLayerParams):
        super().__init__()
        self.p = p
        self.params = {"W": p.input_weights, "u": p.recurrent_weights, "b": p.bias}

    def forward(self, x, train):
        out, self.cache = L.indrnn_forward(self.p, x)
        return out

    def backward(self, dout):
        dw, du, db, dx, _ = L.indrnn_backward(self.cache, dout)
        self.grads = {"W": dw, "u": du, "b": db}
        return dx

    def clips(self):
        return {"u": self.p.recurrent_clip}


class BatchNormLayer(Layer):
    name = "bn"

    def __init__(self, state: L.BatchNormState):
        super().__init__()
        self.state = state
        self.params = {"gamma": state.gamma, "beta": state.beta}

    def forward(self, x, train):
        self.state.mode = "train" if train else "eval"
        out, self.cache = L.batchnorm_forward(self.state, x)
        return out

    def backward(self, dout):
        dx, dg, db = L.batchnorm_backward(self.cache, dout)
        self.grads = {"gamma": dg, "beta": db}
        return dx

    def buffers(self):
        return {"running_mean": self.state.running_mean, "running_var": self.state.running_var}


class MaxPoolTime(Layer):
    name = "maxpool"

    def __init__(self, window=2, stride=2):
        super().__init__()
        self.window, self.stride = window, stride

    def forward(self, x, train):
        out, self.cache = L.maxpool_time_forward(x, self.window, self.stride)
        return out

    def backward(self, dout):
        return L.maxpool_time_backward(self.cache, dout)


class AvgPoolTime(Layer):
    name = "avgpool"

    def forward(self, x, train):
        out, self.cache = L.avgpool_time_forward(x)
        return out

    def backward(self, dout):
        return L.avgpool_time_backward(self.cache, dout)


class Dense(Layer):
    name = "fc"

    def __init__(self, p: L.FullyConnectedParams, time_distributed: bool = False):
        super().__init__()
        self.p = p
        self.time_distributed = time_distributed
        self.params = {"W": p.weights, "b": p.bias}

    def forward(self, x, train):
        fwd = L.time_distributed_fc_forward if self.time_distributed else L.fc_forward
        out, self.cache = fwd(self.p, x)
        return out

    def backward(self, dout):
        bwd = L.time_distributed_fc_backward if self.time_distributed else L.fc_backward
        dw, db, dx = bwd(self.cache, dout)
        self.grads = {"W": dw, "b": db}
        return dx


class LstmLayer(Layer):
    name = "lstm"

    def __init__(self, p: L.LstmParams):
        super().__init__()
        self.p = p
        self.params = {"Wx": p.input_weights, "Wh": p.recurrent_weights, "b": p.bias}

    def forward(self, x, train):
        out, self.cache = L.lstm_forward(self.p, x)
        return out

    def backward(self, dout):
        dwx, dwh, db, dx = L.lstm_backward(self.cache, dout)
        self.grads = {"Wx": dwx, "Wh": dwh, "b": db}
        return dx


class Conv1dLayer(Layer):
    name = "conv"

    def __init__(self, p: L.Conv1dParams):
        super().__init__()
        self.p = p
        self.params = {"W": p.weights, "b": p.bias}

    def forward(self, x, train):
        out, self.cache = L.conv1d_forward(self.p, x)
        return out

    def backward(self, dout):
        dw, db, dx = L.conv1d_backward(self.cache, dout)
        self.grads = {"W": dw, "b": db}
        return dx


class Activation(Layer):
    name = "act"

    def __init__(self, kind: str, alpha: float = 0.01):
        super().__init__()
        self.kind, self.alpha = kind, alpha

    def forward(self, x, train):
        out, self.cache = L.activation_layer_forward(x, self.kind, self.alpha)
        return out

    def backward(self, dout):
        return L.activation_layer_backward(self.cache, dout)


class Model:
    """A sequential stack mapping ``(T, B, C)`` input to ``(B, classes)`` logits."""

    def __init__(self, kind: str, config: dict, layers: list[Layer], dtype=FLOAT32):
        self.kind = kind
        self.config = config
        self.layers = layers
        self.dtype = np.dtype(dtype)
        self._names = []
        counts: dict[str, int] = {}
        for layer in layers:
            i = counts.get(layer.name, 0)
            counts[layer.name] = i + 1
            self._names.append(f"{layer.name}{i}")

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = np.asarray(x, dtype=self.dtype)
        for layer in self.layers:
            out = layer.forward(out, train)
        return out

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        g = dlogits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def loss_and_grads(self, x, labels, train: bool = True) -> tuple[float, np.ndarray]:
        logits = self.forward(x, train=train)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        self.backward(dlogits)
        return loss, logits

    def named_parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{ln}.{k}", v) for ln, layer in zip(self._names, self.layers) for k, v in layer.params.items()]

    def named_grads(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{ln}.{k}", layer.grads[k]) for ln, layer in zip(self._names, self.layers) for k in layer.params]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{ln}.{k}", v) for ln, layer in zip(self._names, self.layers) for k, v in layer.buffers().items()]

    def recurrent_clips(self) -> dict[str, float]:
        return {f"{ln}.{k}": c for ln, layer in zip(self._names, self.layers) for k, c in layer.clips().items()}

    def apply_constraints(self) -> None:
        params = dict(self.named_parameters())
        for name, bound in self.recurrent_clips().items():
            np.clip(params[name], -bound, bound, out=params[name])

    def batchnorm_states(self) -> list[L.BatchNormState]:
        return [layer.state for layer in self.layers if isinstance(layer, BatchNormLayer)]

    @property
    def parameter_count(self) -> int:
        return int(sum(p.size for _, p in self.named_parameters()))

    def snapshot(self) -> dict[str, np.ndarray]:
        """Copy of all parameters and buffers, for best-epoch checkpointing."""
        snap = {k: v.copy() for k, v in self.named_parameters() + self.named_buffers()}
        snap["__bn_ready__"] = np.array([s.stats_ready for s in self.batchnorm_states()], dtype=bool)
        return snap

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in self.named_parameters() + self.named_buffers():
            arr[...] = snap[name]
        for state, ready in zip(self.batchnorm_states(), snap["__bn_ready__"]):
            state.stats_ready = bool(ready)


# --- builders --------------------------------------------------------------------


DEFAULT_BLOCKS = [128] * 5 + [200] * 5 + [250] * 5
SWEEP_DEPTHS = (6, 9, 12, 15)


def hidden_sizes_for_depth(depth: int) -> list[int]:
    """Hidden sizes of the first ``depth`` blocks of the 128/200/250 schedule.

    Depths beyond 15 continue at 250.
    """
    if depth < 1:
        raise ValueError("depth must be positive")
    return (DEFAULT_BLOCKS + [250] * max(0, depth - 15))[:depth]


@dataclass
class ModelConfig:
    block_hidden_sizes: list[int] = field(default_factory=lambda: list(DEFAULT_BLOCKS))
    pool_window: int = 2
    pool_stride: int = 2
    fc1_hidden: int = 100
    num_classes: int = 2
    input_channels: int = 17
    recurrent_clip: float = 1.0
    activation: str = "relu"

    def __post_init__(self):
        if not self.block_hidden_sizes or any(h <= 0 for h in self.block_hidden_sizes):
            raise ValueError("block_hidden_sizes must be a non-empty list of positive sizes")
        if min(self.pool_window, self.pool_stride, self.fc1_hidden, self.num_classes, self.input_channels) <= 0:
            raise ValueError("model dimensions must be positive")


def _rng(seed_or_rng) -> SeededRng:
    return seed_or_rng if isinstance(seed_or_rng, SeededRng) else SeededRng(int(seed_or_rng))


def _dense(rng, fan_in, fan_out, act, dtype, alpha=0.01):
    return L.FullyConnectedParams(
        init_params(rng, (fan_in, fan_out), "he_fan_in", dtype=dtype),
        np.zeros(fan_out, dtype), act, alpha)


def build_indrnn_model(config: ModelConfig | None = None, rng=0, dtype=FLOAT32) -> Model:
    """Stack of [IndRNN -> BN -> max-pool] blocks, average pool, two-layer FC head."""
    config = config or ModelConfig()
    rng = _rng(rng)
    layers: list[Layer] = []
    dim = config.input_channels
    for hidden in config.block_hidden_sizes:
        p = L.IndRnnLayerParams(
            init_params(rng, (dim, hidden), "he_fan_in", dtype=dtype),
            init_params(rng, (hidden,), "uniform", low=0.0, high=1.0, dtype=dtype),
            np.zeros(hidden, dtype), config.activation, config.recurrent_clip)
        layers += [IndRnnLayer(p), BatchNormLayer(L.BatchNormState.create(hidden, dtype)),
                   MaxPoolTime(config.pool_window, config.pool_stride)]
        dim = hidden
    layers.append(AvgPoolTime())
    layers.append(Dense(_dense(rng, dim, config.fc1_hidden, "relu", dtype)))
    layers.append(Dense(_dense(rng, config.fc1_hidden, config.num_classes, "identity", dtype)))
    return Model("indrnn", asdict(config), layers, dtype)


def build_lstm_baseline(input_channels: int = 17, hidden: int = 120, dense: int = 60,
                        num_classes: int = 2, rng=0, dtype=FLOAT32) -> Model:
    """LSTM -> per-step dense (relu) -> average pool -> FC logits."""
    rng = _rng(rng)
    wx = init_params(rng, (input_channels, 4 * hidden), "uniform",
                     low=-1 / np.sqrt(hidden), high=1 / np.sqrt(hidden), dtype=dtype)
    wh = init_params(rng, (hidden, 4 * hidden), "uniform",
                     low=-1 / np.sqrt(hidden), high=1 / np.sqrt(hidden), dtype=dtype)
    b = np.zeros(4 * hidden, dtype)
    b[hidden:2 * hidden] = 1.0  # forget gate
    layers = [
        LstmLayer(L.LstmParams(wx, wh, b)),
        Dense(_dense(rng, hidden, dense, "relu", dtype), time_distributed=True),
        AvgPoolTime(),
        Dense(_dense(rng, dense, num_classes, "identity", dtype)),
    ]
    config = dict(input_channels=input_channels, hidden=hidden, dense=dense, num_classes=num_classes)
    return Model("lstm", config, layers, dtype)


CNN_CHANNELS = (100, 100, 200, 200, 260)
CNN_FC = (100, 50)
LEAKY_ALPHA = 0.01


def build_cnn_baseline(input_channels: int = 17, channels=CNN_CHANNELS, fc=CNN_FC, kernel: int = 5,
                       num_classes: int = 2, alpha: float = LEAKY_ALPHA, rng=0, dtype=FLOAT32) -> Model:
    """Five [conv -> LeakyReLU -> max-pool] stages, average pool, three FC layers."""
    rng = _rng(rng)
    layers: list[Layer] = []
    cin = input_channels
    for cout in channels:
        w = init_params(rng, (kernel, cin, cout), "he_fan_in", fan_in=kernel * cin, dtype=dtype)
        layers += [Conv1dLayer(L.Conv1dParams(w, np.zeros(cout, dtype))),
                   Activation("leaky_relu", alpha), MaxPoolTime(2, 2)]
        cin = cout
    layers.append(AvgPoolTime())
    for width in fc:
        layers.append(Dense(_dense(rng, cin, width, "leaky_relu", dtype, alpha)))
        cin = width
    layers.append(Dense(_dense(rng, cin, num_classes, "identity", dtype)))
    config = dict(input_channels=input_channels, channels=list(channels), fc=list(fc),
                  kernel=kernel, num_classes=num_classes, alpha=alpha)
    return Model("cnn", config, layers, dtype)


def build_model(kind: str, config: dict, rng=0, dtype=FLOAT32) -> Model:
    """Rebuild a model from ``(kind, config)`` as stored in checkpoints."""
    if kind == "indrnn":
        return build_indrnn_model(ModelConfig(**config), rng, dtype)
    if kind == "lstm":
        return build_lstm_baseline(rng=rng, dtype=dtype, **config)
    if kind == "cnn":
        return build_cnn_baseline(rng=rng, dtype=dtype, **config)
    raise ValueError(f"unknown model kind {kind!r}")


# --- gradient check ----------------------------------------------------------------


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def lines(self) -> list[str]:
        return [f"{'PASS' if e.passed else 'FAIL'} {e.name:<20} max rel err {e.max_rel_error:.3e}"
                for e in self.entries]


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def grad_check(model: Model, x: np.ndarray, labels, tolerance: float = 1e-4, step: float = 1e-5,
               corrupt: dict[str, float] | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences on every scalar parameter.

    ``corrupt`` scales the named analytic gradients (a negative control).
    """
    if model.dtype != FLOAT64:
        raise ValueError("gradient checks require a float64 model")
    x = np.asarray(x, FLOAT64)
    model.loss_and_grads(x, labels, train=True)
    analytic = {k: g.copy() for k, g in model.named_grads()}
    for name, factor in (corrupt or {}).items():
        analytic[name] = analytic[name] * factor

    def loss_at() -> float:
        logits = model.forward(x, train=True)
        return softmax_cross_entropy(logits, labels)[0]

    entries = []
    for name, p in model.named_parameters():
        numeric = np.zeros_like(p)
        flat, nflat = p.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_at()
            flat[i] = orig - step
            minus = loss_at()
            flat[i] = orig
            nflat[i] = (plus - minus) / (2 * step)
        err = float(relative_error(analytic[name], numeric).max())
        entries.append(GradCheckEntry(name, err, err < tolerance))
    return GradCheckReport(tolerance, entries)


# --- checkpoint files ------------------------------------------------------------

CHECKPOINT_MAGIC = b"IRNNCKPT"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1, np.dtype("bool"): 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class CheckpointError(ValueError):
    pass


def _write_tensor(buf, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype.kind == "f":
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)) + raw)
    buf.write(struct.pack("<BB", _DTYPE_CODES[np.dtype(arr.dtype)], arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    buf.write(np.ascontiguousarray(arr).tobytes())


def _read_exact(buf, n: int) -> bytes:
    pos = buf.tell()
    data = buf.read(n)
    if len(data) != n:
        raise CheckpointError(f"checkpoint truncated at byte {pos}: wanted {n} bytes, got {len(data)}")
    return data


def checkpoint_bytes(model: Model, extra: dict | None = None) -> bytes:
    """Serialize a model.

    Layout (little-endian): magic ``IRNNCKPT``; u16 version; u32 length +
    UTF-8 JSON config block; u32 tensor count; then per tensor u16 name
    length, name, u8 dtype code (0 f32, 1 f64, 2 bool), u8 ndim, u32 dims,
    raw data. Parameters come first in declaration order, then buffers.
    """
    header = {"kind": model.kind, "config": model.config, "dtype": model.dtype.name, "extra": extra or {}}
    cfg = json.dumps(header, sort_keys=True).encode("utf-8")
    snap = model.snapshot()
    names = [n for n, _ in model.named_parameters()] + [n for n, _ in model.named_buffers()] + ["__bn_ready__"]
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(cfg)) + cfg)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        _write_tensor(buf, name, snap[name])
    return buf.getvalue()


def model_from_checkpoint_bytes(data: bytes) -> tuple[Model, dict]:
    buf = io.BytesIO(data)
    if _read_exact(buf, len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<H", _read_exact(buf, 2))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<I", _read_exact(buf, 4))
    header = json.loads(_read_exact(buf, n).decode("utf-8"))
    (count,) = struct.unpack("<I", _read_exact(buf, 4))
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", _read_exact(buf, 2))
        name = _read_exact(buf, ln).decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(buf, 2))
        shape = struct.unpack(f"<{ndim}I", _read_exact(buf, 4 * ndim))
        if code not in _CODE_DTYPES:
            raise CheckpointError(f"tensor {name!r}: unknown dtype code {code}")
        dt = _CODE_DTYPES[code]
        size = int(np.prod(shape)) * dt.itemsize
        tensors[name] = np.frombuffer(_read_exact(buf, size), dtype=dt).reshape(shape)
    model = build_model(header["kind"], header["config"], rng=0, dtype=np.dtype(header["dtype"]))
    expected = [n for n, _ in model.named_parameters() + model.named_buffers()] + ["__bn_ready__"]
    if sorted(expected) != sorted(tensors):
        raise CheckpointError("checkpoint tensors do not match the model layout")
    for name, arr in model.named_parameters() + model.named_buffers():
        if arr.shape != tensors[name].shape:
            raise CheckpointError(f"shape mismatch for {name}: {tensors[name].shape} vs {arr.shape}")
    model.restore(tensors)
    return model, header.get("extra", {})


def save_checkpoint(model: Model, path, extra: dict | None = None) -> None:
    atomic_write_bytes(path, checkpoint_bytes(model, extra))


def load_checkpoint(path) -> tuple[Model, dict]:
    with open(path, "rb") as fh:
        return model_from_checkpoint_bytes(fh.read())
