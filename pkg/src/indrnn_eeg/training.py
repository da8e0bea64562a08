"""Optimizers and the mini-batch training loop."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import Model
from .numerics import SeededRng, softmax_cross_entropy

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Numerical failure during training (non-finite loss or gradient)."""


class NonFiniteGradientError(TrainingError):
    pass


@dataclass
class AdamState:
    lr: float = 4e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class RmsPropState:
    lr: float = 7e-4
    rho: float = 0.9
    eps: float = 1e-8
    t: int = 0
    acc: dict[str, np.ndarray] = field(default_factory=dict)


def _check_finite(grads: dict[str, np.ndarray], epoch) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter block {name!r} (epoch {epoch})")


def _clip(params, clips):
    for name, bound in (clips or {}).items():
        np.clip(params[name], -bound, bound, out=params[name])


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              lr: float | None = None, clips: dict[str, float] | None = None, epoch=None) -> None:
    """Bias-corrected Adam update applied in place, then recurrent clipping."""
    _check_finite(grads, epoch)
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    _clip(params, clips)


def rmsprop_step(state: RmsPropState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                 lr: float | None = None, clips: dict[str, float] | None = None, epoch=None) -> None:
    """acc <- rho*acc + (1-rho)*g^2; p <- p - lr*g/(sqrt(acc)+eps)."""
    _check_finite(grads, epoch)
    lr = state.lr if lr is None else lr
    state.t += 1
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        acc = state.acc.setdefault(name, np.zeros_like(p))
        acc *= state.rho
        acc += (1 - state.rho) * g * g
        p -= (lr * g / (np.sqrt(acc) + state.eps)).astype(p.dtype, copy=False)
    _clip(params, clips)


OPTIMIZERS = {"adam": (AdamState, adam_step), "rmsprop": (RmsPropState, rmsprop_step)}


@dataclass
class TrainConfig:
    learning_rate: float = 4e-4
    batch_size: int = 30
    epochs: int = 100
    seed: int = 0
    optimizer: str = "adam"
    shuffle: bool = True
    epoch_selection: str = "best_validation_accuracy"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epoch_selection not in ("best_validation_accuracy", "last"):
            raise ValueError(f"unknown epoch_selection {self.epoch_selection!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_sensitivity: float | None
    val_specificity: float | None


@dataclass
class TrainResult:
    history: list[EpochRecord]
    selected_epoch: int
    optimizer_steps: int


HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_accuracy", "val_sensitivity", "val_specificity")


def history_csv(history: list[EpochRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for r in history:
        writer.writerow([r.epoch] + [_fmt(getattr(r, c)) for c in HISTORY_COLUMNS[1:]])
    return out.getvalue()


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def to_time_major(x: np.ndarray) -> np.ndarray:
    """(N, T, C) sample-major batch -> (T, N, C)."""
    return np.ascontiguousarray(np.transpose(x, (1, 0, 2)))


def predict(model: Model, x: np.ndarray, batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode ``(predicted labels, logits)`` for sample-major ``x``."""
    chunks = [model.forward(to_time_major(x[i:i + batch_size]), train=False)
              for i in range(0, len(x), batch_size)]
    logits = np.concatenate(chunks, axis=0)
    return logits.argmax(axis=1), logits


def evaluate(model: Model, x: np.ndarray, y: np.ndarray, batch_size: int = 64):
    """Loss and confusion counts ``(loss, tp, fp, tn, fn)`` in eval mode."""
    pred, logits = predict(model, x, batch_size)
    loss, _ = softmax_cross_entropy(logits.astype(np.float64), y)
    y = np.asarray(y)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    return loss, tp, fp, tn, fn


def _ratio(a, b):
    return a / b if b else None


def train(model: Model, train_set: tuple[np.ndarray, np.ndarray], val_set: tuple[np.ndarray, np.ndarray],
          config: TrainConfig, rng: SeededRng | None = None, on_epoch=None) -> TrainResult:
    """Mini-batch training with best-validation-accuracy checkpoint selection.

    Sets are sample-major ``(N, T, C)`` arrays with integer labels. The ragged
    tail of each shuffled epoch is dropped. On return the model holds the
    selected checkpoint's parameters.
    """
    x_train, y_train = train_set
    x_val, y_val = val_set
    n = len(x_train)
    batches = n // config.batch_size
    if batches < 1:
        raise ValueError(f"training set of {n} samples yields no batch of {config.batch_size}")
    rng = rng or SeededRng(config.seed)
    state_cls, step_fn = OPTIMIZERS[config.optimizer]
    opt = state_cls(lr=config.learning_rate)
    clips = model.recurrent_clips()

    history: list[EpochRecord] = []
    best_acc, best_epoch, best_snap = -1.0, 0, None
    steps = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        losses = []
        for b in range(batches):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            loss, _ = model.loss_and_grads(to_time_major(x_train[idx]), y_train[idx], train=True)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            params = dict(model.named_parameters())
            grads = dict(model.named_grads())
            step_fn(opt, params, grads, clips=clips, epoch=epoch)
            steps += 1
            losses.append(loss)
        val_loss, tp, fp, tn, fn = evaluate(model, x_val, y_val)
        acc = (tp + tn) / max(len(y_val), 1)
        rec = EpochRecord(epoch, float(np.mean(losses)), val_loss, acc, _ratio(tp, tp + fn), _ratio(tn, tn + fp))
        history.append(rec)
        log.debug("epoch %d loss %.4f val_acc %.4f", epoch, rec.train_loss, acc)
        if on_epoch:
            on_epoch(rec)
        if config.epoch_selection == "best_validation_accuracy" and acc > best_acc:
            best_acc, best_epoch, best_snap = acc, epoch, model.snapshot()
    if config.epoch_selection == "best_validation_accuracy" and best_snap is not None:
        model.restore(best_snap)
        selected = best_epoch
    else:
        selected = config.epochs
    return TrainResult(history, selected, steps)
