import numpy as np
import pytest

from indrnn_eeg.model import ModelConfig, build_indrnn_model
from indrnn_eeg.numerics import SeededRng
from indrnn_eeg.training import (AdamState, HISTORY_COLUMNS, NonFiniteGradientError, RmsPropState, TrainConfig,
                                 adam_step, evaluate, history_csv, rmsprop_step, train)


@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3, -250.0])
def test_adam_first_step_is_lr_times_sign(g):
    p = {"w": np.array([1.0])}
    adam_step(AdamState(lr=0.01), p, {"w": np.array([g])})
    assert p["w"][0] == pytest.approx(1.0 - 0.01 * np.sign(g), abs=1e-7)


def test_zero_gradient_leaves_params_unchanged():
    for state, step in ((AdamState(), adam_step), (RmsPropState(), rmsprop_step)):
        p = {"w": np.array([0.3, -1.2])}
        for _ in range(5):
            step(state, p, {"w": np.zeros(2)})
        assert p["w"].tolist() == [0.3, -1.2]


def test_adam_state_counts_steps():
    st = AdamState()
    p = {"w": np.ones(3)}
    for i in range(4):
        adam_step(st, p, {"w": np.ones(3)})
        assert st.t == i + 1 and (st.v["w"] >= 0).all()


def test_rmsprop_accumulator_and_steady_state():
    st = RmsPropState(lr=0.1, rho=0.9)
    p = {"w": np.array([0.0])}
    g = 0.5
    acc_prev, steps = 0.0, []
    for k in range(1, 80):
        before = p["w"][0]
        rmsprop_step(st, p, {"w": np.array([g])})
        acc = st.acc["w"][0]
        # closed form of the recurrence acc_k = rho acc_{k-1} + (1-rho) g^2 from 0
        assert acc == pytest.approx(g * g * (1 - 0.9 ** k), rel=1e-12)
        assert acc >= acc_prev
        acc_prev = acc
        steps.append(before - p["w"][0])
    assert steps[-1] == pytest.approx(0.1 * g / (abs(g) + 1e-8), rel=1e-3)


def test_non_finite_gradient_names_block_and_epoch():
    with pytest.raises(NonFiniteGradientError, match=r"'indrnn0.u'.*epoch 3"):
        adam_step(AdamState(), {"indrnn0.u": np.ones(2)}, {"indrnn0.u": np.array([1.0, np.nan])}, epoch=3)


def test_recurrent_clip_after_step():
    p = {"u": np.array([0.9995, -0.9995, 0.2])}
    adam_step(AdamState(lr=0.5), p, {"u": np.array([-1.0, 1.0, 1.0])}, clips={"u": 1.0})
    assert np.abs(p["u"]).max() <= 1.0
    assert p["u"][:2].tolist() == [1.0, -1.0]


def _toy(seed, n=60, t=16, c=2):
    rng = SeededRng(seed)
    y = rng.integers(0, 2, n)
    x = rng.normal(size=(n, t, c)) + (2.0 * y - 1.0)[:, None, None] * 1.5
    return x.astype(np.float32), y


def _small(seed, sizes=(8,), c=2):
    return build_indrnn_model(ModelConfig(block_hidden_sizes=list(sizes), input_channels=c, fc1_hidden=8), seed)


def test_separable_toy_reaches_full_validation_accuracy():
    xt, yt = _toy(0)
    xv, yv = _toy(1, n=30)
    model = _small(0)
    res = train(model, (xt, yt), (xv, yv), TrainConfig(learning_rate=1e-2, batch_size=10, epochs=30, seed=0))
    assert max(h.val_accuracy for h in res.history) == 1.0
    assert res.history[res.selected_epoch - 1].val_accuracy == 1.0
    _, tp, fp, tn, fn = evaluate(model, xv, yv)
    assert tp + tn == 30


def test_step_count_drops_ragged_tail():
    xt, yt = _toy(0, n=47)
    xv, yv = _toy(1, n=10)
    for epochs, batch in ((1, 47), (3, 10), (2, 30)):
        res = train(_small(0), (xt, yt), (xv, yv), TrainConfig(learning_rate=1e-3, batch_size=batch, epochs=epochs))
        assert res.optimizer_steps == epochs * (47 // batch)
        assert [h.epoch for h in res.history] == list(range(1, epochs + 1))


def test_single_step_updates_each_parameter_once():
    xt, yt = _toy(0, n=10)
    model = _small(0)
    before = {k: v.copy() for k, v in model.named_parameters()}
    res = train(model, (xt, yt), (xt, yt), TrainConfig(learning_rate=1e-3, batch_size=10, epochs=1,
                                                       epoch_selection="last"))
    assert res.optimizer_steps == 1
    moved = [k for k, v in model.named_parameters() if not np.array_equal(v, before[k])]
    assert set(moved) == set(before)


def test_too_small_training_set_is_rejected():
    xt, yt = _toy(0, n=5)
    with pytest.raises(ValueError, match="no batch"):
        train(_small(0), (xt, yt), (xt, yt), TrainConfig(batch_size=6, epochs=1))


def test_training_is_deterministic():
    xt, yt = _toy(2)
    xv, yv = _toy(3, n=20)
    runs = []
    for _ in range(2):
        model = _small(4)
        res = train(model, (xt, yt), (xv, yv), TrainConfig(learning_rate=3e-3, batch_size=10, epochs=3, seed=9))
        runs.append((history_csv(res.history), b"".join(p.tobytes() for _, p in model.named_parameters())))
    assert runs[0] == runs[1]


def test_selected_checkpoint_reproduces_validation_metrics():
    xt, yt = _toy(5)
    xv, yv = _toy(6, n=20)
    model = _small(1)
    res = train(model, (xt, yt), (xv, yv), TrainConfig(learning_rate=3e-3, batch_size=10, epochs=6, seed=1))
    rec = res.history[res.selected_epoch - 1]
    loss, tp, fp, tn, fn = evaluate(model, xv, yv)
    assert loss == rec.val_loss and (tp + tn) / 20 == rec.val_accuracy
    assert rec.val_accuracy == max(h.val_accuracy for h in res.history)
    best = [h.epoch for h in res.history if h.val_accuracy == rec.val_accuracy]
    assert res.selected_epoch == best[0]


@pytest.mark.parametrize("seed", range(10))
def test_frozen_batch_loss_decreases(seed):
    x, y = _toy(seed, n=12)
    model = _small(seed)
    xt = np.swapaxes(x, 0, 1)
    state = AdamState(lr=1e-3)
    losses = []
    for _ in range(6):
        loss, _ = model.loss_and_grads(xt, y)
        losses.append(loss)
        adam_step(state, dict(model.named_parameters()), dict(model.named_grads()), clips=model.recurrent_clips())
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_history_csv_layout():
    xt, yt = _toy(0, n=20)
    res = train(_small(0), (xt, yt), (xt, yt), TrainConfig(learning_rate=1e-3, batch_size=10, epochs=2))
    lines = history_csv(res.history).splitlines()
    assert lines[0] == ",".join(HISTORY_COLUMNS)
    assert len(lines) == 3 and lines[1].startswith("1,")


def test_train_config_validation():
    for bad in (dict(learning_rate=0), dict(batch_size=0), dict(epochs=0), dict(optimizer="sgd"),
                dict(epoch_selection="best_loss")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)
