"""Independent oracles shared by the unit and acceptance suites."""

from __future__ import annotations

import numpy as np

from indrnn_eeg import layers as L
from indrnn_eeg.model import ModelConfig, build_indrnn_model, build_lstm_baseline, grad_check

from conftest import numeric_grad, rel_err

TOL = 1e-4


def _project(out, r):
    return float((out * r).sum())


def check_indrnn_layer(rng):
    t, b, d, h = rng.integers(1, 9), rng.integers(1, 4), rng.integers(1, 7), rng.integers(1, 7)
    x = rng.normal(size=(t, b, d))
    p = L.IndRnnLayerParams(rng.normal(size=(d, h)), rng.uniform(-1, 1, h), rng.normal(size=h) * 0.1)
    h0 = rng.normal(size=(b, h))
    r = rng.normal(size=(t, b, h))
    hs, cache = L.indrnn_forward(p, x, h0)
    dw, du, db, dx, dh0 = L.indrnn_backward(cache, r)
    f = lambda: _project(L.indrnn_forward(p, x, h0)[0], r)
    pairs = [(dw, p.input_weights), (du, p.recurrent_weights), (db, p.bias), (dx, x), (dh0, h0)]
    return max(rel_err(a, numeric_grad(f, arr)) for a, arr in pairs)


def check_batchnorm(rng, mode="train"):
    t, b, f_ = rng.integers(1, 5), rng.integers(2, 4), rng.integers(1, 6)
    x = rng.normal(size=(t, b, f_)) * 2 + 1
    st = L.BatchNormState.create(f_, np.float64)
    st.gamma[:] = rng.normal(size=f_)
    st.beta[:] = rng.normal(size=f_)
    if mode == "eval":
        st.load_running(rng.normal(size=f_), rng.uniform(0.5, 2, f_))
        st.mode = "eval"
    r = rng.normal(size=x.shape)
    saved = (st.running_mean.copy(), st.running_var.copy())

    def f():
        st.running_mean[:], st.running_var[:] = saved
        return _project(L.batchnorm_forward(st, x)[0], r)

    _, cache = L.batchnorm_forward(st, x)
    dx, dg, dbeta = L.batchnorm_backward(cache, r)
    return max(rel_err(a, numeric_grad(f, arr)) for a, arr in [(dx, x), (dg, st.gamma), (dbeta, st.beta)])


def check_maxpool(rng):
    t, b, f_ = rng.integers(1, 9), rng.integers(1, 4), rng.integers(1, 7)
    x = rng.normal(size=(t, b, f_))
    out, cache = L.maxpool_time_forward(x)
    r = rng.normal(size=out.shape)
    dx = L.maxpool_time_backward(cache, r)
    return rel_err(dx, numeric_grad(lambda: _project(L.maxpool_time_forward(x)[0], r), x))


def check_avgpool(rng):
    t, b, f_ = rng.integers(1, 9), rng.integers(1, 4), rng.integers(1, 7)
    x = rng.normal(size=(t, b, f_))
    r = rng.normal(size=(b, f_))
    dx = L.avgpool_time_backward(x.shape, r)
    return rel_err(dx, numeric_grad(lambda: _project(L.avgpool_time_forward(x)[0], r), x))


def check_fc(rng, kind="relu"):
    b, i, o = rng.integers(1, 4), rng.integers(1, 7), rng.integers(1, 7)
    x = rng.normal(size=(b, i))
    p = L.FullyConnectedParams(rng.normal(size=(i, o)), rng.normal(size=o), kind)
    r = rng.normal(size=(b, o))
    _, cache = L.fc_forward(p, x)
    dw, db, dx = L.fc_backward(cache, r)
    f = lambda: _project(L.fc_forward(p, x)[0], r)
    return max(rel_err(a, numeric_grad(f, arr)) for a, arr in [(dw, p.weights), (db, p.bias), (dx, x)])


def check_time_distributed_fc(rng):
    t, b, i, o = rng.integers(1, 9), rng.integers(1, 4), rng.integers(1, 7), rng.integers(1, 7)
    x = rng.normal(size=(t, b, i))
    p = L.FullyConnectedParams(rng.normal(size=(i, o)), rng.normal(size=o), "relu")
    r = rng.normal(size=(t, b, o))
    _, cache = L.time_distributed_fc_forward(p, x)
    dw, db, dx = L.time_distributed_fc_backward(cache, r)
    f = lambda: _project(L.time_distributed_fc_forward(p, x)[0], r)
    return max(rel_err(a, numeric_grad(f, arr)) for a, arr in [(dw, p.weights), (db, p.bias), (dx, x)])


def check_lstm(rng):
    t, b, d, h = rng.integers(1, 9), rng.integers(1, 4), rng.integers(1, 7), rng.integers(1, 7)
    x = rng.normal(size=(t, b, d))
    p = L.LstmParams(rng.normal(size=(d, 4 * h)) * 0.5, rng.normal(size=(h, 4 * h)) * 0.5, rng.normal(size=4 * h))
    r = rng.normal(size=(t, b, h))
    _, cache = L.lstm_forward(p, x)
    grads = L.lstm_backward(cache, r)
    f = lambda: _project(L.lstm_forward(p, x)[0], r)
    arrs = [p.input_weights, p.recurrent_weights, p.bias, x]
    return max(rel_err(a, numeric_grad(f, arr)) for a, arr in zip(grads, arrs))


def check_conv1d(rng):
    t, b, ci, co, k = rng.integers(1, 9), rng.integers(1, 4), rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 6)
    x = rng.normal(size=(t, b, ci))
    p = L.Conv1dParams(rng.normal(size=(k, ci, co)), rng.normal(size=co))
    r = rng.normal(size=(t, b, co))
    _, cache = L.conv1d_forward(p, x)
    dw, db, dx = L.conv1d_backward(cache, r)
    f = lambda: _project(L.conv1d_forward(p, x)[0], r)
    return max(rel_err(a, numeric_grad(f, arr)) for a, arr in [(dw, p.weights), (db, p.bias), (dx, x)])


def check_indrnn_model(seed, blocks):
    """Full-model check (IndRNN blocks + BN + pools + head) via the library checker."""
    rng = np.random.default_rng(seed)
    t, b, c = int(rng.integers(2, 9)), int(rng.integers(2, 4)), int(rng.integers(1, 7))
    sizes = [int(v) for v in rng.integers(2, 7, blocks)]
    model = build_indrnn_model(ModelConfig(block_hidden_sizes=sizes, input_channels=c, fc1_hidden=int(rng.integers(2, 7))),
                               seed, np.float64)
    x = rng.normal(size=(t, b, c))
    labels = rng.integers(0, 2, b)
    return grad_check(model, x, labels, tolerance=TOL)


def check_lstm_model(seed):
    rng = np.random.default_rng(seed)
    model = build_lstm_baseline(3, hidden=4, dense=3, rng=seed, dtype=np.float64)
    return grad_check(model, rng.normal(size=(6, 2, 3)), rng.integers(0, 2, 2), tolerance=TOL)


LAYER_CHECKS = {
    "indrnn": check_indrnn_layer,
    "batchnorm": check_batchnorm,
    "batchnorm_eval": lambda rng: check_batchnorm(rng, "eval"),
    "maxpool": check_maxpool,
    "avgpool": check_avgpool,
    "fc_relu": check_fc,
    "fc_identity": lambda rng: check_fc(rng, "identity"),
    "fc_leaky": lambda rng: check_fc(rng, "leaky_relu"),
    "time_distributed_fc": check_time_distributed_fc,
    "lstm": check_lstm,
    "conv1d": check_conv1d,
}


# --- segmentation -------------------------------------------------------------


def brute_force_segments(duration, intervals, seconds, rate):
    """Label windows by testing a per-sample seizure mask directly.

    Sample ``i`` covers ``[i/rate, (i+1)/rate)``; a window is a seizure window
    when any covered sample-span overlaps an interval by positive measure.
    """
    total = int(round(duration * rate))
    length = int(round(seconds * rate))
    if length > total:
        return []
    mask = np.zeros(total, bool)
    for s, e in intervals:
        # samples whose span meets (s, e) with positive measure
        lo = int(np.floor(s * rate))
        hi = int(np.ceil(e * rate))
        for i in range(max(lo, 0), min(hi, total)):
            if min(e, (i + 1) / rate) - max(s, i / rate) > 0:
                mask[i] = True
    starts = list(range(0, total - length + 1, length))
    if starts[-1] + length < total and mask[starts[-1] + length:].any():
        starts.append(total - length)
    return [(st, int(mask[st:st + length].any())) for st in starts]


# --- published tables ----------------------------------------------------------

# Per-repetition rows (sensitivity, specificity, f1, precision, accuracy) and the
# printed Ave./Std. rows of the three cross-validation tables.
TABLE1_ROWS = [
    (0.9100, 0.8300, 0.8750, 0.8426, 0.8700),
    (0.8900, 0.9000, 0.8945, 0.8990, 0.8950),
    (0.9300, 0.8600, 0.8986, 0.8692, 0.8950),
    (0.7900, 0.8500, 0.8144, 0.8404, 0.8200),
    (0.8400, 0.8900, 0.8615, 0.8842, 0.8650),
    (0.8500, 0.8600, 0.8543, 0.8586, 0.8550),
    (0.8700, 0.8500, 0.8614, 0.8529, 0.8600),
    (0.8700, 0.9500, 0.9062, 0.9457, 0.9100),
    (0.9000, 0.7300, 0.8295, 0.7692, 0.8150),
    (0.8800, 0.9500, 0.9119, 0.9462, 0.9150),
]
TABLE1_AVE = (0.8730, 0.8670, 0.8707, 0.8708, 0.8700)
TABLE1_STD = (0.0377, 0.0602, 0.0310, 0.0498, 0.0328)

TABLE2_ROWS = [
    (0.8500, 0.8800, 0.8629, 0.8763, 0.8650),
    (0.7700, 0.8500, 0.8021, 0.8370, 0.8100),
    (0.7900, 0.8700, 0.8229, 0.8587, 0.8300),
    (0.7100, 0.9300, 0.7978, 0.9103, 0.8200),
    (0.8200, 0.8900, 0.8497, 0.8817, 0.8550),
    (0.9100, 0.7900, 0.8585, 0.8125, 0.8500),
    (0.8600, 0.8300, 0.8473, 0.8350, 0.8450),
    (0.8600, 0.8400, 0.8515, 0.8431, 0.8500),
    (0.9400, 0.7200, 0.8468, 0.7705, 0.8300),
    (0.9300, 0.8300, 0.8857, 0.8455, 0.8800),
]
TABLE2_AVE = (0.8440, 0.8430, 0.8425, 0.8470, 0.8435)
TABLE2_STD = (0.0696, 0.0550, 0.0259, 0.0368, 0.0201)

TABLE_CNN_ROWS = [
    (0.8400, 0.8500, 0.8442, 0.8485, 0.8450),
    (0.9200, 0.7700, 0.8558, 0.8000, 0.8450),
    (0.8000, 0.8400, 0.8163, 0.8333, 0.8200),
    (0.9000, 0.6900, 0.8145, 0.7438, 0.7950),
    (0.9200, 0.8000, 0.8679, 0.8214, 0.8600),
    (0.7900, 0.8500, 0.8144, 0.8404, 0.8200),
    (0.6300, 0.9700, 0.7590, 0.9545, 0.8000),
    (0.8500, 0.8700, 0.8586, 0.8673, 0.8600),
    (0.8700, 0.7700, 0.8286, 0.7909, 0.8200),
    (0.9600, 0.6900, 0.8458, 0.7559, 0.8250),
]
TABLE_CNN_AVE = (0.8480, 0.8100, 0.8305, 0.8256, 0.8290)
TABLE_CNN_STD = (0.0891, 0.0809, 0.0301, 0.0571, 0.0217)

# depth table: only mean±std is printed; the 15-layer row repeats the first table's aggregate
DEPTH_TABLE = {
    6: "0.8420±0.0387", 9: "0.8440±0.0338", 12: "0.8520±0.0424", 15: "0.8730±0.0377",
}
DEPTH15_ROW = ("0.8730±0.0377", "0.8670±0.0602", "0.8707±0.0310", "0.8708±0.0498", "0.8700±0.0328")

CV_TABLES = {
    "indrnn": (TABLE1_ROWS, TABLE1_AVE, TABLE1_STD),
    "lstm": (TABLE2_ROWS, TABLE2_AVE, TABLE2_STD),
    "cnn": (TABLE_CNN_ROWS, TABLE_CNN_AVE, TABLE_CNN_STD),
}

SEIZURE_COUNTS_BY_LENGTH = {23: 665, 30: 543, 35: 496, 40: 463, 45: 429, 50: 411, 55: 396,
                            60: 358, 70: 340, 80: 325, 90: 289, 100: 305, 110: 293}
