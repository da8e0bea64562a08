import numpy as np
import pytest

from indrnn_eeg.experiments import (CONFIG_KEYS, METRICS, DatasetError, ExperimentConfig, ExperimentError,
                                    aggregate, aggregate_values, build_balanced_dataset, compute_metrics,
                                    cv_document, cv_table_csv, dumps, make_config, parse_config_text,
                                    random_split, run_cv, sweep_depth, sweep_segment_lengths, sweep_table_csv,
                                    sweep_tidy_csv)
from indrnn_eeg.numerics import SeededRng
from indrnn_eeg.segmentation import CachedSegmentSource, Segment, SegmentCache

from oracles import CV_TABLES, DEPTH15_ROW, DEPTH_TABLE, TABLE1_AVE, TABLE1_STD


def test_first_table_row_from_counts():
    r = compute_metrics(tp=91, fp=17, tn=83, fn=9)
    got = [f"{getattr(r, m):.4f}" for m in ("sensitivity", "specificity", "f1", "precision", "accuracy")]
    assert got == ["0.9100", "0.8300", "0.8750", "0.8426", "0.8700"]


def test_metric_edge_cases():
    perfect = compute_metrics(10, 0, 10, 0)
    assert [getattr(perfect, m) for m in METRICS] == [1.0] * 5
    none_predicted = compute_metrics(0, 0, 10, 5)
    assert none_predicted.precision is None and none_predicted.f1 is None
    assert none_predicted.sensitivity == 0 and none_predicted.accuracy == pytest.approx(10 / 15)
    assert compute_metrics(0, 3, 0, 4).f1 is None   # precision and recall both zero
    assert compute_metrics(0, 0, 5, 0).sensitivity is None
    with pytest.raises(ValueError, match="all confusion counts are zero"):
        compute_metrics(0, 0, 0, 0)
    with pytest.raises(ValueError):
        compute_metrics(-1, 0, 1, 0)


@pytest.mark.parametrize("table", sorted(CV_TABLES))
def test_published_aggregates(table):
    rows, ave, std = CV_TABLES[table]
    for col in range(5):
        mean, sd = aggregate_values(row[col] for row in rows)
        assert abs(mean - ave[col]) <= 1e-4 and abs(sd - std[col]) <= 1e-4, (table, col)


def test_sample_std_would_not_match():
    # divide-by-N is the reading that fits the printed spread
    rows = CV_TABLES["indrnn"][0]
    col = np.array([r[0] for r in rows])
    assert abs(col.std(ddof=1) - TABLE1_STD[0]) > 1e-3


def test_depth_row_formatting():
    from indrnn_eeg.experiments import _pm
    rows = CV_TABLES["indrnn"][0]
    got = tuple(_pm(aggregate_values(r[c] for r in rows)) for c in range(5))
    assert got == DEPTH15_ROW and got[0] == DEPTH_TABLE[15]
    assert TABLE1_AVE[0] == 0.8730


def test_aggregate_skips_undefined():
    reps = [compute_metrics(0, 0, 10, 5), compute_metrics(5, 0, 5, 0)]
    agg = aggregate(reps)
    assert agg["precision"] == (1.0, 0.0)
    assert agg["accuracy"][0] == pytest.approx((10 / 15 + 1) / 2)
    assert aggregate_values([None]) == (None, None)
    with pytest.raises(ValueError):
        aggregate([])


def _segs(n_seiz, n_non):
    out = [Segment("c", "f", i, 10, 1, 1.0) for i in range(n_seiz)]
    return out + [Segment("c", "f", 1000 + i, 10, 0, 0.0) for i in range(n_non)]


def test_balanced_dataset():
    data = build_balanced_dataset(_segs(3, 10), SeededRng(1))
    assert len(data) == 6 and sum(s.label for s in data) == 3
    assert len(set(data)) == 6
    with pytest.raises(DatasetError, match="only 2 non-seizure segments for 3"):
        build_balanced_dataset(_segs(3, 2), SeededRng(1))
    with pytest.raises(DatasetError):
        build_balanced_dataset(_segs(0, 2), SeededRng(1))


def test_redraws_differ_across_streams():
    segs = _segs(20, 200)
    picks = {frozenset(build_balanced_dataset(segs, SeededRng(7, (rep,)).derive(0))) for rep in range(30)}
    assert len(picks) == 30


def test_non_seizure_draw_is_uniform():
    segs = _segs(1, 4)
    counts = np.zeros(4)
    for k in range(4000):
        counts[build_balanced_dataset(segs, SeededRng(k))[1].start_sample - 1000] += 1
    # chi-square with 3 dof, 99.9th percentile 16.27
    assert ((counts - 1000) ** 2 / 1000).sum() < 16.27


@pytest.mark.parametrize("n,sizes", [(1330, (931, 199, 200)), (10, (7, 1, 2)), (3, (2, 0, 1))])
def test_split_sizes(n, sizes):
    items = list(range(n))
    parts = random_split(items, SeededRng(0))
    assert tuple(map(len, parts)) == sizes
    assert sorted(sum(parts, [])) == items


def test_split_errors():
    with pytest.raises(DatasetError):
        random_split([1, 2], SeededRng(0))


def test_config_parsing_and_overrides():
    text = """
    # desk run
    repetitions = 3
    hidden_sizes = 16, 16
    depth = 2
    normalize = off
    learning_rate = default
    override.depth.6.epochs = 5
    override.length.30.learning_rate = 1e-3
    """
    cfg = make_config(parse_config_text(text))
    assert cfg.repetitions == 3 and cfg.hidden_sizes == [16, 16] and cfg.normalize is False
    assert cfg.effective("learning_rate") == 4e-4 and cfg.effective("epochs") == 100
    assert cfg.with_override("depth.6").epochs == 5
    assert cfg.with_override("length.30").learning_rate == 1e-3
    assert cfg.with_override("depth.9") is cfg
    assert cfg.echo()["epochs"] == 100 and "seed" in CONFIG_KEYS
    assert ExperimentConfig(model="lstm").effective("optimizer") == "rmsprop"
    for bad, msg in [("bogus = 1", "unknown key 'bogus'"), ("repetitions 3", "expected key = value"),
                     ("override.width.3.epochs = 1", "override keys")]:
        with pytest.raises(ValueError, match=msg):
            parse_config_text(bad)
    for bad in ({"repetitions": 0}, {"split": "60,20,10"}, {"model": "svm"}, {"decimation": 0}):
        with pytest.raises(ValueError):
            make_config(bad)


def toy_source(n_seiz=30, n_non=60, seconds=2, channels=2, seed=0):
    """Seizure segments carry a large 4 Hz rhythm on top of unit noise."""
    rng = np.random.default_rng(seed)
    length = seconds * 16
    segs, samples = [], []
    for i in range(n_seiz + n_non):
        label = int(i < n_seiz)
        x = rng.normal(size=(channels, length))
        if label:
            x += 3 * np.sin(2 * np.pi * 4 * np.arange(length) / 16 + rng.uniform(0, 6))
        segs.append(Segment("chb01", f"f{i % 5}", i * length, length, label, float(label)))
        samples.append(x.astype(np.float32))
    return CachedSegmentSource(SegmentCache([f"C{c}" for c in range(channels)], 16.0, 1, segs, samples))


def _tiny(**kw):
    base = dict(repetitions=2, depth=1, hidden_sizes=[8], fc1_hidden=8, epochs=4, batch_size=10,
                learning_rate=5e-3, seed=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_run_cv_smoke_and_documents():
    res = run_cv(_tiny(), toy_source())
    assert len(res.repetitions) == 2 and res.seizure_segments == 30 and res.non_seizure_segments == 60
    assert all(r.sizes == (42, 9, 9) for r in res.repetitions)
    first = res.repetitions[0].report
    assert first.tp + first.fp + first.tn + first.fn == 9
    text = cv_table_csv(res)
    lines = text.splitlines()
    assert lines[0] == "Item,Sensitivity,Specificity,F1 Score,Precision,Accuracy"
    assert [l.split(",")[0] for l in lines[1:]] == ["1", "2", "Ave.", "Std."]
    doc = cv_document(res)
    assert doc["repetitions"][1]["split_sizes"] == [42, 9, 9] and dumps(doc).endswith("\n")


def test_run_cv_deterministic():
    a = cv_table_csv(run_cv(_tiny(), toy_source()))
    b = cv_table_csv(run_cv(_tiny(), toy_source()))
    c = cv_table_csv(run_cv(_tiny(seed=4), toy_source()))
    assert a == b and a != c


def test_run_cv_wraps_dataset_errors():
    with pytest.raises(ExperimentError, match="repetition 1"):
        run_cv(_tiny(), toy_source(n_seiz=30, n_non=10))


def test_sweeps():
    src = toy_source()
    rows = sweep_depth(_tiny(repetitions=1, epochs=1), src, depths=[1, 2])
    assert [r.value for r in rows] == [1, 2]
    table = sweep_table_csv(rows).splitlines()
    assert table[0].startswith("IndRNN layers,Sensitivity") and table[1].startswith("1 layers,")
    seen = []

    def make_source(cfg):
        seen.append(cfg.segment_seconds)
        return src

    rows = sweep_segment_lengths(_tiny(repetitions=1, epochs=1), make_source, lengths=[2, 3], depth=1)
    assert seen == [2, 3]
    table = sweep_table_csv(rows).splitlines()
    assert table[0].startswith("Len.,Num. Sei.,Sensitivity") and table[1].startswith("2s,30,")
    tidy = sweep_tidy_csv(rows).splitlines()
    assert tidy[0] == "axis,value,metric,mean,std,seizure_segments" and len(tidy) == 1 + 2 * 5
