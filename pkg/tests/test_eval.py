import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sigrec.eval import (
    ConfusionMatrix,
    EfficiencyInput,
    class_shares,
    confusion,
    cpu_utilization,
    efficiency,
    format_ablation,
    make_grid,
    precision_recall,
    run_ablation,
    time_inference,
    weighted_accuracy,
)
from sigrec.ingest import split_dataset
from sigrec.model import ModelConfig, build_model
from sigrec.synth import SynthConfig, synthetic_dataset
from sigrec.tokenize import build_vocab, instruction_words

MTL_ACC = [0.9725, 0.9587, 0.9682, 0.9846]
STL_ACC = [0.9674, 0.9546, 0.9623, 0.9776]


def test_confusion_basics():
    cm = confusion([0, 1, 2], [0, 1, 2], "pc")
    assert np.array_equal(cm.counts, np.diag([1, 1, 1] + [0] * 7))
    cm = confusion(["int", "int", "char"], ["int", "char", "char"], "pt1")
    assert cm.counts.sum() == 3
    with pytest.raises(ValueError):
        confusion([], [], "pc")
    with pytest.raises(ValueError):
        confusion([0], [0, 1], "pc")


def test_precision_recall_two_class():
    cm = ConfusionMatrix("x", np.array([[1, 1], [0, 2]]))
    (p0, r0), (p1, r1) = precision_recall(cm)
    assert (p0, r0) == (1.0, 0.5)
    assert p1 == pytest.approx(2 / 3) and r1 == 1.0


def test_precision_recall_absent_class_is_undefined():
    cm = confusion([0, 1], [0, 1], "pc")
    pr = precision_recall(cm)
    assert pr[0] == (1.0, 1.0)
    assert pr[5] == (None, None)


def test_weighted_accuracy_examples():
    cm = confusion([0, 1, 1, 1], [0, 0, 1, 1], "pc")
    assert weighted_accuracy(cm) == pytest.approx(0.75)
    assert weighted_accuracy(confusion([2, 3], [2, 3], "pc")) == 1.0
    assert weighted_accuracy(confusion([1, 0], [0, 1], "pc")) == 0.0
    assert abs(class_shares(cm).sum() - 1) < 1e-9


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_weighted_accuracy_equals_fraction_correct(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 300))
    true = rng.integers(0, 12, n)
    pred = np.where(rng.random(n) < 0.6, true, rng.integers(0, 12, n))
    cm = confusion(pred, true, "pt1")
    assert abs(weighted_accuracy(cm) - np.mean(pred == true)) < 1e-12
    perm = rng.permutation(n)
    assert weighted_accuracy(confusion(pred[perm], true[perm], "pt1")) == pytest.approx(weighted_accuracy(cm), abs=1e-15)


def test_efficiency_reported_values():
    assert efficiency(EfficiencyInput(MTL_ACC, [(94.84, 0.7858)])) == pytest.approx(0.0521, abs=1e-4)
    assert efficiency(EfficiencyInput(STL_ACC, [(216.05, 0.7125)])) == pytest.approx(0.0251, abs=1e-4)
    assert efficiency(EfficiencyInput([1.0], [(1.0, 1.0)])) == 1.0


def test_efficiency_homogeneity():
    base = efficiency(EfficiencyInput(MTL_ACC, [(10.0, 0.5), (4.0, 0.25)]))
    assert efficiency(EfficiencyInput(MTL_ACC, [(20.0, 0.5), (8.0, 0.25)])) == pytest.approx(base / 2)
    assert efficiency(EfficiencyInput([0.3 * a for a in MTL_ACC], [(10.0, 0.5), (4.0, 0.25)])) == pytest.approx(0.3 * base)


def test_efficiency_input_validation():
    with pytest.raises(ValueError):
        EfficiencyInput([1.0], [(0.0, 0.5)])
    with pytest.raises(ValueError):
        EfficiencyInput([1.0], [(1.0, 1.5)])
    with pytest.raises(ValueError):
        EfficiencyInput([1.0], [])


def test_cpu_utilization_clamped():
    assert cpu_utilization(2.0, 1.0, cores=1) == 1.0
    assert cpu_utilization(0.5, 1.0, cores=2) == 0.25
    assert cpu_utilization(1.0, 0.0) == 0.0


# -- timing and ablation ----------------------------------------------------

@pytest.fixture(scope="module")
def short_data():
    ds = synthetic_dataset(SynthConfig(n_functions=40, length=8, seed=1))
    vocab = build_vocab((w for f in ds.functions for w in instruction_words(f.instructions)), min_count=1)
    emb = np.random.default_rng(0).normal(scale=0.1, size=(len(vocab), 6))
    train_set, test_set = split_dataset(ds, 0.8, seed=0)
    return train_set, test_set, vocab, emb


HYPER = {"hidden": 6, "epochs": 2, "batch_size": 8, "learning_rate": 1e-2, "seed": 0}


def test_time_inference(short_data):
    _, test_set, vocab, emb = short_data
    model = build_model(ModelConfig(size=10, embed_dim=6, hidden=6), vocab, emb)
    out = time_inference(model, test_set.functions, repetitions=3)
    assert out["ms_per_function"] > 0 and out["repetitions"] == 3
    with pytest.raises(ValueError):
        time_inference(model, [], repetitions=3)


def test_ablation_rows_and_identity(short_data):
    train_set, test_set, vocab, emb = short_data
    grid = make_grid([10, 3], ["head", "tail"], ["mtl"])
    report = run_ablation(grid, train_set, test_set, vocab, emb, HYPER)
    assert len(report.rows) == len(grid)
    assert [r.cell for r in report.rows] == grid
    assert all(r.status == "ok" for r in report.rows)
    # every function has 8 instructions, so a size-10 slice is the whole function
    assert report.row(10, "head", "mtl").acc == report.row(10, "tail", "mtl").acc
    again = run_ablation(grid, train_set, test_set, vocab, emb, HYPER)
    assert report.records() == again.records()


def test_ablation_stl_and_timing(short_data):
    train_set, test_set, vocab, emb = short_data
    report = run_ablation(make_grid([4], ["head"], ["stl"]), train_set, test_set, vocab, emb,
                          dict(HYPER, epochs=1), timing=True)
    row = report.rows[0]
    assert set(row.acc) == {"pc", "pt1", "pt2", "pt3"}
    assert row.epoch_seconds > 0 and row.infer_ms > 0
    text = format_ablation(report, "tsv")
    assert text.splitlines()[0].split("\t")[:3] == ["size", "location", "structure"]
    assert len(format_ablation(report, "jsonl").splitlines()) == 1


def test_ablation_failed_cell_does_not_stop_grid(short_data):
    train_set, test_set, vocab, emb = short_data
    grid = make_grid([4], ["head"], ["mtl", "stl"])
    report = run_ablation(grid, train_set, test_set, vocab, emb, dict(HYPER, hidden=0))
    assert len(report.rows) == 2
    assert all(r.status.startswith("failed") for r in report.rows)
    assert "-" in format_ablation(report)
