import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fundusnet.data.manifest import HEALTHY, MD
from fundusnet.metrics import (ConfusionMatrix, metrics_from_confusion, render_table,
                               report_render, reports_from_json)

import oracles

counts = st.integers(0, 50)


def expand(cm):
    """Raw (label, prediction) lists realizing a confusion matrix; MD = 1."""
    pairs = [(1, 1)] * cm.tp + [(0, 0)] * cm.tn + [(0, 1)] * cm.fp + [(1, 0)] * cm.fn
    return [y for y, _ in pairs], [p for _, p in pairs]


def check_against_brute_force(cm):
    report = metrics_from_confusion(cm)
    labels, preds = expand(cm)
    for label, positive in ((MD, 1), (HEALTHY, 0)):
        acc, precision, sensitivity, f1 = oracles.brute_force_scores(labels, preds, positive)
        s = report.per_class[label]
        assert abs(report.accuracy - acc) < 1e-12
        assert abs(s.precision - precision) < 1e-12
        assert abs(s.sensitivity - sensitivity) < 1e-12
        assert abs(s.f1 - f1) < 1e-12


def random_matrices(n, seed):
    g = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        cm = ConfusionMatrix(*(int(v) for v in g.integers(0, 60, 4)))
        if cm.total:
            out.append(cm)
    return out


def test_brute_force_agreement_on_random_matrices():
    for cm in random_matrices(1000, 0):
        check_against_brute_force(cm)


def test_perfect_split_row():
    report = metrics_from_confusion(ConfusionMatrix(37, 27, 0, 0))
    assert report.accuracy == 1.0
    for s in report.per_class.values():
        assert s.precision == s.sensitivity == s.f1 == 1.0


def test_hand_example():
    report = metrics_from_confusion(ConfusionMatrix(tp=5, tn=4, fp=1, fn=2))
    md = report.per_class[MD]
    assert report.accuracy == 0.75
    assert md.precision == pytest.approx(5 / 6, abs=1e-12)
    assert md.sensitivity == pytest.approx(5 / 7, abs=1e-12)
    assert md.f1 == pytest.approx(0.7692307692307693, abs=1e-12)
    check_against_brute_force(ConfusionMatrix(5, 4, 1, 2))


def test_only_true_negatives():
    report = metrics_from_confusion(ConfusionMatrix(0, 9, 0, 0))
    md = report.per_class[MD]
    assert report.accuracy == 1.0
    assert md.precision == md.sensitivity == md.f1 == 0.0


def test_empty_rejected():
    with pytest.raises(ValueError):
        metrics_from_confusion(ConfusionMatrix(0, 0, 0, 0))
    with pytest.raises(ValueError):
        ConfusionMatrix(-1, 0, 0, 0)


@given(counts, counts, counts, counts)
def test_duality(tp, tn, fp, fn):
    cm = ConfusionMatrix(tp, tn, fp, fn)
    if not cm.total:
        return
    a, b = metrics_from_confusion(cm), metrics_from_confusion(cm.swapped())
    assert a.accuracy == b.accuracy
    assert a.per_class[MD] == b.per_class[HEALTHY]
    # precision of a class = sensitivity of the same class on the transposed matrix
    transposed = ConfusionMatrix(tp, tn, fn, fp)
    assert a.per_class[MD].precision == metrics_from_confusion(transposed).per_class[MD].sensitivity


def test_from_predictions():
    assert ConfusionMatrix.from_predictions([1, 1, 0, 0, 1], [1, 0, 1, 0, 1]) == ConfusionMatrix(2, 1, 1, 1)


def test_single_report_renders_one_row():
    report = metrics_from_confusion(ConfusionMatrix(37, 27, 0, 0), "resnet50+cnn", 0.9, 1)
    lines = render_table([report]).splitlines()
    assert len(lines) == 3
    assert lines[2].split()[:3] == ["resnet50+cnn", "90%+10%", "1.000"]
    assert lines[2].split()[3:] == ["1.000"] * 6


def test_render_keeps_input_order_and_json_round_trips():
    reports = [metrics_from_confusion(cm, f"m{i}", 0.8, i, train_accuracy=0.5)
               for i, cm in enumerate(random_matrices(3, 1))][::-1]
    text, doc = report_render(reports)
    assert [line.split()[0] for line in text.splitlines()[2:]] == ["m2", "m1", "m0"]
    assert reports_from_json(doc) == reports


def test_report_json_schema():
    obj = metrics_from_confusion(ConfusionMatrix(5, 4, 1, 2), "cnn6", 0.8, 42).to_json()
    assert set(obj) == {"model", "split", "accuracy", "confusion", "per_class"}
    assert obj["split"] == {"train_ratio": 0.8, "seed": 42}
    assert obj["confusion"] == {"tp": 5, "tn": 4, "fp": 1, "fn": 2}
    assert set(obj["per_class"]) == {"healthy", "macular_degeneration"}
    for scores in obj["per_class"].values():
        assert set(scores) == {"precision", "sensitivity", "f1"}
    json.dumps(obj)
