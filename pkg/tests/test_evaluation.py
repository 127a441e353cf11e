import numpy as np
import pytest

from src.errors import ValidationError
from src.evaluation import (
    ConfusionCounts, DetectionReport, LatencyRow, build_report, confusion, latency, metrics, summarize,
)


def _labels(n, positives):
    labels = np.zeros(n, dtype=bool)
    labels[list(positives)] = True
    return labels


def test_exact_detection_has_no_errors():
    counts = confusion([3, 4, 8], _labels(10, [3, 4, 8]))
    assert counts.fp == 0 and counts.fn == 0
    assert counts.tp == 3 and counts.tn == 7


def test_nothing_flagged():
    counts = confusion([], _labels(12, [1, 5, 6]))
    assert counts.fn == 3
    assert counts.tp == 0


def test_hand_counted_confusion():
    counts = confusion([2, 4], _labels(10, [2, 5]))
    assert counts == ConfusionCounts(tp=1, fp=1, tn=7, fn=1)
    assert counts.total == 10


def test_only_evaluable_seconds_count():
    evaluable = np.arange(10) >= 4
    counts = confusion([5], _labels(10, [1, 5]), evaluable)
    assert counts.total == 6
    assert counts == ConfusionCounts(tp=1, fp=0, tn=5, fn=0)


def test_flags_outside_the_evaluable_range():
    with pytest.raises(ValidationError):
        confusion([10], _labels(10, []))
    with pytest.raises(ValidationError):
        confusion([1], _labels(10, []), np.arange(10) >= 4)


def test_extra_true_negatives_leave_counts_alone():
    base = confusion([2, 4], _labels(10, [2, 5]))
    longer = confusion([2, 4], _labels(30, [2, 5]))
    assert (longer.tp, longer.fp, longer.fn) == (base.tp, base.fp, base.fn)
    assert longer.tn == base.tn + 20


def test_metric_identities():
    result = metrics(ConfusionCounts(tp=2, fp=1, tn=5, fn=2))
    assert result.precision == pytest.approx(0.6667, abs=1e-4)
    assert result.recall == pytest.approx(0.5, abs=1e-4)
    assert result.f1 == pytest.approx(0.5714, abs=1e-4)
    assert result.accuracy == pytest.approx(0.7, abs=1e-4)


def test_perfect_detection_metrics():
    result = metrics(ConfusionCounts(tp=4, fp=0, tn=9, fn=0))
    assert (result.precision, result.recall, result.f1, result.accuracy) == (1.0, 1.0, 1.0, 1.0)


def test_accuracy_hides_a_missed_attack():
    result = metrics(ConfusionCounts(tp=0, fp=0, tn=670, fn=1))
    assert result.accuracy > 0.99
    assert result.accuracy == pytest.approx(0.9985, abs=1e-4)
    assert result.precision is None
    assert result.recall == 0.0
    assert result.f1 is None


def test_all_zero_counts():
    with pytest.raises(ValidationError):
        metrics(ConfusionCounts())


def test_latency_rows():
    rows, false_positives = latency([34, 63], [(32.9679, 34.5)])
    assert rows[0] == LatencyRow(32.9679, 34)
    assert false_positives == [63]
    assert rows[1] == LatencyRow(None, 63)


def test_latency_of_an_undetected_attack():
    rows, false_positives = latency([], [(10.2, 12.0)])
    assert rows == [LatencyRow(10.2, None)]
    assert false_positives == []


def test_floor_second_detection_is_within_a_second():
    rows, _ = latency([289], [(289.4079, 290.1)])
    assert rows[0].first_detection - rows[0].attack_start <= 1.0


def test_grace_second_after_the_attack():
    rows, false_positives = latency([13, 15], [(10.0, 12.0)])
    assert rows[0].first_detection == 13
    assert false_positives == [15]


def test_report_from_labels_only():
    labels = _labels(20, [5, 6, 14])
    report = build_report('sarima', 'port_pairs', [5, 9, 14], labels,
                          thresholds={'threshold': 1.05293})
    assert [row.attack_start for row in report.latency if row.attack_start is not None] == [5.0, 14.0]
    assert report.false_positives == [9]
    assert report.counts == ConfusionCounts(tp=2, fp=1, tn=16, fn=1)
    assert report.metrics.recall == pytest.approx(2 / 3)


def test_report_dict_round_trip():
    labels = _labels(20, [5, 6])
    report = build_report('lstm', 'packets', [5, 11], labels, attacks=[(5.3, 7.0)])
    data = report.to_dict()
    assert data['latency'] == [{'attack_start': 5.3, 'first_detection': 5}]
    assert data['false_positives'] == [11]
    again = DetectionReport.from_dict(data)
    assert again.counts == report.counts
    assert again.latency == report.latency
    with pytest.raises(ValidationError):
        DetectionReport.from_dict({'feature': 'packets'})


def test_matrix_profile_style_report_has_no_confusion():
    report = build_report('matrix_profile', 'ip_pairs', [3], _labels(10, [3]), with_confusion=False)
    assert report.counts is None and report.metrics is None
    assert report.latency == [LatencyRow(3.0, 3)]


def test_summary_table():
    reports = [
        build_report('sarima', 'port_pairs', [34, 63], _labels(80, [33, 34]),
                     thresholds={'threshold': 1.05293}, attacks=[(32.9679, 34.5)]),
        build_report('matrix_profile', 'packets', [40], _labels(80, [40]), with_confusion=False),
    ]
    text = summarize(reports)
    assert text.startswith('# Intrusion Detection Summary')
    assert '| sarima | port_pairs | 1.0529 | 2 | 1 | 1 | 77 | 1 |' in text
    assert '| matrix_profile | packets | n/a | 1 | n/a |' in text
    assert '| 32.9679 | 34 |' in text
    assert '| – | 63 |' in text
