"""
Scoring of flagged seconds against labeled ground truth: confusion counts,
precision/recall/F1/accuracy, per-attack detection latency and the
markdown comparison table.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from .errors import ValidationError
from .extractors.feature_aggregator import attack_intervals_from_labels

logger = logging.getLogger(__name__)

# first-detection window extends this many seconds past the attack end
GRACE_S = 1.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> Dict[str, int]:
        return {'tp': self.tp, 'fp': self.fp, 'tn': self.tn, 'fn': self.fn}


@dataclass(frozen=True)
class Metrics:
    """None marks an undefined ratio; it is never coerced to 0."""

    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    accuracy: Optional[float]

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {'precision': self.precision, 'recall': self.recall,
                'f1': self.f1, 'accuracy': self.accuracy}


@dataclass(frozen=True)
class LatencyRow:
    attack_start: Optional[float]
    first_detection: Optional[int]


def _flag_array(flagged: Sequence[int]) -> np.ndarray:
    return np.unique(np.asarray(list(flagged), dtype=np.int64))


def confusion(flagged: Sequence[int], labels: Sequence[bool],
              evaluable: Optional[Sequence[bool]] = None) -> ConfusionCounts:
    """
    Per-second confusion counts over the evaluable seconds.

    Args:
        flagged: Flagged second indices
        labels: Ground-truth label per second
        evaluable: Mask of seconds the detector could score; all seconds when omitted

    Returns:
        ConfusionCounts: tp + fp + tn + fn equals the number of evaluable seconds
    """
    labels = np.asarray(labels, dtype=bool)
    n = labels.shape[0]
    mask = np.ones(n, dtype=bool) if evaluable is None else np.asarray(evaluable, dtype=bool)
    if mask.shape != labels.shape:
        raise ValidationError("evaluable mask and labels must have the same length")

    flags = _flag_array(flagged)
    outside = flags[(flags < 0) | (flags >= n)]
    if outside.size:
        raise ValidationError(f"flagged second {int(outside[0])} is outside the series (0..{n - 1})")
    not_evaluable = flags[~mask[flags]]
    if not_evaluable.size:
        raise ValidationError(f"flagged second {int(not_evaluable[0])} is not evaluable")

    predicted = np.zeros(n, dtype=bool)
    predicted[flags] = True
    if not mask.any():
        return ConfusionCounts()
    tn, fp, fn, tp = confusion_matrix(labels[mask], predicted[mask], labels=[False, True]).ravel()
    return ConfusionCounts(tp=int(tp), fp=int(fp), tn=int(tn), fn=int(fn))


def metrics(counts: ConfusionCounts) -> Metrics:
    """Precision, recall, F1 and accuracy from confusion counts."""
    if counts.total == 0:
        raise ValidationError("metrics are undefined for all-zero confusion counts")
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else None
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else None
    f1 = None
    if precision is not None and recall is not None and precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    accuracy = (counts.tp + counts.tn) / counts.total
    return Metrics(precision, recall, f1, accuracy)


def latency(flagged: Sequence[int],
            attacks: Sequence[Tuple[float, float]]) -> Tuple[List[LatencyRow], List[int]]:
    """
    First detection per attack and the flags no attack accounts for.

    An attack [start, end) is detected by the first flag in
    [floor(start), end + GRACE_S]. Every flag outside all such windows
    becomes a false-positive row with attack_start None.
    """
    flags = _flag_array(flagged)
    attributed = np.zeros(flags.shape[0], dtype=bool)
    rows = []
    for start, end in sorted(attacks):
        hit = (flags >= math.floor(start)) & (flags <= end + GRACE_S)
        attributed |= hit
        first = int(flags[hit][0]) if hit.any() else None
        rows.append(LatencyRow(float(start), first))
    false_positives = [int(t) for t in flags[~attributed]]
    rows.extend(LatencyRow(None, t) for t in false_positives)
    return rows, false_positives


@dataclass
class DetectionReport:
    detector: str
    feature: str
    flagged: List[int]
    thresholds: Dict[str, Any] = field(default_factory=dict)
    counts: Optional[ConfusionCounts] = None
    metrics: Optional[Metrics] = None
    latency: List[LatencyRow] = field(default_factory=list)
    false_positives: List[int] = field(default_factory=list)
    # per-second detector table, written as the detection CSV
    trace: Optional[pd.DataFrame] = field(default=None, repr=False, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'detector': self.detector,
            'feature': self.feature,
            'thresholds': dict(self.thresholds),
            'counts': self.counts.to_dict() if self.counts else None,
            'metrics': self.metrics.to_dict() if self.metrics else None,
            'latency': [
                {'attack_start': row.attack_start, 'first_detection': row.first_detection}
                for row in self.latency if row.attack_start is not None
            ],
            'false_positives': list(self.false_positives),
            'flagged': list(self.flagged),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DetectionReport':
        try:
            counts = ConfusionCounts(**data['counts']) if data.get('counts') else None
            report_metrics = Metrics(**data['metrics']) if data.get('metrics') else None
            rows = [LatencyRow(r['attack_start'], r['first_detection']) for r in data.get('latency', [])]
            false_positives = [int(t) for t in data.get('false_positives', [])]
            rows.extend(LatencyRow(None, t) for t in false_positives)
            return cls(
                detector=data['detector'],
                feature=data['feature'],
                flagged=[int(t) for t in data.get('flagged', [])],
                thresholds=data.get('thresholds', {}),
                counts=counts,
                metrics=report_metrics,
                latency=rows,
                false_positives=false_positives,
            )
        except (KeyError, TypeError) as e:
            raise ValidationError(f"malformed detection report: {e}")


def build_report(detector: str, feature: str, flagged: Sequence[int],
                 labels: Optional[Sequence[bool]] = None,
                 evaluable: Optional[Sequence[bool]] = None,
                 thresholds: Optional[Dict[str, Any]] = None,
                 attacks: Optional[Sequence[Tuple[float, float]]] = None,
                 with_confusion: bool = True,
                 trace: Optional[pd.DataFrame] = None) -> DetectionReport:
    """
    Score one detector run.

    Latency uses `attacks` (real-second intervals) when given, otherwise the
    labeled runs of `labels`. Confusion counts need labels and
    `with_confusion`.
    """
    flags = [int(t) for t in _flag_array(flagged)]
    counts = report_metrics = None
    if labels is not None:
        labels = np.asarray(labels, dtype=bool)
        if attacks is None:
            attacks = [(float(s), float(e) + 1.0) for s, e in attack_intervals_from_labels(labels)]
        if with_confusion:
            counts = confusion(flags, labels, evaluable)
            report_metrics = metrics(counts) if counts.total else None

    rows, false_positives = latency(flags, attacks or [])
    report = DetectionReport(detector, feature, flags, dict(thresholds or {}), counts,
                             report_metrics, rows, false_positives, trace)
    logger.info("%s/%s: %d flagged, %d attacks, %d unattributed flags",
                detector, feature, len(flags), len(attacks or []), len(false_positives))
    return report


def _fmt(value: Any) -> str:
    if value is None:
        return 'n/a'
    if isinstance(value, float):
        return f'{value:.4f}'
    return str(value)


def summarize(reports: Sequence[DetectionReport]) -> str:
    """Markdown comparison of detector runs plus a latency table per run."""
    lines = [
        '# Intrusion Detection Summary',
        '',
        '| Detector | Feature | Threshold | Flagged | TP | FP | TN | FN | Precision | Recall | F1 | Accuracy |',
        '|---|---|---|---|---|---|---|---|---|---|---|---|',
    ]
    for report in reports:
        counts = report.counts.to_dict() if report.counts else {}
        m = report.metrics.to_dict() if report.metrics else {}
        lines.append('| ' + ' | '.join([
            report.detector, report.feature, _fmt(report.thresholds.get('threshold')),
            str(len(report.flagged)),
            *(_fmt(counts.get(k)) for k in ('tp', 'fp', 'tn', 'fn')),
            *(_fmt(m.get(k)) for k in ('precision', 'recall', 'f1', 'accuracy')),
        ]) + ' |')

    for report in reports:
        lines += [
            '',
            f'## {report.detector} / {report.feature}',
            '',
            '| Begin of Attack Traffic (s) | First Detection Time (s) |',
            '|---|---|',
        ]
        for row in report.latency:
            start = '–' if row.attack_start is None else f'{row.attack_start:g}'
            detected = 'none' if row.first_detection is None else str(row.first_detection)
            lines.append(f'| {start} | {detected} |')
    return '\n'.join(lines) + '\n'
