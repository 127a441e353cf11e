"""
Per-second aggregation of packet events into labeled feature series.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..errors import ParseError, ValidationError
from .event_parser import PacketEvent

logger = logging.getLogger(__name__)

FEATURES = ('packets', 'ip_pairs', 'port_pairs')
FEATURE_COLUMNS = ['second', 'packets', 'ip_pairs', 'port_pairs', 'label']
US_PER_SECOND = 1_000_000


def attack_intervals_from_labels(label: Sequence[bool]) -> List[Tuple[int, int]]:
    """Maximal runs of labeled seconds as inclusive (start, end) pairs."""
    label = np.asarray(label, dtype=bool)
    if label.size == 0:
        return []
    padded = np.concatenate(([False], label, [False])).astype(np.int8)
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(s), int(e)) for s, e in zip(starts, ends)]


@dataclass
class FeatureSeries:
    """Labeled per-second multivariate series; every column has length n_seconds."""

    packets: np.ndarray
    ip_pairs: np.ndarray
    port_pairs: np.ndarray
    label: np.ndarray
    onehot: Dict[str, np.ndarray] = field(default_factory=dict)
    extras: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.packets = np.asarray(self.packets, dtype=float)
        self.ip_pairs = np.asarray(self.ip_pairs, dtype=float)
        self.port_pairs = np.asarray(self.port_pairs, dtype=float)
        self.label = np.asarray(self.label, dtype=bool)
        n = self.packets.shape[0]
        columns = [self.ip_pairs, self.port_pairs, self.label,
                   *self.onehot.values(), *self.extras.values()]
        if any(np.shape(col) != (n,) for col in columns):
            raise ValidationError("all feature columns must share length n_seconds")

    @property
    def n_seconds(self) -> int:
        return int(self.packets.shape[0])

    @property
    def attack_intervals(self) -> List[Tuple[int, int]]:
        return attack_intervals_from_labels(self.label)

    @classmethod
    def empty(cls) -> 'FeatureSeries':
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0, dtype=bool))

    def feature(self, name: str) -> np.ndarray:
        if name not in FEATURES:
            raise ValidationError(f"Unknown feature: {name}. Supported features: {', '.join(FEATURES)}")
        return getattr(self, name)

    def slice(self, start: int, stop: int) -> 'FeatureSeries':
        """Sub-series covering seconds [start, stop), re-indexed from 0."""
        if not 0 <= start < stop <= self.n_seconds:
            raise ValidationError(
                f"range {start}:{stop} is outside the series (0:{self.n_seconds})")
        cut = slice(start, stop)
        return FeatureSeries(
            self.packets[cut], self.ip_pairs[cut], self.port_pairs[cut], self.label[cut],
            onehot={k: v[cut] for k, v in self.onehot.items()},
            extras={k: v[cut] for k, v in self.extras.items()},
        )

    def to_frame(self, extra_columns: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame({'second': np.arange(self.n_seconds, dtype=np.int64)})
        for name in FEATURES:
            frame[name] = _compact(getattr(self, name))
        frame['label'] = self.label.astype(np.int64)
        if extra_columns:
            for name in sorted(self.extras):
                frame[name] = _compact(self.extras[name])
            for name in sorted(self.onehot):
                frame[name] = _compact(self.onehot[name])
        return frame


def _compact(values: np.ndarray) -> np.ndarray:
    # counts are written as integers
    if values.size and np.all(np.isfinite(values)) and np.all(values == np.round(values)):
        return values.astype(np.int64)
    return values


def aggregate_per_second(events: Sequence[PacketEvent]) -> FeatureSeries:
    """
    Aggregate timestamp-sorted packet events into one data point per second.

    Second t covers [t * 1e6, (t + 1) * 1e6) microseconds. IP and port pairs
    are unordered, so a request and its response count once.
    """
    if not events:
        return FeatureSeries.empty()

    frame = pd.DataFrame({
        'second': [e.timestamp_us // US_PER_SECOND for e in events],
        'src_ip': [e.src_ip for e in events],
        'dst_ip': [e.dst_ip for e in events],
        'src_port': [e.src_port for e in events],
        'dst_port': [e.dst_port for e in events],
        'protocol': [e.protocol for e in events],
        'length_bytes': [e.length_bytes for e in events],
        'malicious': [e.malicious for e in events],
    })
    n_seconds = int(frame['second'].max()) + 1
    index = pd.RangeIndex(n_seconds)

    swap = frame['src_ip'] > frame['dst_ip']
    frame['ip_a'] = frame['src_ip'].where(~swap, frame['dst_ip'])
    frame['ip_b'] = frame['dst_ip'].where(~swap, frame['src_ip'])
    frame['port_a'] = np.minimum(frame['src_port'], frame['dst_port'])
    frame['port_b'] = np.maximum(frame['src_port'], frame['dst_port'])

    grouped = frame.groupby('second')
    packets = grouped.size().reindex(index, fill_value=0)
    ip_pairs = (frame[['second', 'ip_a', 'ip_b']].drop_duplicates()
                .groupby('second').size().reindex(index, fill_value=0))
    port_pairs = (frame[['second', 'port_a', 'port_b']].drop_duplicates()
                  .groupby('second').size().reindex(index, fill_value=0))
    label = grouped['malicious'].any().reindex(index, fill_value=False)

    extras = {
        'bytes': grouped['length_bytes'].sum().reindex(index, fill_value=0).to_numpy(dtype=float),
        'protocols': grouped['protocol'].nunique().reindex(index, fill_value=0).to_numpy(dtype=float),
    }

    onehot: Dict[str, np.ndarray] = {}
    seconds = frame['second'].to_numpy()
    for i, event in enumerate(events):
        for flag in event.flags:
            onehot.setdefault(f'flag_{flag}', np.zeros(n_seconds))[seconds[i]] += 1
        if event.function_code is not None:
            onehot.setdefault(f'fc_{event.function_code}', np.zeros(n_seconds))[seconds[i]] += 1

    series = FeatureSeries(
        packets=packets.to_numpy(dtype=float),
        ip_pairs=ip_pairs.to_numpy(dtype=float),
        port_pairs=port_pairs.to_numpy(dtype=float),
        label=label.to_numpy(dtype=bool),
        onehot=onehot,
        extras=extras,
    )
    logger.info("Aggregated %d events into %d seconds (%d labeled)",
                len(events), series.n_seconds, int(series.label.sum()))
    return series


def feature_correlations(series: FeatureSeries) -> Dict[str, Optional[float]]:
    """Pairwise Pearson correlation of the three detector features."""
    result: Dict[str, Optional[float]] = {}
    for i, a in enumerate(FEATURES):
        for b in FEATURES[i + 1:]:
            x, y = series.feature(a), series.feature(b)
            if series.n_seconds < 2 or np.std(x) == 0 or np.std(y) == 0:
                result[f'{a}~{b}'] = None
            else:
                result[f'{a}~{b}'] = float(np.corrcoef(x, y)[0, 1])
    return result


def write_features(series: FeatureSeries, path: str, extra_columns: bool = False) -> str:
    """Write the feature CSV: second,packets,ip_pairs,port_pairs,label[,extras...]."""
    series.to_frame(extra_columns).to_csv(path, index=False, lineterminator='\n')
    return path


def read_features(path: str) -> FeatureSeries:
    """Read a feature CSV written by write_features (extra columns optional)."""
    try:
        frame = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise ParseError(f"feature file is empty: {path}", 1)
    except pd.errors.ParserError as e:
        raise ParseError(f"malformed feature CSV {path}: {e}")

    missing = [col for col in FEATURE_COLUMNS if col not in frame.columns]
    if missing:
        raise ParseError(f"feature header is missing columns: {', '.join(missing)}", 1)
    if frame.empty:
        return FeatureSeries.empty()

    for column in frame.columns:
        values = pd.to_numeric(frame[column], errors='coerce')
        bad = (values.isna() & frame[column].notna()).to_numpy()
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise ParseError(f"'{column}' is not numeric: {frame[column].iloc[row]!r}", row + 2)
        frame[column] = values

    if not np.array_equal(frame['second'].to_numpy(), np.arange(len(frame))):
        raise ParseError("'second' column must run 0, 1, 2, ... without gaps")
    if frame[FEATURE_COLUMNS].isna().any().any():
        bad = int(np.flatnonzero(frame[FEATURE_COLUMNS].isna().any(axis=1).to_numpy())[0])
        raise ParseError("missing feature value", bad + 2)

    extras = {c: frame[c].to_numpy(dtype=float) for c in ('bytes', 'protocols') if c in frame.columns}
    onehot = {c: frame[c].to_numpy(dtype=float) for c in frame.columns
              if c.startswith(('flag_', 'fc_'))}
    return FeatureSeries(
        packets=frame['packets'].to_numpy(dtype=float),
        ip_pairs=frame['ip_pairs'].to_numpy(dtype=float),
        port_pairs=frame['port_pairs'].to_numpy(dtype=float),
        label=frame['label'].to_numpy(dtype=int) != 0,
        onehot=onehot,
        extras=extras,
    )
