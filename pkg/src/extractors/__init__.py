from .event_parser import PacketEvent, parse_events, read_events, write_events
from .feature_aggregator import (
    FEATURES, FeatureSeries, aggregate_per_second, feature_correlations,
    read_features, write_features,
)

__all__ = [
    'PacketEvent', 'parse_events', 'read_events', 'write_events',
    'FEATURES', 'FeatureSeries', 'aggregate_per_second', 'feature_correlations',
    'read_features', 'write_features',
]
