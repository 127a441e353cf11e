from .matrix_profile import (
    ProfileConfig,
    ProfileResult,
    detect_flags,
    left_matrix_profile,
    naive_left_profile,
    perfect_threshold,
    sliding_stats,
    znorm_distance,
)
from .sarima import GdConfig, SarimaModel, SarimaOrders
from .lstm import LstmCellParams, LstmNetwork, TrainConfig

DETECTORS = ('matrix_profile', 'sarima', 'lstm')

__all__ = [
    'DETECTORS',
    'ProfileConfig', 'ProfileResult', 'detect_flags', 'left_matrix_profile', 'naive_left_profile',
    'perfect_threshold', 'sliding_stats', 'znorm_distance',
    'GdConfig', 'SarimaModel', 'SarimaOrders',
    'LstmCellParams', 'LstmNetwork', 'TrainConfig',
]
