"""
Left-only z-normalized Matrix Profile for discord-based attack detection.

Each window is compared only with windows that started at least
`exclusion` points earlier, so the profile value of a window depends on
the past alone and can be computed online.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import SizeError, ThresholdError, ValidationError

logger = logging.getLogger(__name__)

# windows whose standard deviation falls below this count as constant
DEGENERATE_STD = 1e-12


@dataclass
class ProfileConfig:
    m: int = 10
    exclusion: Optional[int] = None
    prefix: Optional[np.ndarray] = None
    auto_prefix: bool = True

    def __post_init__(self):
        if self.m < 2:
            raise ValidationError(f"window length m must be >= 2, got {self.m}")
        if self.exclusion is None:
            self.exclusion = self.m // 2
        if self.exclusion < 1:
            raise ValidationError(f"exclusion must be >= 1, got {self.exclusion}")
        if self.prefix is not None:
            self.prefix = np.asarray(self.prefix, dtype=float)

    def resolve_prefix(self, series: np.ndarray) -> np.ndarray:
        """Explicit prefix, else the first two windows' worth of the series itself."""
        if self.prefix is not None:
            return self.prefix
        if self.auto_prefix:
            return series[:2 * self.m].copy()
        return np.zeros(0)


@dataclass
class ProfileResult:
    """Profile indexed by window start; NaN marks windows without an admissible predecessor."""

    profile: np.ndarray
    m: int
    prefix_len: int

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.profile)

    def by_end(self) -> np.ndarray:
        """
        Profile re-indexed by the last second of each window, length n_seconds.

        This is the online view: the value at second t only uses data up to t.
        The first m - 1 seconds have no complete window and are NaN.
        """
        out = np.full(self.profile.shape[0] + self.m - 1, np.nan)
        out[self.m - 1:] = self.profile
        return out


def sliding_stats(series: Sequence[float], m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and population standard deviation of every window [t, t + m)."""
    x = np.asarray(series, dtype=float)
    if m < 1 or x.shape[0] < m:
        raise SizeError(f"series of length {x.shape[0]} is shorter than window length {m}")
    windows = sliding_window_view(x, m)
    means = windows.mean(axis=1)
    # two-pass form keeps constant windows at exactly 0
    stds = np.sqrt(((windows - means[:, None]) ** 2).mean(axis=1))
    return means, stds


def _distances(qt: np.ndarray, m: int, mu_i: float, sd_i: float,
               mu_j: np.ndarray, sd_j: np.ndarray) -> np.ndarray:
    """Working-formula distances of window i to windows j from their dot products."""
    const_i = sd_i < DEGENERATE_STD
    const_j = sd_j < DEGENERATE_STD
    with np.errstate(divide='ignore', invalid='ignore'):
        corr = (qt - m * mu_i * mu_j) / (m * sd_i * sd_j)
    # a constant window is uncorrelated with everything except another constant window
    corr = np.where(const_i | const_j, 0.0, corr)
    corr = np.clip(corr, -1.0, 1.0)
    dist = np.sqrt(2.0 * m * (1.0 - corr))
    return np.where(const_i & const_j, 0.0, dist)


def znorm_distance(x: Sequence[float], y: Sequence[float]) -> float:
    """
    z-normalized Euclidean distance via sqrt(2m (1 - corr)).

    Two constant windows are at distance 0; a constant window is at
    sqrt(2m) from any non-constant one.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError(f"windows must be 1-d and of equal length, got {x.shape} and {y.shape}")
    m = x.shape[0]
    (mu_x,), (sd_x,) = sliding_stats(x, m)
    (mu_y,), (sd_y,) = sliding_stats(y, m)
    d = _distances(np.array([np.dot(x, y)]), m, mu_x, sd_x, np.array([mu_y]), np.array([sd_y]))
    return float(d[0])


def _prepare(series: Sequence[float], config: ProfileConfig) -> Tuple[np.ndarray, int]:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise ValidationError("series must be one-dimensional")
    if x.shape[0] < config.m:
        raise SizeError(f"series of length {x.shape[0]} is shorter than one window ({config.m})")
    prefix = config.resolve_prefix(x)
    full = np.concatenate((prefix, x))
    if full.shape[0] < config.m + config.exclusion:
        raise SizeError(
            f"need at least m + exclusion = {config.m + config.exclusion} points, got {full.shape[0]}")
    return full, prefix.shape[0]


def naive_left_profile(series: Sequence[float], config: Optional[ProfileConfig] = None) -> ProfileResult:
    """Reference kernel: direct dot products for every admissible window pair."""
    config = config or ProfileConfig()
    full, prefix_len = _prepare(series, config)
    m, excl = config.m, config.exclusion
    windows = sliding_window_view(full, m)
    means, stds = sliding_stats(full, m)

    profile = np.full(windows.shape[0], np.nan)
    for i in range(excl, windows.shape[0]):
        last = i - excl
        qt = windows[:last + 1] @ windows[i]
        profile[i] = _distances(qt, m, means[i], stds[i], means[:last + 1], stds[:last + 1]).min()
    return ProfileResult(profile[prefix_len:], m, prefix_len)


def left_matrix_profile(series: Sequence[float], config: Optional[ProfileConfig] = None) -> ProfileResult:
    """
    Left-only Matrix Profile of `series`.

    Window i is compared with every window j <= i - exclusion. Prefix
    windows take part as reference candidates but are not reported.
    Dot products are updated along the diagonals, O(n) per window.
    """
    config = config or ProfileConfig()
    full, prefix_len = _prepare(series, config)
    m, excl = config.m, config.exclusion
    n_windows = full.shape[0] - m + 1
    means, stds = sliding_stats(full, m)

    first_row = sliding_window_view(full, m) @ full[:m]
    qt = first_row.copy()
    head = full[:n_windows - 1]
    tail = full[m:m + n_windows - 1]

    profile = np.full(n_windows, np.nan)
    for i in range(n_windows):
        if i > 0:
            qt[1:] = qt[:-1] - full[i - 1] * head + full[i + m - 1] * tail
            qt[0] = first_row[i]
        last = i - excl
        if last < 0:
            continue
        profile[i] = _distances(qt[:last + 1], m, means[i], stds[i],
                                means[:last + 1], stds[:last + 1]).min()

    result = ProfileResult(profile[prefix_len:], m, prefix_len)
    logger.debug("Left profile: %d windows (m=%d, exclusion=%d, prefix=%d)",
                 result.profile.shape[0], m, excl, prefix_len)
    return result


def perfect_threshold(profile: Union[ProfileResult, Sequence[float]],
                      attacks: Sequence[Tuple[int, int]]) -> float:
    """
    Largest threshold T for which `value >= T` flags at least one second of
    every attack: the smallest per-attack peak.

    A ProfileResult is read in its window-end alignment; a plain array is
    taken as already indexed by second.
    """
    values = profile.by_end() if isinstance(profile, ProfileResult) else np.asarray(profile, dtype=float)
    if not attacks:
        raise ThresholdError("at least one attack interval is required")

    peaks = []
    for start, end in attacks:
        segment = values[max(start, 0):end + 1]
        segment = segment[~np.isnan(segment)]
        if segment.size == 0:
            raise ThresholdError(f"attack interval ({start}, {end}) has no defined profile value")
        peaks.append(segment.max())
    threshold = float(min(peaks))
    logger.info("Perfect threshold %.6g over %d attacks", threshold, len(peaks))
    return threshold


def detect_flags(values: Sequence[float], threshold: float) -> np.ndarray:
    """Seconds whose defined value reaches the threshold."""
    values = np.asarray(values, dtype=float)
    with np.errstate(invalid='ignore'):
        return np.flatnonzero(values >= threshold)
