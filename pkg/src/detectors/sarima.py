"""
Seasonal autoregressive model of per-second traffic and its
one-step-prediction-error detector.

Only the pure seasonal AR family SARIMA(p,0,0)x(P,0,0)_s is supported:

    Y*_t = sum_j a_j Y_{t-j} + sum_k f_k Y_{t-sk} - sum_j sum_k a_j f_k Y_{t-sk-j}

fitted by least squares with gradient descent on the seasonally
centered series.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, stats
from statsmodels.stats.diagnostic import acorr_ljungbox
from statsmodels.tsa.stattools import acf as _sm_acf

from ..errors import FitError, NumericError, SizeError, ValidationError
from ..evaluation import DetectionReport, build_report

logger = logging.getLogger(__name__)

MAX_REJECTIONS = 10
LR_GROW = 1.1
LR_SHRINK = 0.5


@dataclass(frozen=True)
class SarimaOrders:
    p: int = 4
    d: int = 0
    q: int = 0
    P: int = 1
    D: int = 0
    Q: int = 0
    s: int = 10

    def __post_init__(self):
        for name in ('p', 'd', 'q', 'P', 'D', 'Q'):
            if getattr(self, name) < 0:
                raise ValidationError(f"order {name} must be >= 0, got {getattr(self, name)}")
        if self.s < 1:
            raise ValidationError(f"season length s must be >= 1, got {self.s}")

    @property
    def lookback(self) -> int:
        """History needed for one prediction, P*s + p."""
        return self.P * self.s + self.p

    @property
    def n_params(self) -> int:
        return self.p + self.P

    def check_supported(self):
        if self.d or self.D or self.q or self.Q:
            raise ValidationError(
                f"only pure seasonal AR models are supported (d = D = q = Q = 0), got {self.as_tuple()}")

    def as_tuple(self) -> Tuple[int, ...]:
        return (self.p, self.d, self.q, self.P, self.D, self.Q, self.s)

    def to_dict(self) -> Dict[str, int]:
        return dict(zip(('p', 'd', 'q', 'P', 'D', 'Q', 's'), self.as_tuple()))

    @classmethod
    def parse(cls, text: str) -> 'SarimaOrders':
        """Parse 'p,d,q,P,D,Q,s'."""
        parts = text.split(',')
        if len(parts) != 7:
            raise ValidationError(f"orders must be p,d,q,P,D,Q,s, got {text!r}")
        try:
            return cls(*(int(p) for p in parts))
        except ValueError:
            raise ValidationError(f"orders must be integers, got {text!r}")


@dataclass
class GdConfig:
    learning_rate: float = 1e-3
    max_iters: int = 50_000
    tol: float = 1e-8
    init: Optional[Sequence[float]] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_iters < 1:
            raise ValidationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise ValidationError(f"tol must be >= 0, got {self.tol}")


class LjungBoxResult(NamedTuple):
    q: float
    critical: float
    reject: bool


@dataclass
class SarimaModel:
    orders: SarimaOrders
    alpha: np.ndarray
    phi: np.ndarray
    sigma2: float
    seasonal_means: np.ndarray
    fit: Dict[str, Any] = field(default_factory=dict)
    # first second of the training slice; phase of seasonal_means[0]
    train_start: int = 0
    loss_trace: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=float).reshape(-1)
        self.phi = np.asarray(self.phi, dtype=float).reshape(-1)
        self.seasonal_means = np.asarray(self.seasonal_means, dtype=float).reshape(-1)
        if self.alpha.shape[0] != self.orders.p or self.phi.shape[0] != self.orders.P:
            raise ValidationError(
                f"coefficient lengths ({self.alpha.shape[0]}, {self.phi.shape[0]}) "
                f"do not match orders p={self.orders.p}, P={self.orders.P}")
        if self.seasonal_means.shape[0] != self.orders.s:
            raise ValidationError(
                f"expected {self.orders.s} seasonal means, got {self.seasonal_means.shape[0]}")
        if not self.sigma2 >= 0:
            raise ValidationError(f"sigma2 must be >= 0, got {self.sigma2}")

    def means_for(self, start: int) -> np.ndarray:
        """Seasonal means rotated so index 0 is the phase of second `start`."""
        return np.roll(self.seasonal_means, -((start - self.train_start) % self.orders.s))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'orders': self.orders.to_dict(),
            'alpha': self.alpha.tolist(),
            'phi': self.phi.tolist(),
            'sigma2': float(self.sigma2),
            'seasonal_means': self.seasonal_means.tolist(),
            'train_start': int(self.train_start),
            'fit': self.fit,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + '\n'

    @classmethod
    def from_json(cls, text: str) -> 'SarimaModel':
        try:
            data = json.loads(text)
            return cls(
                orders=SarimaOrders(**data['orders']),
                alpha=data['alpha'],
                phi=data['phi'],
                sigma2=float(data['sigma2']),
                seasonal_means=data['seasonal_means'],
                fit=data.get('fit', {}),
                train_start=int(data.get('train_start', 0)),
            )
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise ValidationError(f"malformed SARIMA model file: {e}")


def _series(values: Sequence[float]) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    if x.ndim != 1:
        raise ValidationError("series must be one-dimensional")
    return x


def acf(series: Sequence[float], max_lag: int) -> np.ndarray:
    """Sample autocorrelations for lags 0..max_lag (mean-centered, divisor N)."""
    x = _series(series)
    n = x.shape[0]
    if n < 2 or n <= max_lag:
        raise SizeError(f"need more than max_lag={max_lag} points and at least 2, got {n}")
    if np.ptp(x) == 0:
        raise NumericError("autocorrelation is undefined for a zero-variance series")
    return _sm_acf(x, nlags=max_lag, adjusted=False, fft=False)


def pacf(series: Sequence[float], max_lag: int) -> np.ndarray:
    """
    Partial autocorrelations for lags 1..max_lag.

    Each lag solves the Yule-Walker Toeplitz system of that order and takes
    the last coefficient.
    """
    r = acf(series, max_lag)
    out = np.empty(max_lag)
    for lag in range(1, max_lag + 1):
        try:
            solution = linalg.solve_toeplitz(r[:lag], r[1:lag + 1])
        except np.linalg.LinAlgError as e:
            raise NumericError(f"Yule-Walker system is singular at lag {lag}: {e}")
        if not np.all(np.isfinite(solution)):
            raise NumericError(f"Yule-Walker system is singular at lag {lag}")
        out[lag - 1] = solution[-1]
    return out


def seasonal_center(series: Sequence[float], s: int) -> Tuple[np.ndarray, np.ndarray]:
    """Subtract the per-phase mean (phase = index mod s); returns (centered, means)."""
    x = _series(series)
    if s < 1 or s > x.shape[0]:
        raise SizeError(f"season length {s} exceeds series length {x.shape[0]}")
    means = np.array([x[j::s].mean() for j in range(s)])
    return apply_centering(x, means, s), means


def apply_centering(series: Sequence[float], seasonal_means: Sequence[float], s: int) -> np.ndarray:
    """Subtract stored phase means, phase 0 aligned with index 0 of `series`."""
    x = _series(series)
    means = np.asarray(seasonal_means, dtype=float)
    if means.shape != (s,):
        raise ValidationError(f"expected {s} seasonal means, got {means.shape[0]}")
    return x - np.resize(means, x.shape[0])


def _lag_polynomial(alpha: np.ndarray, phi: np.ndarray, s: int) -> np.ndarray:
    """Coefficients c with Y*_t = sum_l c[l] Y_{t-l}; c[0] is always 0."""
    p, P = alpha.shape[0], phi.shape[0]
    c = np.zeros(P * s + p + 1)
    c[1:p + 1] += alpha
    for k in range(1, P + 1):
        c[k * s] += phi[k - 1]
        c[k * s + 1:k * s + p + 1] -= alpha * phi[k - 1]
    return c


def _lag_matrix(y: np.ndarray, lookback: int) -> np.ndarray:
    """Row i holds Y_{t-l} for t = lookback + i and l = 0..lookback."""
    n = y.shape[0]
    return np.stack([y[lookback - l:n - l] for l in range(lookback + 1)], axis=1)


def predict_one_step(model: SarimaModel, history: Sequence[float]) -> float:
    """Prediction of the next centered value from the trailing P*s + p history values."""
    h = _series(history)
    lookback = model.orders.lookback
    if h.shape[0] < lookback:
        raise SizeError(f"history of length {h.shape[0]} is shorter than P*s + p = {lookback}")
    if lookback == 0:
        return 0.0
    c = _lag_polynomial(model.alpha, model.phi, model.orders.s)
    return float(np.dot(c[1:], h[:-lookback - 1:-1]))


def fit_residuals(model: SarimaModel, centered: Sequence[float]) -> np.ndarray:
    """One-step residuals e_t for every evaluable t (t >= P*s + p)."""
    y = _series(centered)
    lookback = model.orders.lookback
    if y.shape[0] <= lookback:
        raise SizeError(f"series of length {y.shape[0]} has no evaluable point (P*s + p = {lookback})")
    lags = _lag_matrix(y, lookback)
    c = _lag_polynomial(model.alpha, model.phi, model.orders.s)
    return lags[:, 0] - lags[:, 1:] @ c[1:]


def _loss_grad(lags: np.ndarray, theta: np.ndarray, orders: SarimaOrders) -> Tuple[float, np.ndarray]:
    alpha, phi = theta[:orders.p], theta[orders.p:]
    c = _lag_polynomial(alpha, phi, orders.s)
    eps = lags[:, 0] - lags[:, 1:] @ c[1:]
    loss = float(eps @ eps)

    # gradient of f with respect to the lag polynomial, then chained to (alpha, phi)
    g = np.zeros_like(c)
    g[1:] = -2.0 * (lags[:, 1:].T @ eps)
    s, p = orders.s, orders.p
    grad = np.empty_like(theta)
    for j in range(1, p + 1):
        grad[j - 1] = g[j] - sum(phi[k - 1] * g[k * s + j] for k in range(1, orders.P + 1))
    for k in range(1, orders.P + 1):
        grad[p + k - 1] = g[k * s] - np.dot(alpha, g[k * s + 1:k * s + p + 1])
    return loss, grad


def least_squares_loss(centered: Sequence[float], orders: SarimaOrders,
                       alpha: Sequence[float], phi: Sequence[float]) -> Tuple[float, np.ndarray]:
    """Sum of squared one-step residuals and its analytic gradient [d/d alpha, d/d phi]."""
    y = _series(centered)
    if y.shape[0] <= orders.lookback:
        raise SizeError(f"series of length {y.shape[0]} has no evaluable point")
    theta = np.concatenate((np.asarray(alpha, dtype=float), np.asarray(phi, dtype=float)))
    return _loss_grad(_lag_matrix(y, orders.lookback), theta, orders)


def fit_least_squares(centered: Sequence[float], orders: SarimaOrders,
                      gd: Optional[GdConfig] = None,
                      seasonal_means: Optional[Sequence[float]] = None) -> SarimaModel:
    """
    Least-squares coefficients by gradient descent.

    Steps follow the mean-squared-residual gradient with an adaptive rate:
    an accepted step grows the rate by LR_GROW, a step that raises the loss
    is undone and the rate shrinks by LR_SHRINK. Stops once the gradient
    norm of the summed loss is <= tol or after max_iters steps.

    Args:
        centered: Seasonally centered training series
        orders: Model orders, d = D = q = Q = 0
        gd: Gradient descent settings
        seasonal_means: Stored on the model; zeros when omitted

    Returns:
        SarimaModel: with sigma2 = f / (N - P*s - p) and the fit summary
    """
    orders.check_supported()
    gd = gd or GdConfig()
    y = _series(centered)
    lookback = orders.lookback
    if y.shape[0] <= lookback + 1:
        raise SizeError(f"need more than P*s + p + 1 = {lookback + 1} points, got {y.shape[0]}")

    lags = _lag_matrix(y, lookback)
    n_terms = lags.shape[0]
    theta = np.zeros(orders.n_params) if gd.init is None else np.asarray(gd.init, dtype=float).copy()
    if theta.shape != (orders.n_params,):
        raise ValidationError(f"init must hold p + P = {orders.n_params} values")

    lr = gd.learning_rate
    loss, grad = _loss_grad(lags, theta, orders)
    trace = [loss]
    converged = bool(np.linalg.norm(grad) <= gd.tol)
    rejections = 0
    iters = 0
    while not converged and iters < gd.max_iters:
        iters += 1
        candidate = theta - lr * grad / n_terms
        c_loss, c_grad = _loss_grad(lags, candidate, orders)
        if np.isfinite(c_loss) and c_loss <= loss:
            theta, loss, grad = candidate, c_loss, c_grad
            trace.append(loss)
            lr *= LR_GROW
            rejections = 0
            converged = bool(np.linalg.norm(grad) <= gd.tol)
        else:
            lr *= LR_SHRINK
            rejections += 1
            if rejections >= MAX_REJECTIONS:
                # rounding-level increases mean the minimum is reached to machine precision
                if np.isfinite(c_loss) and c_loss - loss <= 1e-9 * max(loss, 1e-300):
                    logger.debug("Gradient descent stalled at loss %.6g after %d steps", loss, iters)
                    break
                raise FitError(
                    f"gradient descent diverged: loss increased for {MAX_REJECTIONS} consecutive steps "
                    f"(started at learning rate {gd.learning_rate:g}); try a smaller learning rate")
        if iters % 1000 == 0:
            logger.debug("GD iter %d: loss %.8g, |grad| %.3g, lr %.3g",
                         iters, loss, np.linalg.norm(grad), lr)

    sigma2 = loss / n_terms
    grad_norm = float(np.linalg.norm(grad))
    if not converged:
        logger.warning("Gradient descent stopped after %d iterations with |grad| = %.3g (tol %.3g)",
                       iters, grad_norm, gd.tol)
    model = SarimaModel(
        orders=orders,
        alpha=theta[:orders.p],
        phi=theta[orders.p:],
        sigma2=sigma2,
        seasonal_means=np.zeros(orders.s) if seasonal_means is None else seasonal_means,
        fit={'iters': iters, 'final_loss': loss, 'grad_norm': grad_norm, 'converged': converged},
        loss_trace=np.asarray(trace),
    )
    logger.info("Fitted SARIMA%s: alpha=%s phi=%s sigma2=%.6g", orders.as_tuple(),
                np.round(model.alpha, 5).tolist(), np.round(model.phi, 5).tolist(), sigma2)
    return model


def ljung_box(residuals: Sequence[float], H: Optional[int] = None,
              fitted_params: int = 0, alpha: float = 0.05) -> LjungBoxResult:
    """
    Ljung-Box portmanteau test of residual whiteness.

    Args:
        residuals: Model residuals
        H: Number of lags, floor(2 sqrt(N)) when omitted
        fitted_params: Estimated coefficients, subtracted from the degrees of freedom
        alpha: Significance level

    Returns:
        LjungBoxResult: Q, the (1 - alpha) chi-square quantile and whether Q exceeds it
    """
    e = _series(residuals)
    n = e.shape[0]
    if H is None:
        H = int(np.floor(2 * np.sqrt(n)))
    if H <= fitted_params:
        raise ValidationError(
            f"Ljung-Box needs H > fitted_params for positive degrees of freedom (H={H}, fitted={fitted_params})")
    if n <= H:
        raise SizeError(f"Ljung-Box needs more than H={H} residuals, got {n}")

    critical = float(stats.chi2.ppf(1.0 - alpha, H - fitted_params))
    if np.ptp(e) == 0:
        # no autocorrelation structure at all
        return LjungBoxResult(0.0, critical, False)
    table = acorr_ljungbox(e, lags=[H], model_df=fitted_params, return_df=True)
    q = float(table['lb_stat'].iloc[0])
    return LjungBoxResult(q, critical, bool(q > critical))


def gaussian_quantile(prob: float, sigma2: float) -> float:
    """prob-quantile of N(0, sigma2)."""
    if not 0.0 < prob < 1.0:
        raise ValidationError(f"quantile probability must lie in (0, 1), got {prob}")
    if sigma2 < 0:
        raise ValidationError(f"variance must be >= 0, got {sigma2}")
    return float(np.sqrt(sigma2) * stats.norm.ppf(prob))


@dataclass
class Identification:
    acf: np.ndarray
    pacf: np.ndarray
    bound: float
    p: int
    P: int


def identify(series: Sequence[float], s: int, max_lag: Optional[int] = None) -> Identification:
    """
    ACF/PACF of the seasonally centered series and suggested (p, P).

    p is the last non-seasonal lag below s whose |PACF| exceeds 2/sqrt(N);
    P counts consecutive seasonal lags s, 2s, ... above the same bound.
    Advisory only.
    """
    centered, _ = seasonal_center(series, s)
    n = centered.shape[0]
    if max_lag is None:
        max_lag = min(3 * s, n // 2)
    r = acf(centered, max_lag)
    pi = pacf(centered, max_lag)
    bound = 2.0 / np.sqrt(n)

    significant = np.abs(pi) > bound
    p = 0
    for lag in range(1, min(s, max_lag + 1)):
        if significant[lag - 1]:
            p = lag
    P = 0
    while (P + 1) * s <= max_lag and significant[(P + 1) * s - 1]:
        P += 1
    logger.info("Identification suggests p=%d, P=%d (bound %.4f)", p, P, bound)
    return Identification(r, pi, bound, p, P)


def detect(test_series: Sequence[float], model: SarimaModel,
           threshold_multiplier: float = 1.0, quantile_prob: float = 0.9995,
           labels: Optional[Sequence[bool]] = None, feature: str = '',
           replace_outliers: bool = True, threshold: Optional[float] = None,
           start: int = 0, attacks: Optional[Sequence[Tuple[float, float]]] = None) -> DetectionReport:
    """
    Walk the test series once, flagging seconds with |e_t| above the threshold.

    A flagged value is replaced by its prediction in the working history, so
    one outlier does not spill into the following predictions. Seconds
    before P*s + p cannot be predicted and are reported as not evaluable.

    Args:
        test_series: Raw feature values
        model: Fitted model with stored seasonal means
        threshold_multiplier: Multiple of the Gaussian quantile
        quantile_prob: Quantile of N(0, sigma2)
        labels: Ground truth per second, for confusion counts
        feature: Feature name for the report
        replace_outliers: Substitute predictions for flagged values
        threshold: Explicit threshold overriding the quantile rule
        start: Capture second of test_series[0], used only to align seasonal phases
        attacks: Real-second attack intervals for latency

    Returns:
        DetectionReport: with the per-second detection table as trace
    """
    x = _series(test_series)
    orders = model.orders
    lookback = orders.lookback
    if x.shape[0] <= lookback:
        raise SizeError(f"test series of length {x.shape[0]} has no evaluable point (P*s + p = {lookback})")
    if threshold_multiplier <= 0:
        raise ValidationError(f"threshold multiplier must be > 0, got {threshold_multiplier}")

    means = np.resize(model.means_for(start), x.shape[0])
    z = x - means
    if threshold is None:
        threshold = threshold_multiplier * gaussian_quantile(quantile_prob, model.sigma2)

    c = _lag_polynomial(model.alpha, model.phi, orders.s)[1:]
    work = z.copy()
    n = x.shape[0]
    predictions = np.full(n, np.nan)
    errors = np.full(n, np.nan)
    flagged = np.zeros(n, dtype=bool)
    for t in range(lookback, n):
        pred = float(np.dot(c, work[t - 1::-1][:lookback])) if lookback else 0.0
        predictions[t] = pred
        errors[t] = abs(z[t] - pred)
        if errors[t] > threshold:
            flagged[t] = True
            if replace_outliers:
                work[t] = pred

    evaluable = np.arange(n) >= lookback
    trace = pd.DataFrame({
        'second': np.arange(n, dtype=np.int64),
        'value': x,
        'prediction': predictions + means,
        'abs_error': errors,
        'threshold': threshold,
        'flagged': flagged.astype(np.int64),
        'evaluable': evaluable.astype(np.int64),
    })
    thresholds = {
        'threshold': float(threshold),
        'quantile_prob': quantile_prob,
        'multiplier': threshold_multiplier,
        'sigma2': float(model.sigma2),
    }
    logger.info("SARIMA detection: %d of %d evaluable seconds flagged", int(flagged.sum()), int(evaluable.sum()))
    return build_report('sarima', feature, np.flatnonzero(flagged), labels, evaluable,
                        thresholds, attacks, trace=trace)
