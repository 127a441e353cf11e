import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from src.detectors.sarima import (
    GdConfig, SarimaModel, SarimaOrders, acf, apply_centering, detect, fit_least_squares,
    fit_residuals, gaussian_quantile, identify, least_squares_loss, ljung_box, pacf,
    predict_one_step, seasonal_center,
)
from src.errors import FitError, NumericError, SizeError, ValidationError
from src.extractors.feature_aggregator import aggregate_per_second
from src.simulation.traffic_simulator import AttackSpec, SimConfig, generate
from src.utils.seeding import spawn_seeds

PORT_PAIR_ALPHA = [-1.0997e-2, -9.9894e-4, 6.8105e-4, 1.3458e-1]
PORT_PAIR_PHI = [-1.1170e-1]
PORT_PAIR_SIGMA2 = 1.0239e-1


def simulate_seasonal_ar(alpha, phi, s, n, rng, sigma=0.0, burn_in=0, start=None):
    """Y_t = sum_j a_j Y_{t-j} + sum_k f_k Y_{t-sk} - sum_j sum_k a_j f_k Y_{t-sk-j} + e_t."""
    p, P = len(alpha), len(phi)
    lookback = P * s + p
    total = n + burn_in
    y = np.zeros(total)
    y[:lookback] = rng.normal(size=lookback) if start is None else start
    for t in range(lookback, total):
        value = sum(alpha[j - 1] * y[t - j] for j in range(1, p + 1))
        for k in range(1, P + 1):
            value += phi[k - 1] * y[t - k * s]
            value -= sum(alpha[j - 1] * phi[k - 1] * y[t - k * s - j] for j in range(1, p + 1))
        y[t] = value + (sigma * rng.normal() if sigma else 0.0)
    return y[burn_in:]


def _model(alpha, phi, s, sigma2=1.0, means=None):
    orders = SarimaOrders(p=len(alpha), P=len(phi), s=s)
    return SarimaModel(orders, alpha, phi, sigma2, np.zeros(s) if means is None else means)


def test_acf_lag_zero_is_one(rng):
    assert acf(rng.normal(size=50), 5)[0] == 1.0


def test_acf_shows_the_polling_period():
    t = np.arange(200)
    r = acf(np.sin(2 * np.pi * t / 10), 20)
    assert r[10] > 0.9
    assert r[20] > 0.85
    assert r[5] < -0.85


def test_acf_of_white_noise(rng):
    n = 2000
    values = np.concatenate([acf(rng.normal(size=n), 40)[1:] for _ in range(10)])
    assert np.mean(np.abs(values) < 3 / np.sqrt(n)) >= 0.99


def test_acf_of_constant_series():
    with pytest.raises(NumericError):
        acf(np.ones(30), 3)


def test_pacf_of_ar1(rng):
    y = np.zeros(5000)
    noise = rng.normal(size=5000)
    for t in range(1, 5000):
        y[t] = 0.6 * y[t - 1] + noise[t]
    pi = pacf(y, 5)
    assert pi[0] == pytest.approx(0.6, abs=0.05)
    assert np.all(np.abs(pi[1:]) < 0.05)


def test_pacf_of_white_noise(rng):
    n = 2000
    values = np.concatenate([pacf(rng.normal(size=n), 20) for _ in range(20)])
    assert np.mean(np.abs(values) < 3 / np.sqrt(n)) >= 0.99


def test_pacf_lag_one_equals_acf_lag_one(rng):
    x = rng.normal(size=300).cumsum()
    assert pacf(x, 1)[0] == pytest.approx(acf(x, 1)[1], rel=1e-12)


def test_seasonal_center_examples():
    centered, means = seasonal_center([1, 2, 3, 4], 2)
    assert_allclose(means, [2, 3])
    assert_allclose(centered, [-1, -1, 1, 1])

    centered, means = seasonal_center(np.full(12, 7.0), 5)
    assert_array_equal(centered, 0.0)
    assert_array_equal(means, 7.0)

    with pytest.raises(SizeError):
        seasonal_center([1, 2, 3], 4)


def test_centering_round_trips(rng):
    x = rng.normal(size=53)
    centered, means = seasonal_center(x, 10)
    assert_array_equal(apply_centering(x, means, 10), centered)
    assert_allclose(centered + np.resize(means, 53), x, atol=1e-12)
    assert_array_equal(apply_centering(np.tile(means, 3), means, 10), 0.0)
    assert_allclose(apply_centering(x + 2.5, means, 10), centered + 2.5)


def test_prediction_examples():
    assert predict_one_step(_model([0.0], [0.0], 2), [4.0, 5.0, 6.0]) == 0.0
    model = _model([0.5], [0.5], 2)
    assert predict_one_step(model, [1.0, 2.0, 3.0]) == pytest.approx(2.25)
    with pytest.raises(SizeError):
        predict_one_step(model, [1.0, 2.0])


def test_noiseless_realization_has_zero_residuals(rng):
    alpha, phi = [0.3, -0.2], [0.5]
    y = simulate_seasonal_ar(alpha, phi, 4, 80, rng)
    model = _model(alpha, phi, 4)
    assert_allclose(fit_residuals(model, y), 0.0, atol=1e-12)
    for t in range(model.orders.lookback, 80, 7):
        assert predict_one_step(model, y[:t]) == pytest.approx(y[t], abs=1e-12)


def test_zero_coefficients_leave_centered_values(rng):
    y = rng.normal(size=40)
    assert_array_equal(fit_residuals(_model([0.0, 0.0], [0.0], 5), y), y[7:])


def test_gradient_matches_finite_differences(rng):
    orders = SarimaOrders(p=2, P=1, s=4)
    y = simulate_seasonal_ar([0.4, -0.1], [0.3], 4, 200, rng, sigma=1.0)
    alpha, phi = rng.normal(scale=0.3, size=2), rng.normal(scale=0.3, size=1)
    _, grad = least_squares_loss(y, orders, alpha, phi)

    theta = np.concatenate((alpha, phi))
    numeric = np.empty_like(theta)
    eps = 1e-6
    for k in range(theta.shape[0]):
        up, down = theta.copy(), theta.copy()
        up[k] += eps
        down[k] -= eps
        f_up, _ = least_squares_loss(y, orders, up[:2], up[2:])
        f_down, _ = least_squares_loss(y, orders, down[:2], down[2:])
        numeric[k] = (f_up - f_down) / (2 * eps)
    assert np.linalg.norm(grad - numeric) / np.linalg.norm(grad + numeric) < 1e-6


def test_fit_recovers_noiseless_coefficients(rng):
    alpha, phi = [0.5], [0.8]
    y = simulate_seasonal_ar(alpha, phi, 3, 60, rng)
    model = fit_least_squares(y, SarimaOrders(p=1, P=1, s=3),
                              GdConfig(learning_rate=1e-2, max_iters=200_000, tol=1e-10))
    assert_allclose(model.alpha, alpha, atol=1e-4)
    assert_allclose(model.phi, phi, atol=1e-4)
    assert model.sigma2 < 1e-8
    assert model.fit['converged']


def test_fit_loss_never_increases(rng):
    y = simulate_seasonal_ar([0.2, 0.1], [0.4], 10, 400, rng, sigma=1.0)
    model = fit_least_squares(y, SarimaOrders(p=2, P=1, s=10), GdConfig(max_iters=2000))
    assert np.all(np.diff(model.loss_trace) <= 0)
    assert model.loss_trace[-1] < model.loss_trace[0]


def test_huge_learning_rate_diverges(rng):
    y = simulate_seasonal_ar([0.2], [0.4], 10, 200, rng, sigma=1.0)
    with pytest.raises(FitError, match='smaller learning rate'):
        fit_least_squares(y, SarimaOrders(p=1, P=1, s=10), GdConfig(learning_rate=1e8))


def test_unsupported_orders():
    with pytest.raises(ValidationError):
        fit_least_squares(np.zeros(50), SarimaOrders(p=1, d=1, P=1, s=10))
    with pytest.raises(ValidationError):
        SarimaOrders.parse('4,0,0,1,0,0')
    assert SarimaOrders.parse('4,0,0,1,0,0,10') == SarimaOrders()


@pytest.mark.slow
def test_fit_recovers_port_pair_coefficients(rng):
    y = simulate_seasonal_ar(PORT_PAIR_ALPHA, PORT_PAIR_PHI, 10, 5000, rng,
                             sigma=np.sqrt(PORT_PAIR_SIGMA2), burn_in=200, start=np.zeros(14))
    model = fit_least_squares(y, SarimaOrders())
    assert_allclose(model.alpha, PORT_PAIR_ALPHA, atol=0.05)
    assert_allclose(model.phi, PORT_PAIR_PHI, atol=0.05)
    assert abs(model.sigma2 - PORT_PAIR_SIGMA2) <= 0.2 * PORT_PAIR_SIGMA2


def test_ljung_box_of_zero_residuals():
    result = ljung_box(np.zeros(100), H=10)
    assert result.q == 0.0
    assert not result.reject
    assert result.critical == pytest.approx(18.307, abs=1e-3)


def test_ljung_box_degrees_of_freedom():
    with pytest.raises(ValidationError):
        ljung_box(np.ones(100), H=5, fitted_params=5)


def test_ljung_box_flags_correlated_residuals(rng):
    y = simulate_seasonal_ar([0.7], [], 1, 370, rng, sigma=1.0)
    assert ljung_box(y, fitted_params=0).reject


def test_ljung_box_calibration():
    rejections = 0
    for seed in spawn_seeds(99, 200):
        noise = np.random.Generator(np.random.PCG64(seed)).normal(size=370)
        rejections += ljung_box(noise, alpha=0.05).reject
    assert 0.02 <= rejections / 200 <= 0.09


def test_gaussian_quantile():
    assert gaussian_quantile(0.5, 3.7) == pytest.approx(0.0, abs=1e-15)
    assert gaussian_quantile(0.9995, PORT_PAIR_SIGMA2) == pytest.approx(1.05293, abs=1e-3)
    assert 3 * gaussian_quantile(0.9995, PORT_PAIR_SIGMA2) == pytest.approx(3.15879, abs=3e-3)
    with pytest.raises(ValidationError):
        gaussian_quantile(1.0, 1.0)


def test_identify_sees_seasonal_structure(rng):
    y = simulate_seasonal_ar([0.6], [0.5], 10, 3000, rng, sigma=1.0, burn_in=100)
    result = identify(y, 10)
    assert result.p >= 1
    assert result.P >= 1
    assert result.pacf.shape == (30,)
    assert result.bound == pytest.approx(2 / np.sqrt(3000))


def test_forecast_equal_series_is_never_flagged():
    means = np.array([6.0] + [0.0] * 9)
    report = detect(np.tile(means, 8), _model([0.3], [0.4], 10, sigma2=0.5, means=means))
    assert report.flagged == []


def _burst_series():
    config = SimConfig(duration_s=200, n_rtus=4, manual_op_rate=0.0, rng_seed=5,
                       attacks=[AttackSpec(45.0, 1.0, 'scan_burst', 40.0)])
    return aggregate_per_second(generate(config))


def test_burst_is_flagged_once_with_replacement():
    series = _burst_series()
    _, means = seasonal_center(series.packets[60:], 10)
    model = _model([0.5], [0.5], 10, sigma2=1e-6, means=means)
    model.train_start = 60

    report = detect(series.packets, model, labels=series.label)
    assert report.flagged == [45]
    assert report.counts.fp == 0 and report.counts.fn == 0
    assert report.latency[0].first_detection == 45

    # the flagged value was replaced by its prediction, so later residuals stay at 0
    trace = report.trace
    assert trace.loc[45, 'prediction'] == 0.0
    assert trace.loc[46:, 'abs_error'].max() == 0.0

    raw = detect(series.packets, model, labels=series.label, replace_outliers=False)
    assert {45, 46, 55, 56} <= set(raw.flagged)


def test_detection_is_causal():
    series = _burst_series()
    _, means = seasonal_center(series.packets[60:], 10)
    model = _model([0.5], [0.5], 10, sigma2=0.01, means=means)
    model.train_start = 60
    changed = series.packets.copy()
    changed[120:] += 30.0
    before = [t for t in detect(series.packets, model).flagged if t < 120]
    after = [t for t in detect(changed, model).flagged if t < 120]
    assert before == after


def test_larger_multiplier_flags_a_subset(rng):
    y = simulate_seasonal_ar([0.3], [0.2], 10, 300, rng, sigma=1.0)
    model = _model([0.3], [0.2], 10, sigma2=1.0)
    previous = None
    for multiplier in (0.5, 1.0, 2.0, 3.0):
        flagged = set(detect(y, model, threshold_multiplier=multiplier, quantile_prob=0.95).flagged)
        if previous is not None:
            assert flagged <= previous
        previous = flagged


def test_seconds_before_lookback_are_not_evaluable(rng):
    report = detect(rng.normal(size=40), _model([0.1, 0.1], [0.1], 10, means=np.zeros(10)),
                    labels=np.zeros(40, dtype=bool))
    assert report.counts.total == 40 - 12
    assert report.trace['evaluable'].tolist()[:12] == [0] * 12


def test_phase_alignment_with_train_start():
    means = np.arange(10.0)
    model = _model([0.0], [0.0], 10, means=means)
    model.train_start = 3
    assert_array_equal(model.means_for(3), means)
    assert_array_equal(model.means_for(13), means)
    assert model.means_for(0)[3] == 0.0
    assert model.means_for(5)[0] == 2.0


def test_model_json_round_trip():
    model = _model([0.1, -0.2], [0.3], 10, sigma2=0.25, means=np.arange(10.0))
    model.train_start = 20
    loaded = SarimaModel.from_json(model.to_json())
    assert loaded.orders == model.orders
    assert_array_equal(loaded.alpha, model.alpha)
    assert_array_equal(loaded.seasonal_means, model.seasonal_means)
    assert loaded.train_start == 20
    with pytest.raises(ValidationError):
        SarimaModel.from_json('{"orders": {}}')


@pytest.mark.slow
def test_port_pair_detector_on_synthetic_runs(make_run):
    orders = SarimaOrders()
    for seed in spawn_seeds(2024, 20):
        series, config = make_run(seed)
        centered, means = seasonal_center(series.port_pairs[:370], orders.s)
        model = fit_least_squares(centered, orders, seasonal_means=means)
        attacks = [(a.start_s, a.end_s) for a in config.attacks]
        report = detect(series.port_pairs, model, quantile_prob=0.9995,
                        labels=series.label, attacks=attacks)

        for row in report.latency:
            if row.attack_start is not None:
                assert row.first_detection is not None, f"seed {seed}: attack {row.attack_start} missed"
                assert row.first_detection - row.attack_start <= 1.0
        assert len(report.false_positives) <= 1, f"seed {seed}"


@pytest.mark.slow
def test_port_pair_detector_with_measurement_noise(make_run):
    orders = SarimaOrders()
    for seed in spawn_seeds(7, 5):
        series, config = make_run(seed)
        noise = np.random.Generator(np.random.PCG64(seed)).normal(scale=0.05, size=series.n_seconds)
        values = series.port_pairs + noise
        centered, means = seasonal_center(values[:370], orders.s)
        model = fit_least_squares(centered, orders, seasonal_means=means)
        assert model.sigma2 > 0

        attacks = [(a.start_s, a.end_s) for a in config.attacks]
        report = detect(values, model, quantile_prob=0.9995, threshold_multiplier=1.5,
                        labels=series.label, attacks=attacks)
        assert report.thresholds['threshold'] == pytest.approx(
            1.5 * gaussian_quantile(0.9995, model.sigma2))
        assert report.thresholds['threshold'] > 0

        for row in report.latency:
            if row.attack_start is None:
                continue
            assert row.first_detection is not None, f"seed {seed}: attack {row.attack_start} missed"
            assert row.first_detection - row.attack_start <= 1.0
        assert len(report.false_positives) <= 1, f"seed {seed}"
