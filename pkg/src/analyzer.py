import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .detectors import DETECTORS, lstm, sarima
from .detectors.matrix_profile import ProfileConfig, detect_flags, left_matrix_profile, perfect_threshold
from .errors import NumericError, SizeError, ThresholdError, TsidsError, ValidationError
from .evaluation import DetectionReport, build_report
from .extractors.event_parser import read_events, write_events
from .extractors.feature_aggregator import (
    FEATURES,
    FeatureSeries,
    aggregate_per_second,
    feature_correlations,
    read_features,
    write_features,
)
from .report_generator import ReportGenerator
from .simulation.traffic_simulator import SimConfig, TrafficSimulator, read_truth, write_truth
from .utils.seeding import sub_seed

logger = logging.getLogger(__name__)

FITTABLE = ('sarima', 'lstm')


def parse_range(text: Optional[str]) -> Optional[Tuple[int, int]]:
    """Parse 'a:b' into integer seconds [a, b)."""
    if text is None:
        return None
    try:
        a, b = (int(part) for part in text.split(':'))
    except ValueError:
        raise ValidationError(f"range must look like a:b with integer seconds, got {text!r}")
    if not 0 <= a < b:
        raise ValidationError(f"range {text!r} must satisfy 0 <= a < b")
    return a, b


@dataclass
class RunConfig:
    """Everything one fit or detect run needs, as given on the command line."""

    input: str
    output_dir: str = '.'
    features: List[str] = field(default_factory=lambda: list(FEATURES))
    detector: str = 'matrix_profile'
    m: int = 10
    orders: sarima.SarimaOrders = field(default_factory=sarima.SarimaOrders)
    gd: sarima.GdConfig = field(default_factory=sarima.GdConfig)
    quantile: float = 0.9995
    multiplier: float = 1.0
    train_range: Optional[Tuple[int, int]] = None
    strip_labeled: bool = False
    allow_labeled: bool = False
    hidden_size: int = 32
    n_layers: int = 1
    seq_len: int = 10
    train: lstm.TrainConfig = field(default_factory=lstm.TrainConfig)
    lstm_threshold: str = 'ma'
    threshold: Optional[float] = None
    confusion: bool = False
    model: Optional[str] = None
    truth: Optional[str] = None
    plot: bool = False
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.features:
            raise ValidationError("select at least one feature")
        for feature in self.features:
            if feature not in FEATURES:
                raise ValidationError(f"Unknown feature: {feature}. Supported features: {', '.join(FEATURES)}")
        if self.detector not in DETECTORS:
            raise ValidationError(f"Unknown detector: {self.detector}. Supported detectors: {', '.join(DETECTORS)}")
        if self.n_layers not in (1, 3):
            raise ValidationError(f"LSTM layers must be 1 or 3, got {self.n_layers}")
        if self.hidden_size < 1:
            raise ValidationError(f"hidden size must be >= 1, got {self.hidden_size}")
        if self.workers < 1:
            raise ValidationError(f"workers must be >= 1, got {self.workers}")
        if self.strip_labeled and self.detector == 'sarima':
            raise ValidationError("--strip-labeled needs a gap-tolerant detector (lstm); "
                                  "SARIMA trains on a contiguous clean --train-range")
        for path in (self.input, self.model, self.truth):
            if path is not None and not os.path.exists(path):
                raise ValidationError(f"File not found: {path}")


def _failure(error: Exception) -> Dict[str, Any]:
    code = error.exit_code if isinstance(error, TsidsError) else 2
    return {'success': False, 'error': str(error), 'exit_code': code}


class IntrusionAnalyzer:
    """Orchestrates simulation, ingestion, model fitting and detection runs."""

    def __init__(self, report_generator: Optional[ReportGenerator] = None):
        self.report_generator = report_generator or ReportGenerator()

    def _run(self, step: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        try:
            result = step()
        except (TsidsError, OSError) as e:
            logger.debug("Run failed", exc_info=True)
            return _failure(e)
        result.setdefault('success', True)
        result.setdefault('exit_code', 0)
        return result

    # --- simulate / ingest -------------------------------------------------

    def simulate(self, config: SimConfig, output_dir: str) -> Dict[str, Any]:
        """Write events.csv and truth.json for one simulated capture."""
        def step():
            os.makedirs(output_dir, exist_ok=True)
            events = TrafficSimulator(config).generate()
            events_path = write_events(events, os.path.join(output_dir, 'events.csv'))
            truth_path = write_truth(os.path.join(output_dir, 'truth.json'), config)
            return {
                'events_path': events_path,
                'truth_path': truth_path,
                'n_events': len(events),
                'n_malicious': sum(e.malicious for e in events),
            }
        return self._run(step)

    def ingest(self, input_path: str, output_dir: str, extra_columns: bool = False) -> Dict[str, Any]:
        """Aggregate a packet-event file into features.csv."""
        def step():
            if not os.path.exists(input_path):
                raise ValidationError(f"File not found: {input_path}")
            os.makedirs(output_dir, exist_ok=True)
            series = aggregate_per_second(read_events(input_path))
            path = write_features(series, os.path.join(output_dir, 'features.csv'), extra_columns)
            correlations = feature_correlations(series)
            for pair, value in correlations.items():
                logger.info("corr(%s) = %s", pair, 'undefined' if value is None else f'{value:.4f}')
            return {
                'features_path': path,
                'n_seconds': series.n_seconds,
                'n_attacks': len(series.attack_intervals),
                'correlations': correlations,
            }
        return self._run(step)

    # --- fitting -----------------------------------------------------------

    def _training_slice(self, series: FeatureSeries, config: RunConfig) -> Tuple[FeatureSeries, int]:
        start = 0
        if config.train_range is not None:
            a, b = config.train_range
            if b > series.n_seconds:
                raise ValidationError(f"train range {a}:{b} exceeds the series ({series.n_seconds} s)")
            series, start = series.slice(a, b), a
        if series.label.any() and not (config.allow_labeled or config.strip_labeled):
            first = int(np.flatnonzero(series.label)[0]) + start
            raise ValidationError(
                f"training data contains labeled seconds (first at {first}); "
                "choose a clean --train-range, or pass --strip-labeled / --allow-labeled")
        return series, start

    def _fit_sarima(self, train: FeatureSeries, start: int, feature: str,
                    config: RunConfig) -> sarima.SarimaModel:
        values = train.feature(feature)
        orders = config.orders
        orders.check_supported()
        centered, means = sarima.seasonal_center(values, orders.s)
        try:
            sarima.identify(values, orders.s)
        except (NumericError, SizeError) as e:
            logger.info("Identification skipped for %s: %s", feature, e)

        model = sarima.fit_least_squares(centered, orders, config.gd, seasonal_means=means)
        model.train_start = start
        residuals = sarima.fit_residuals(model, centered)
        try:
            lb = sarima.ljung_box(residuals, fitted_params=orders.n_params)
            model.fit['ljung_box'] = {'q': lb.q, 'critical': lb.critical, 'reject': lb.reject}
            if lb.reject:
                logger.warning("Ljung-Box rejects white residuals for %s: Q=%.4f > %.4f",
                               feature, lb.q, lb.critical)
        except ValidationError as e:
            logger.warning("Ljung-Box test skipped for %s: %s", feature, e)
            model.fit['ljung_box'] = None
        return model

    def _fit_lstm(self, train: FeatureSeries, feature: str, config: RunConfig) -> lstm.LstmNetwork:
        net = lstm.LstmNetwork.create(config.hidden_size, config.seq_len, config.n_layers,
                                      seed=sub_seed(config.seed, 'lstm_init', feature))
        train_config = lstm.TrainConfig(
            iterations=config.train.iterations,
            learning_rate=config.train.learning_rate,
            batch_size=config.train.batch_size,
            rng_seed=sub_seed(config.seed, 'lstm_batches', feature),
            gradient_clip=config.train.gradient_clip,
        )
        valid = ~train.label if config.strip_labeled else None
        net, _ = lstm.train(net, train.feature(feature), train_config, valid=valid)
        return net

    def _fit_one(self, series: FeatureSeries, feature: str, config: RunConfig):
        train, start = self._training_slice(series, config)
        if config.detector == 'sarima':
            return self._fit_sarima(train, start, feature, config)
        return self._fit_lstm(train, feature, config)

    @staticmethod
    def _model_document(model, detector: str, feature: str) -> str:
        data = {'detector': detector, 'feature': feature}
        data.update(model.to_dict())
        return json.dumps(data, indent=2) + '\n'

    def fit(self, config: RunConfig) -> Dict[str, Any]:
        """Fit one model per selected feature and write model_<detector>_<feature>.json."""
        def step():
            if config.detector not in FITTABLE:
                raise ValidationError(f"fit supports {', '.join(FITTABLE)}, not {config.detector}")
            if config.train_range is None and not config.strip_labeled:
                raise ValidationError("fit needs --train-range a:b or --strip-labeled")
            series = read_features(config.input)
            os.makedirs(config.output_dir, exist_ok=True)
            models = self._per_feature(config, lambda f: self._fit_one(series, f, config))
            paths = {}
            for feature, model in models.items():
                path = os.path.join(config.output_dir, f'model_{config.detector}_{feature}.json')
                with open(path, 'w', encoding='utf-8', newline='\n') as f:
                    f.write(self._model_document(model, config.detector, feature))
                paths[feature] = path
            return {'model_paths': paths}
        return self._run(step)

    def _load_model(self, config: RunConfig, feature: str):
        path = config.model
        if os.path.isdir(path):
            path = os.path.join(path, f'model_{config.detector}_{feature}.json')
            if not os.path.exists(path):
                raise ValidationError(f"no {config.detector} model for feature {feature} in {config.model}")
        elif len(config.features) > 1:
            raise ValidationError("a single model file serves one feature; pass a model directory instead")
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
        try:
            header = json.loads(text)
        except json.JSONDecodeError as e:
            raise ValidationError(f"model file {path} is not JSON: {e}")
        if header.get('detector', config.detector) != config.detector:
            raise ValidationError(f"{path} holds a {header['detector']} model, not {config.detector}")
        if header.get('feature', feature) != feature:
            raise ValidationError(f"{path} was fitted on {header['feature']}, not {feature}")
        cls = sarima.SarimaModel if config.detector == 'sarima' else lstm.LstmNetwork
        return cls.from_json(text)

    # --- detection ---------------------------------------------------------

    def _detect_profile(self, series: FeatureSeries, feature: str, config: RunConfig,
                        attacks) -> Tuple[DetectionReport, np.ndarray]:
        result = left_matrix_profile(series.feature(feature), ProfileConfig(m=config.m))
        values = result.by_end()
        threshold = config.threshold
        if threshold is None:
            if not series.attack_intervals:
                raise ThresholdError(
                    f"no labeled attacks in {config.input} to derive a perfect threshold; pass --threshold")
            threshold = perfect_threshold(values, series.attack_intervals)
        flagged = detect_flags(values, threshold)
        report = build_report('matrix_profile', feature, flagged, series.label, ~np.isnan(values),
                              {'threshold': float(threshold), 'm': config.m}, attacks,
                              with_confusion=config.confusion)
        return report, values

    def _detect_one(self, series: FeatureSeries, feature: str, config: RunConfig, attacks):
        if config.detector == 'matrix_profile':
            return self._detect_profile(series, feature, config, attacks)

        model = self._load_model(config, feature) if config.model else self._fit_one(series, feature, config)
        if config.detector == 'sarima':
            report = sarima.detect(series.feature(feature), model, config.multiplier, config.quantile,
                                   labels=series.label, feature=feature, threshold=config.threshold,
                                   attacks=attacks)
        else:
            if model.seq_len >= series.n_seconds:
                raise SizeError(f"series of {series.n_seconds} s is too short for seq_len {model.seq_len}")
            report = lstm.detect(model, series.feature(feature), labels=series.label,
                                 threshold_kind=config.lstm_threshold, threshold=config.threshold,
                                 feature=feature, attacks=attacks)
        return report, report.trace['abs_error'].to_numpy()

    def _per_feature(self, config: RunConfig, work: Callable[[str], Any]) -> Dict[str, Any]:
        """Run `work` for each selected feature; results keep feature order."""
        if config.workers > 1 and len(config.features) > 1:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(work, config.features))
        else:
            results = [work(feature) for feature in config.features]
        return dict(zip(config.features, results))

    def detect(self, config: RunConfig) -> Dict[str, Any]:
        """
        Run one detector on every selected feature and write its outputs.

        Args:
            config (RunConfig): Run parameters

        Returns:
            Dict[str, Any]: success flag, report objects and written paths
        """
        def step():
            if config.detector in FITTABLE and config.model is None \
                    and config.train_range is None and not config.strip_labeled:
                raise ValidationError(f"{config.detector} needs --model or a training split "
                                      "(--train-range / --strip-labeled)")
            series = read_features(config.input)
            attacks = read_truth(config.truth) if config.truth else None
            os.makedirs(config.output_dir, exist_ok=True)
            outcomes = self._per_feature(config, lambda f: self._detect_one(series, f, config, attacks))

            paths: Dict[str, Any] = {}
            reports = {}
            for feature, (report, plotted) in outcomes.items():
                stem = f'{config.detector}_{feature}'
                paths[feature] = self.report_generator.write_detection(report, config.output_dir, stem)
                if config.plot:
                    paths[feature]['plot'] = self.report_generator.write_plot(
                        os.path.join(config.output_dir, f'plot_{stem}.svg'), plotted,
                        f'{config.detector} / {feature}', report.thresholds.get('threshold'),
                        series.label, report.flagged)
                reports[feature] = report
            if config.detector == 'matrix_profile':
                paths['profile'] = self.report_generator.write_profiles(
                    {f: outcomes[f][1] for f in config.features}, series.label,
                    os.path.join(config.output_dir, 'profile.csv'))
            return {'reports': reports, 'paths': paths}
        return self._run(step)

    def report(self, report_paths: Sequence[str], output_dir: str) -> Dict[str, Any]:
        """Collect report JSON files into summary.md."""
        def step():
            for path in report_paths:
                if not os.path.exists(path):
                    raise ValidationError(f"File not found: {path}")
            reports = self.report_generator.read_reports(report_paths)
            os.makedirs(output_dir, exist_ok=True)
            path = self.report_generator.write_summary(reports, os.path.join(output_dir, 'summary.md'))
            return {'summary_path': path, 'n_reports': len(reports)}
        return self._run(step)
