#!/usr/bin/env python3
"""
tsids - Time-Series Intrusion Detection, Main Entry Point

Turns industrial network packet records into per-second feature series and
flags intrusions with Matrix Profile, SARIMA and LSTM detectors.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.analyzer import FITTABLE, IntrusionAnalyzer, RunConfig, parse_range
from src.detectors import DETECTORS
from src.detectors.lstm import TrainConfig
from src.detectors.sarima import GdConfig, SarimaOrders
from src.errors import TsidsError
from src.extractors.feature_aggregator import FEATURES
from src.simulation.traffic_simulator import AttackSpec, SimConfig, random_attack_schedule
from src.utils.seeding import sub_seed


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument('--output-dir', '-o', default='.', help='Directory for output files (default: .)')
    parser.add_argument('--seed', type=int, default=0, help='Single source of randomness (default: 0)')
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('--verbose', '-v', action='store_true', help='Debug logging')
    verbosity.add_argument('--quiet', '-q', action='store_true', help='Errors only')


def _add_detector_options(parser: argparse.ArgumentParser, detectors):
    parser.add_argument('--input', '-i', required=True, help='Feature CSV written by ingest')
    parser.add_argument('--detector', '-d', required=True, choices=detectors)
    parser.add_argument('--feature', '-f', action='append', choices=FEATURES,
                        help='Feature to analyse; repeat for several (default: all three)')
    parser.add_argument('--train-range', help='Training seconds a:b (half-open)')
    parser.add_argument('--strip-labeled', action='store_true',
                        help='Train only on windows free of labeled seconds (lstm)')
    parser.add_argument('--allow-labeled', action='store_true',
                        help='Accept labeled seconds inside the training range')
    parser.add_argument('--workers', type=int, default=1, help='Features processed in parallel')

    sarima_group = parser.add_argument_group('sarima')
    sarima_group.add_argument('--orders', default='4,0,0,1,0,0,10', help='p,d,q,P,D,Q,s (default: 4,0,0,1,0,0,10)')
    sarima_group.add_argument('--lr', type=float, default=GdConfig.learning_rate, help='Gradient descent learning rate')
    sarima_group.add_argument('--max-iters', type=int, default=GdConfig.max_iters)
    sarima_group.add_argument('--tol', type=float, default=GdConfig.tol, help='Gradient-norm stop')

    lstm_group = parser.add_argument_group('lstm')
    lstm_group.add_argument('--hidden', type=int, default=32, help='Neurons per layer (default: 32)')
    lstm_group.add_argument('--layers', type=int, choices=(1, 3), default=1)
    lstm_group.add_argument('--seq-len', type=int, default=10)
    lstm_group.add_argument('--iterations', type=int, default=TrainConfig.iterations)
    lstm_group.add_argument('--lstm-lr', type=float, default=TrainConfig.learning_rate)
    lstm_group.add_argument('--batch', type=int, default=TrainConfig.batch_size)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='tsids',
        description="Detect intrusions in industrial network traffic with time-series methods",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py simulate --duration 560 --attack scan_burst:420.3:2 -o run
  python main.py ingest --input run/events.csv -o run
  python main.py detect --input run/features.csv --detector matrix_profile --plot -o run
  python main.py fit --input run/features.csv --detector sarima --feature port_pairs --train-range 0:370 -o run
  python main.py detect --input run/features.csv --detector sarima --feature port_pairs --model run -o run
  python main.py report --input run/report_sarima_port_pairs.json -o run
        """
    )
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='Generate labeled synthetic traffic')
    _add_common(simulate)
    simulate.add_argument('--duration', type=int, default=600, help='Capture length in seconds')
    simulate.add_argument('--rtus', type=int, default=6)
    simulate.add_argument('--mtus', type=int, default=1)
    simulate.add_argument('--poll-interval', type=int, default=10)
    simulate.add_argument('--manual-rate', type=float, default=1.0, help='Manual operations per minute')
    simulate.add_argument('--attack', action='append', default=[],
                          help='kind:start:duration[:intensity]; repeat for several')
    simulate.add_argument('--random-attacks', type=int, default=0, help='Number of randomly placed attacks')
    simulate.add_argument('--attack-window', help='Seconds a:b where random attacks may fall')

    ingest = commands.add_parser('ingest', help='Aggregate packet events into per-second features')
    _add_common(ingest)
    ingest.add_argument('--input', '-i', required=True, help='Packet-event CSV or JSONL')
    ingest.add_argument('--extra-columns', action='store_true',
                        help='Also write bytes, protocols and one-hot flag/function-code columns')

    fit = commands.add_parser('fit', help='Fit SARIMA or LSTM models on clean traffic')
    _add_common(fit)
    _add_detector_options(fit, FITTABLE)

    detect = commands.add_parser('detect', help='Run a detector and score it against the labels')
    _add_common(detect)
    _add_detector_options(detect, DETECTORS)
    detect.add_argument('--m', type=int, default=10, help='Matrix profile window length')
    detect.add_argument('--quantile', type=float, default=0.9995, help='Gaussian quantile for SARIMA')
    detect.add_argument('--multiplier', type=float, default=1.0, help='Multiple of the SARIMA quantile')
    detect.add_argument('--threshold', type=float, help='Explicit detection threshold')
    detect.add_argument('--lstm-threshold', choices=('ma', 'nm'), default='ma')
    detect.add_argument('--confusion', action='store_true',
                        help='Confusion metrics for matrix profile runs too')
    detect.add_argument('--model', help='Model JSON (one feature) or directory written by fit')
    detect.add_argument('--truth', help='Truth JSON from simulate, for real-second latency')
    detect.add_argument('--plot', action='store_true', help='Write an SVG chart per feature')

    report = commands.add_parser('report', help='Summarize report JSON files as markdown')
    _add_common(report)
    report.add_argument('--input', '-i', nargs='+', required=True, help='Report JSON files')
    return parser


def _run_config(args) -> RunConfig:
    return RunConfig(
        input=args.input,
        output_dir=args.output_dir,
        features=args.feature or list(FEATURES),
        detector=args.detector,
        m=getattr(args, 'm', 10),
        orders=SarimaOrders.parse(args.orders),
        gd=GdConfig(learning_rate=args.lr, max_iters=args.max_iters, tol=args.tol),
        quantile=getattr(args, 'quantile', 0.9995),
        multiplier=getattr(args, 'multiplier', 1.0),
        train_range=parse_range(args.train_range),
        strip_labeled=args.strip_labeled,
        allow_labeled=args.allow_labeled,
        hidden_size=args.hidden,
        n_layers=args.layers,
        seq_len=args.seq_len,
        train=TrainConfig(iterations=args.iterations, learning_rate=args.lstm_lr,
                          batch_size=args.batch, rng_seed=args.seed),
        lstm_threshold=getattr(args, 'lstm_threshold', 'ma'),
        threshold=getattr(args, 'threshold', None),
        confusion=getattr(args, 'confusion', False),
        model=getattr(args, 'model', None),
        truth=getattr(args, 'truth', None),
        plot=getattr(args, 'plot', False),
        seed=args.seed,
        workers=args.workers,
    )


def _sim_config(args) -> SimConfig:
    attacks = [AttackSpec.parse(text) for text in args.attack]
    if args.random_attacks:
        window = parse_range(args.attack_window) or (2 * args.poll_interval, args.duration)
        attacks += random_attack_schedule(sub_seed(args.seed, 'attacks'), window, args.random_attacks,
                                          poll_interval_s=args.poll_interval)
    return SimConfig(
        duration_s=args.duration,
        n_rtus=args.rtus,
        n_mtus=args.mtus,
        poll_interval_s=args.poll_interval,
        manual_op_rate=args.manual_rate,
        attacks=attacks,
        rng_seed=args.seed,
    )


def cmd_simulate(args, analyzer: IntrusionAnalyzer) -> dict:
    config = _sim_config(args)
    print(f"🚀 Simulating {config.duration_s}s of traffic ({len(config.attacks)} attacks, seed {config.rng_seed})")
    result = analyzer.simulate(config, args.output_dir)
    if result['success']:
        print(f"✅ {result['n_events']:,} packets ({result['n_malicious']:,} malicious)")
        print(f"📄 Events: {result['events_path']}")
        print(f"📄 Truth: {result['truth_path']}")
    return result


def cmd_ingest(args, analyzer: IntrusionAnalyzer) -> dict:
    print(f"📄 Aggregating packet events from: {args.input}")
    result = analyzer.ingest(args.input, args.output_dir, args.extra_columns)
    if result['success']:
        print(f"✅ {result['n_seconds']} seconds, {result['n_attacks']} labeled attack intervals")
        print(f"📊 Features saved to: {result['features_path']}")
    return result


def cmd_fit(args, analyzer: IntrusionAnalyzer) -> dict:
    config = _run_config(args)
    print(f"🔍 Fitting {config.detector} on {', '.join(config.features)}")
    result = analyzer.fit(config)
    if result['success']:
        for feature, path in result['model_paths'].items():
            print(f"✅ {feature}: {path}")
    return result


def cmd_detect(args, analyzer: IntrusionAnalyzer) -> dict:
    config = _run_config(args)
    print(f"🔍 Running {config.detector} on {', '.join(config.features)}")
    result = analyzer.detect(config)
    if result['success']:
        print("\n📋 Summary:")
        for feature, report in result['reports'].items():
            detected = sum(row.first_detection is not None for row in report.latency if row.attack_start is not None)
            attacks = sum(row.attack_start is not None for row in report.latency)
            f1 = report.metrics.f1 if report.metrics else None
            print(f"   • {feature}: threshold {report.thresholds.get('threshold'):.6g}, "
                  f"{len(report.flagged)} flagged, {detected}/{attacks} attacks detected, "
                  f"{len(report.false_positives)} unattributed flags, "
                  f"F1 {'n/a' if f1 is None else f'{f1:.4f}'}")
    return result


def cmd_report(args, analyzer: IntrusionAnalyzer) -> dict:
    result = analyzer.report(args.input, args.output_dir)
    if result['success']:
        print(f"📊 Summary of {result['n_reports']} runs saved to: {result['summary_path']}")
    return result


COMMANDS = {
    'simulate': cmd_simulate,
    'ingest': cmd_ingest,
    'fit': cmd_fit,
    'detect': cmd_detect,
    'report': cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2

    level = logging.DEBUG if args.verbose else logging.ERROR if args.quiet else logging.WARNING
    logging.basicConfig(level=level, format='%(levelname)s: %(message)s')

    analyzer = IntrusionAnalyzer()
    try:
        result = COMMANDS[args.command](args, analyzer)
    except TsidsError as e:
        print(f"❌ Error: {e}")
        return e.exit_code

    if not result['success']:
        print("❌ Run failed!")
        print(f"Error: {result['error']}")
        return result['exit_code']
    return 0


if __name__ == "__main__":
    sys.exit(main())
