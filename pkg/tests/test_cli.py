import json
import math

import pytest

from main import main

ATTACK = 'scan_burst:250.3:2:40'


def _simulate(directory, *extra):
    return main(['simulate', '--duration', '300', '--rtus', '4', '--attack', ATTACK,
                 '--seed', '5', '-q', '-o', str(directory), *extra])


@pytest.fixture
def run_dir(tmp_path):
    """A simulated and ingested 300 s capture with one attack at 250.3 s."""
    assert _simulate(tmp_path) == 0
    assert main(['ingest', '-i', str(tmp_path / 'events.csv'), '-q', '-o', str(tmp_path)]) == 0
    return tmp_path


def test_simulate_polling_only(tmp_path):
    code = main(['simulate', '--duration', '30', '--rtus', '3', '--manual-rate', '0',
                 '--seed', '7', '-o', str(tmp_path)])
    assert code == 0
    lines = (tmp_path / 'events.csv').read_text().splitlines()
    assert len(lines) == 1 + 18
    truth = json.loads((tmp_path / 'truth.json').read_text())
    assert truth['attacks'] == []


def test_simulate_is_byte_identical_per_seed(tmp_path):
    assert _simulate(tmp_path / 'a') == 0
    assert _simulate(tmp_path / 'b') == 0
    for name in ('events.csv', 'truth.json'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()


def test_simulate_rejects_overlapping_attacks(tmp_path, capsys):
    code = main(['simulate', '--duration', '60', '--attack', 'scan_burst:10:5',
                 '--attack', 'file_transfer:12:1', '-o', str(tmp_path)])
    assert code == 2
    assert '❌' in capsys.readouterr().out
    assert not (tmp_path / 'events.csv').exists()


def test_ingest_empty_file(tmp_path):
    source = tmp_path / 'empty.csv'
    source.write_text('')
    assert main(['ingest', '-i', str(source), '-q', '-o', str(tmp_path)]) == 0
    assert (tmp_path / 'features.csv').read_text() == 'second,packets,ip_pairs,port_pairs,label\n'


def test_ingest_malformed_row(tmp_path, capsys):
    source = tmp_path / 'events.csv'
    source.write_text(
        'timestamp_us,src_ip,dst_ip,src_port,dst_port,protocol,length_bytes,flags,function_code,malicious\n'
        '1000,10.0.0.1,10.0.0.2,49152,502,TCP,66,ACK,3,0\n'
        'soon,10.0.0.1,10.0.0.2,49152,502,TCP,66,ACK,3,0\n'
    )
    assert main(['ingest', '-i', str(source), '-o', str(tmp_path)]) == 2
    assert 'line 3' in capsys.readouterr().out


def test_ingest_missing_input(tmp_path):
    assert main(['ingest', '-i', str(tmp_path / 'nope.csv'), '-q', '-o', str(tmp_path)]) == 2


def test_matrix_profile_flags_the_attack(run_dir):
    code = main(['detect', '-i', str(run_dir / 'features.csv'), '--detector', 'matrix_profile',
                 '--truth', str(run_dir / 'truth.json'), '--plot', '-q', '-o', str(run_dir)])
    assert code == 0
    for feature in ('packets', 'ip_pairs', 'port_pairs'):
        report = json.loads((run_dir / f'report_matrix_profile_{feature}.json').read_text())
        assert report['counts'] is None
        assert report['latency'][0]['attack_start'] == pytest.approx(250.3)
        assert report['latency'][0]['first_detection'] is not None
        assert '<svg' in (run_dir / f'plot_matrix_profile_{feature}.svg').read_text()
    header = (run_dir / 'profile.csv').read_text().splitlines()[0]
    assert header == 'second,packets_profile,ip_pairs_profile,port_pairs_profile,label'


def test_matrix_profile_confusion_on_request(run_dir):
    code = main(['detect', '-i', str(run_dir / 'features.csv'), '--detector', 'matrix_profile',
                 '--feature', 'packets', '--confusion', '-q', '-o', str(run_dir)])
    assert code == 0
    report = json.loads((run_dir / 'report_matrix_profile_packets.json').read_text())
    assert report['counts']['tp'] >= 1


def test_unknown_detector(run_dir):
    assert main(['detect', '-i', str(run_dir / 'features.csv'), '--detector', 'prophet',
                 '-o', str(run_dir)]) == 2


def test_detect_on_non_numeric_features(tmp_path, capsys):
    source = tmp_path / 'features.csv'
    source.write_text('second,packets,ip_pairs,port_pairs,label\n0,1,1,1,0\n1,1,x,1,0\n')
    assert main(['detect', '-i', str(source), '--detector', 'matrix_profile',
                 '-o', str(tmp_path)]) == 2
    assert 'line 3' in capsys.readouterr().out


def test_fit_sarima_writes_model(run_dir):
    code = main(['fit', '-i', str(run_dir / 'features.csv'), '--detector', 'sarima',
                 '--feature', 'port_pairs', '--train-range', '0:200', '-q', '-o', str(run_dir)])
    assert code == 0
    model = json.loads((run_dir / 'model_sarima_port_pairs.json').read_text())
    assert model['detector'] == 'sarima'
    assert model['feature'] == 'port_pairs'
    assert model['train_start'] == 0
    assert model['orders']['s'] == 10
    assert len(model['alpha']) == 4 and len(model['phi']) == 1
    assert math.isfinite(model['fit']['final_loss'])


def test_fit_is_deterministic(run_dir, tmp_path):
    args = ['fit', '-i', str(run_dir / 'features.csv'), '--detector', 'lstm', '--feature', 'packets',
            '--train-range', '0:200', '--hidden', '4', '--iterations', '5', '--batch', '8', '-q']
    assert main(args + ['-o', str(tmp_path / 'one')]) == 0
    assert main(args + ['-o', str(tmp_path / 'two')]) == 0
    first = (tmp_path / 'one' / 'model_lstm_packets.json').read_bytes()
    assert first == (tmp_path / 'two' / 'model_lstm_packets.json').read_bytes()
    assert json.loads(first)['hidden_size'] == 4


def test_fit_rejects_a_range_past_the_series(run_dir):
    assert main(['fit', '-i', str(run_dir / 'features.csv'), '--detector', 'sarima',
                 '--train-range', '0:5000', '-q', '-o', str(run_dir)]) == 2


def test_fit_rejects_labeled_training_seconds(run_dir, capsys):
    args = ['fit', '-i', str(run_dir / 'features.csv'), '--detector', 'sarima',
            '--feature', 'port_pairs', '--train-range', '100:290', '-o', str(run_dir)]
    assert main(args) == 2
    assert 'labeled seconds' in capsys.readouterr().out
    assert main(args + ['--allow-labeled', '-q']) == 0


def test_fit_needs_a_training_split(run_dir):
    assert main(['fit', '-i', str(run_dir / 'features.csv'), '--detector', 'sarima',
                 '-q', '-o', str(run_dir)]) == 2


def test_detect_with_fitted_sarima_model(run_dir):
    base = ['-i', str(run_dir / 'features.csv'), '--detector', 'sarima', '--feature', 'port_pairs', '-q']
    assert main(['fit', *base, '--train-range', '0:200', '-o', str(run_dir)]) == 0
    assert main(['detect', *base, '--model', str(run_dir), '-o', str(run_dir)]) == 0

    report = json.loads((run_dir / 'report_sarima_port_pairs.json').read_text())
    assert report['latency'][0]['first_detection'] in (250, 251)
    assert report['counts']['fn'] == 0
    table = (run_dir / 'detection_sarima_port_pairs.csv').read_text().splitlines()
    assert len(table) == 1 + 300


def test_model_for_another_feature_is_rejected(run_dir, capsys):
    base = ['-i', str(run_dir / 'features.csv'), '--detector', 'sarima', '-q', '-o', str(run_dir)]
    assert main(['fit', *base, '--feature', 'port_pairs', '--train-range', '0:200']) == 0
    model = str(run_dir / 'model_sarima_port_pairs.json')
    assert main(['detect', *base, '--feature', 'packets', '--model', model]) == 2
    assert 'fitted on port_pairs' in capsys.readouterr().out


def test_detect_with_lstm_model(run_dir):
    base = ['-i', str(run_dir / 'features.csv'), '--detector', 'lstm', '--feature', 'packets', '-q']
    assert main(['fit', *base, '--train-range', '0:200', '--hidden', '4', '--iterations', '20',
                 '--batch', '8', '-o', str(run_dir)]) == 0
    assert main(['detect', *base, '--model', str(run_dir), '--lstm-threshold', 'ma',
                 '-o', str(run_dir)]) == 0
    report = json.loads((run_dir / 'report_lstm_packets.json').read_text())
    assert report['thresholds']['kind'] == 'ma'
    # the MA threshold flags every labeled second
    assert report['counts']['fn'] == 0


def test_report_summary(run_dir):
    assert main(['detect', '-i', str(run_dir / 'features.csv'), '--detector', 'matrix_profile',
                 '--feature', 'port_pairs', '-q', '-o', str(run_dir)]) == 0
    code = main(['report', '-i', str(run_dir / 'report_matrix_profile_port_pairs.json'),
                 '-q', '-o', str(run_dir)])
    assert code == 0
    summary = (run_dir / 'summary.md').read_text()
    assert '| matrix_profile | port_pairs |' in summary


def test_report_missing_input(tmp_path):
    assert main(['report', '-i', str(tmp_path / 'missing.json'), '-q', '-o', str(tmp_path)]) == 2


def _pipeline(directory):
    features = str(directory / 'features.csv')
    steps = [
        ['simulate', '--duration', '300', '--rtus', '4', '--random-attacks', '2',
         '--attack-window', '220:300', '--seed', '13'],
        ['ingest', '-i', str(directory / 'events.csv'), '--extra-columns'],
        ['fit', '-i', features, '--detector', 'sarima', '--feature', 'port_pairs', '--train-range', '0:200'],
        ['detect', '-i', features, '--detector', 'sarima', '--feature', 'port_pairs', '--model', str(directory)],
        ['detect', '-i', features, '--detector', 'matrix_profile', '--plot'],
        ['report', '-i', str(directory / 'report_sarima_port_pairs.json'),
         str(directory / 'report_matrix_profile_packets.json')],
    ]
    for step in steps:
        assert main(step + ['-q', '-o', str(directory)]) == 0, step


@pytest.mark.slow
def test_whole_pipeline_is_reproducible(tmp_path):
    first, second = tmp_path / 'first', tmp_path / 'second'
    _pipeline(first)
    _pipeline(second)
    names = sorted(p.name for p in first.iterdir())
    assert names == sorted(p.name for p in second.iterdir())
    assert 'summary.md' in names
    for name in names:
        assert (first / name).read_bytes() == (second / name).read_bytes(), name
