import io

import pytest

from src.errors import ParseError, ValidationError
from src.extractors.event_parser import (
    EVENT_COLUMNS, PacketEvent, events_to_frame, parse_events, read_events, write_events,
)

HEADER = ','.join(EVENT_COLUMNS)


def _row(ts, src='10.0.0.1', dst='10.0.1.1', sport=49152, dport=502, malicious=0, fc='3'):
    return f"{ts},{src},{dst},{sport},{dport},modbus,64,PSH;ACK,{fc},{malicious}"


def test_empty_stream_gives_no_events():
    assert parse_events('') == []
    assert parse_events(io.StringIO('')) == []


def test_header_only_csv_gives_no_events():
    assert parse_events(HEADER + '\n') == []


def test_single_malicious_row():
    events = parse_events('\n'.join([HEADER, _row(1_500_000, malicious=1)]) + '\n')
    assert len(events) == 1
    event = events[0]
    assert event.malicious is True
    assert event.timestamp_us == 1_500_000
    assert event.flags == frozenset({'PSH', 'ACK'})
    assert event.function_code == 3


def test_shuffled_rows_come_back_sorted():
    stamps = [4_000_000, 1_000_000, 3_000_000, 0, 2_000_000]
    text = '\n'.join([HEADER] + [_row(ts) for ts in stamps]) + '\n'
    events = parse_events(text)
    assert [e.timestamp_us for e in events] == sorted(stamps)


def test_equal_timestamps_keep_file_order():
    text = '\n'.join([HEADER, _row(5, sport=1000), _row(5, sport=2000), _row(1)]) + '\n'
    events = parse_events(text)
    assert [e.src_port for e in events] == [49152, 1000, 2000]


def test_blank_function_code_is_none():
    events = parse_events('\n'.join([HEADER, _row(0, fc='')]) + '\n')
    assert events[0].function_code is None


def test_malformed_row_names_its_line():
    text = '\n'.join([HEADER, _row(0), 'abc,10.0.0.1,10.0.1.1,1,2,tcp,60,,,0']) + '\n'
    with pytest.raises(ParseError) as excinfo:
        parse_events(text)
    assert excinfo.value.line == 3
    assert 'line 3' in str(excinfo.value)


def test_out_of_range_port_is_a_validation_error():
    text = '\n'.join([HEADER, _row(0, dport=70000)]) + '\n'
    with pytest.raises(ValidationError, match='dst_port'):
        parse_events(text)


def test_missing_header_column():
    with pytest.raises(ParseError, match='malicious'):
        parse_events('timestamp_us,src_ip\n1,10.0.0.1\n')


def test_jsonl_records():
    text = ('{"timestamp_us": 2000000, "src_ip": "a", "dst_ip": "b", "src_port": 1, "dst_port": 2, '
            '"protocol": "tcp", "length_bytes": 60, "flags": ["SYN"], "function_code": null, "malicious": 1}\n'
            '{"timestamp_us": 1000000, "src_ip": "a", "dst_ip": "b", "src_port": 1, "dst_port": 2, '
            '"protocol": "tcp", "length_bytes": 60, "flags": "", "function_code": null, "malicious": 0}\n')
    events = parse_events(text)
    assert [e.timestamp_us for e in events] == [1_000_000, 2_000_000]
    assert events[1].flags == frozenset({'SYN'})
    assert events[1].malicious


def test_invalid_jsonl_line():
    with pytest.raises(ParseError) as excinfo:
        parse_events('\n{not json\n', fmt='jsonl')
    assert excinfo.value.line == 2


def test_negative_timestamp_rejected():
    with pytest.raises(ValidationError):
        PacketEvent(-1, 'a', 'b', 1, 2, 'tcp', 60)


def test_written_file_parses_back(tmp_path):
    events = [
        PacketEvent(0, '10.0.0.1', '10.0.1.1', 49152, 502, 'modbus', 64, frozenset({'PSH', 'ACK'}), 3),
        PacketEvent(1_200_000, '10.0.9.10', '10.0.1.2', 40000, 22, 'tcp', 60, frozenset({'SYN'}), None, True),
    ]
    path = write_events(events, str(tmp_path / 'events.csv'))
    assert read_events(path) == events
    assert list(events_to_frame(events).columns) == EVENT_COLUMNS
