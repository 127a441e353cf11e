import io
import json
import re
import logging
from dataclasses import dataclass, field, asdict
from typing import Dict, Any, FrozenSet, Iterable, List, Optional, TextIO, Union

import pandas as pd

from ..errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

EVENT_COLUMNS = [
    'timestamp_us', 'src_ip', 'dst_ip', 'src_port', 'dst_port',
    'protocol', 'length_bytes', 'flags', 'function_code', 'malicious',
]


@dataclass(frozen=True)
class PacketEvent:
    """One observed packet, timestamped relative to capture start."""

    timestamp_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    protocol: str
    length_bytes: int
    flags: FrozenSet[str] = field(default_factory=frozenset)
    function_code: Optional[int] = None
    malicious: bool = False

    def __post_init__(self):
        if self.timestamp_us < 0:
            raise ValidationError(f"timestamp_us must be >= 0, got {self.timestamp_us}")
        for name in ('src_port', 'dst_port'):
            port = getattr(self, name)
            if not 0 <= port <= 65535:
                raise ValidationError(f"{name} out of range 0-65535: {port}")
        if self.length_bytes < 0:
            raise ValidationError(f"length_bytes must be >= 0, got {self.length_bytes}")

    def to_record(self) -> Dict[str, Any]:
        """Flat record in the packet-event CSV column order."""
        record = asdict(self)
        record['flags'] = ';'.join(sorted(self.flags))
        record['function_code'] = '' if self.function_code is None else self.function_code
        record['malicious'] = int(self.malicious)
        return {col: record[col] for col in EVENT_COLUMNS}


def _blank(value: Any) -> bool:
    if value is None:
        return True
    if isinstance(value, str):
        return value.strip() == ''
    return isinstance(value, float) and pd.isna(value)


def _to_int(value: Any, column: str, line: int, optional: bool = False) -> Optional[int]:
    if _blank(value):
        if optional:
            return None
        raise ParseError(f"missing value for '{column}'", line)
    if isinstance(value, bool):
        return int(value)
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ParseError(f"'{column}' is not an integer: {value!r}", line)
    if not number.is_integer():
        raise ParseError(f"'{column}' is not an integer: {value!r}", line)
    return int(number)


def _record_to_event(record: Dict[str, Any], line: int) -> PacketEvent:
    malicious = _to_int(record.get('malicious'), 'malicious', line)
    if malicious not in (0, 1):
        raise ParseError(f"'malicious' must be 0 or 1, got {malicious}", line)

    flags = record.get('flags')
    if _blank(flags):
        flags = ''
    if isinstance(flags, (list, tuple, set, frozenset)):
        flag_set = frozenset(str(f) for f in flags if str(f))
    else:
        flag_set = frozenset(f for f in str(flags).split(';') if f)

    for col in ('src_ip', 'dst_ip', 'protocol'):
        if _blank(record.get(col)):
            raise ParseError(f"missing value for '{col}'", line)

    try:
        return PacketEvent(
            timestamp_us=_to_int(record.get('timestamp_us'), 'timestamp_us', line),
            src_ip=str(record['src_ip']),
            dst_ip=str(record['dst_ip']),
            src_port=_to_int(record.get('src_port'), 'src_port', line),
            dst_port=_to_int(record.get('dst_port'), 'dst_port', line),
            protocol=str(record['protocol']),
            length_bytes=_to_int(record.get('length_bytes'), 'length_bytes', line),
            flags=flag_set,
            function_code=_to_int(record.get('function_code'), 'function_code', line, optional=True),
            malicious=bool(malicious),
        )
    except ValidationError as e:
        if isinstance(e, ParseError):
            raise
        # range violations keep their own type but gain the line number
        raise ValidationError(f"line {line}: {e}") from e


def _parse_csv(text: str) -> List[PacketEvent]:
    try:
        frame = pd.read_csv(io.StringIO(text), dtype=str, keep_default_na=False,
                            skip_blank_lines=False)
    except pd.errors.ParserError as e:
        match = re.search(r'line (\d+)', str(e))
        raise ParseError(f"malformed CSV row: {e}", int(match.group(1)) if match else None)

    missing = [col for col in EVENT_COLUMNS if col not in frame.columns]
    if missing:
        raise ParseError(f"header is missing columns: {', '.join(missing)}", 1)

    events = []
    # header is line 1
    for line, record in enumerate(frame.to_dict('records'), start=2):
        if all(_blank(v) for v in record.values()):
            continue
        events.append(_record_to_event(record, line))
    return events


def _parse_jsonl(text: str) -> List[PacketEvent]:
    events = []
    for line, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON: {e.msg}", line)
        if not isinstance(record, dict):
            raise ParseError("record is not a JSON object", line)
        events.append(_record_to_event(record, line))
    return events


def parse_events(stream: Union[str, TextIO], fmt: Optional[str] = None) -> List[PacketEvent]:
    """
    Parse packet-event records from a CSV or JSONL stream.

    Args:
        stream: Text content or an open text stream
        fmt: 'csv' or 'jsonl'; sniffed from the first non-blank character when omitted

    Returns:
        List[PacketEvent]: Events in timestamp order (stable sort)
    """
    text = stream if isinstance(stream, str) else stream.read()
    if not text.strip():
        return []

    if fmt is None:
        fmt = 'jsonl' if text.lstrip().startswith('{') else 'csv'

    if fmt == 'csv':
        events = _parse_csv(text)
    elif fmt == 'jsonl':
        events = _parse_jsonl(text)
    else:
        raise ValidationError(f"Unsupported event format: {fmt}. Supported formats: csv, jsonl")

    # sorted() is stable, equal timestamps keep file order
    events = sorted(events, key=lambda e: e.timestamp_us)
    logger.info("Parsed %d packet events (%s)", len(events), fmt)
    return events


def read_events(path: str) -> List[PacketEvent]:
    """Parse an event file; '.jsonl' selects JSONL, anything else CSV."""
    fmt = 'jsonl' if str(path).lower().endswith(('.jsonl', '.ndjson')) else 'csv'
    with open(path, 'r', encoding='utf-8') as f:
        return parse_events(f, fmt)


def events_to_frame(events: Iterable[PacketEvent]) -> pd.DataFrame:
    return pd.DataFrame([e.to_record() for e in events], columns=EVENT_COLUMNS)


def write_events(events: Iterable[PacketEvent], path: str) -> str:
    """Write events as packet-event CSV (UTF-8, LF endings)."""
    events_to_frame(events).to_csv(path, index=False, lineterminator='\n')
    return path
