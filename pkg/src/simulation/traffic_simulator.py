"""
Synthetic Modbus/TCP-like traffic: periodic polling, aperiodic manual
operations and injected, labeled attacks.

Randomness comes from numpy's PCG64 bit generator seeded with
SimConfig.rng_seed, so fixtures are identical across platforms.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Any, List, Tuple

import numpy as np

from ..errors import ConfigError
from ..extractors.event_parser import PacketEvent

logger = logging.getLogger(__name__)

MODBUS_PORT = 502
US_PER_SECOND = 1_000_000


class AttackKind(str, Enum):
    SCAN_BURST = 'scan_burst'
    FILE_TRANSFER = 'file_transfer'
    FAKE_COMMAND = 'fake_command'


@dataclass
class AttackSpec:
    start_s: float
    duration_s: float
    kind: AttackKind = AttackKind.SCAN_BURST
    intensity: float = 50.0  # packets per second

    def __post_init__(self):
        try:
            self.kind = AttackKind(self.kind)
        except ValueError:
            kinds = ', '.join(k.value for k in AttackKind)
            raise ConfigError(f"Unknown attack kind: {self.kind}. Supported kinds: {kinds}")
        if self.duration_s <= 0:
            raise ConfigError(f"attack duration_s must be > 0, got {self.duration_s}")
        if self.intensity <= 0:
            raise ConfigError(f"attack intensity must be > 0, got {self.intensity}")
        if self.start_s < 0:
            raise ConfigError(f"attack start_s must be >= 0, got {self.start_s}")

    @property
    def end_s(self) -> float:
        return self.start_s + self.duration_s

    @classmethod
    def parse(cls, text: str) -> 'AttackSpec':
        """Parse 'kind:start:duration[:intensity]' as used on the command line."""
        parts = text.split(':')
        if len(parts) not in (3, 4):
            raise ConfigError(f"attack must look like kind:start:duration[:intensity], got {text!r}")
        try:
            numbers = [float(p) for p in parts[1:]]
        except ValueError:
            raise ConfigError(f"attack has non-numeric fields: {text!r}")
        return cls(numbers[0], numbers[1], parts[0], *numbers[2:])


@dataclass
class SimConfig:
    duration_s: int
    n_rtus: int = 6
    n_mtus: int = 1
    poll_interval_s: int = 10
    manual_op_rate: float = 1.0  # expected operations per minute
    attacks: List[AttackSpec] = field(default_factory=list)
    rng_seed: int = 0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ConfigError(f"duration_s must be > 0, got {self.duration_s}")
        if self.poll_interval_s < 1:
            raise ConfigError(f"poll_interval_s must be >= 1, got {self.poll_interval_s}")
        if self.n_rtus < 1:
            raise ConfigError(f"n_rtus must be >= 1, got {self.n_rtus}")
        if self.n_mtus not in (1, 2):
            raise ConfigError(f"n_mtus must be 1 or 2, got {self.n_mtus}")
        if self.manual_op_rate < 0:
            raise ConfigError(f"manual_op_rate must be >= 0, got {self.manual_op_rate}")

        for attack in self.attacks:
            if attack.end_s > self.duration_s:
                raise ConfigError(
                    f"attack at {attack.start_s}s ends after the capture ({self.duration_s}s)")
            if attack.kind is AttackKind.FAKE_COMMAND and \
                    not poll_windows(attack.start_s, attack.end_s, self.poll_interval_s):
                raise ConfigError(
                    f"fake_command at {attack.start_s}s must overlap a poll second "
                    f"(every {self.poll_interval_s}s), the only time the MTU-RTU session is live")
        ordered = sorted(self.attacks, key=lambda a: a.start_s)
        for prev, nxt in zip(ordered, ordered[1:]):
            if nxt.start_s < prev.end_s:
                raise ConfigError(
                    f"attacks overlap: [{prev.start_s}, {prev.end_s}) and [{nxt.start_s}, {nxt.end_s})")
        self.attacks = ordered


def _mtu_ip(k: int) -> str:
    return f"10.0.0.{k + 1}"


def _rtu_ip(r: int) -> str:
    return f"10.0.1.{r + 1}"


def _session_port(mtu: int, rtu: int) -> int:
    # one persistent TCP session per MTU-RTU pair
    return 49152 + mtu * 256 + rtu


def poll_windows(start_s: float, end_s: float, poll_interval_s: int) -> List[Tuple[float, float]]:
    """Parts of [start_s, end_s) that fall inside poll seconds."""
    first = int(math.floor(start_s / poll_interval_s)) * poll_interval_s
    windows = []
    for second in range(first, math.ceil(end_s), poll_interval_s):
        lo, hi = max(float(second), start_s), min(second + 1.0, end_s)
        if lo < hi:
            windows.append((lo, hi))
    return windows


class TrafficSimulator:
    """Generate labeled packet events for one SimConfig."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.rng = np.random.Generator(np.random.PCG64(config.rng_seed))

    def generate(self) -> List[PacketEvent]:
        cfg = self.config
        events: List[PacketEvent] = []
        poll_seconds = list(range(0, cfg.duration_s, cfg.poll_interval_s))

        for second in poll_seconds:
            events.extend(self._poll_cycle(second))
        events.extend(self._manual_operations())
        for index, attack in enumerate(cfg.attacks):
            events.extend(self._attack(index, attack))

        events.sort(key=lambda e: e.timestamp_us)
        logger.info("Simulated %d packets over %ds (%d malicious)",
                    len(events), cfg.duration_s, sum(e.malicious for e in events))
        return events

    def _packet(self, t_us: int, mtu: int, rtu: int, request: bool, function_code: int) -> PacketEvent:
        """One packet on the persistent MTU-RTU session, 60-120 bytes."""
        port = _session_port(mtu, rtu)
        size = int(self.rng.integers(60, 121))
        flags = frozenset({'PSH', 'ACK'})
        if request:
            return PacketEvent(t_us, _mtu_ip(mtu), _rtu_ip(rtu), port, MODBUS_PORT, 'modbus',
                               size, flags, function_code)
        return PacketEvent(t_us, _rtu_ip(rtu), _mtu_ip(mtu), MODBUS_PORT, port, 'modbus',
                           size, flags, function_code)

    def _exchange(self, t_s: float, mtu: int, rtu: int, function_code: int) -> List[PacketEvent]:
        """Request at t_s, response a few milliseconds later in the same second."""
        request_us = int(round(t_s * US_PER_SECOND))
        response_us = request_us + int(self.rng.integers(1_000, 50_000))
        return [
            self._packet(request_us, mtu, rtu, True, function_code),
            self._packet(response_us, mtu, rtu, False, function_code),
        ]

    def _poll_cycle(self, second: int) -> List[PacketEvent]:
        events = []
        for mtu in range(self.config.n_mtus):
            for rtu in range(self.config.n_rtus):
                # request offset keeps the response inside the same second
                offset = float(self.rng.uniform(0.0, 0.5))
                events.extend(self._exchange(second + offset, mtu, rtu, function_code=3))
        return events

    def _manual_operations(self) -> List[PacketEvent]:
        """
        Operator requests arriving as a Poisson process. Each one is queued by
        the MTU and sent in the next poll cycle on the existing session, so the
        arrival times show up snapped to poll seconds in the packet stream.
        """
        cfg = self.config
        rate_per_s = cfg.manual_op_rate / 60.0
        if rate_per_s == 0:
            return []

        events = []
        t = 0.0
        while True:
            t += float(self.rng.exponential(1.0 / rate_per_s))
            if t >= cfg.duration_s:
                break
            # queued by the MTU and sent with its next poll cycle
            cycle = math.ceil(t / cfg.poll_interval_s) * cfg.poll_interval_s
            n_packets = int(self.rng.integers(2, 7))
            mtu = int(self.rng.integers(cfg.n_mtus))
            rtu = int(self.rng.integers(cfg.n_rtus))
            if cycle >= cfg.duration_s:
                continue
            for k in range(n_packets):
                t_us = int(round((cycle + 0.6 + 0.3 * k / n_packets) * US_PER_SECOND))
                events.append(self._packet(t_us, mtu, rtu, request=(k % 2 == 0), function_code=6))
        return events

    def _attack(self, index: int, attack: AttackSpec) -> List[PacketEvent]:
        cfg = self.config
        attacker_ip = f"10.0.9.{10 + index}"
        attacker_port = 40000 + index * 100 + int(self.rng.integers(0, 100))
        target = int(self.rng.integers(cfg.n_rtus))

        if attack.kind is AttackKind.FAKE_COMMAND:
            # the hijacked session only carries traffic during poll seconds
            times = []
            for lo, hi in poll_windows(attack.start_s, attack.end_s, cfg.poll_interval_s):
                n = max(1, int(round(attack.intensity * (hi - lo))))
                times.extend(lo + k * (hi - lo) / n for k in range(n))
        else:
            n_packets = max(1, int(round(attack.intensity * attack.duration_s)))
            times = [attack.start_s + k / attack.intensity for k in range(n_packets)]

        events = []
        for k, t_s in enumerate(times):
            t_us = int(math.floor(t_s * US_PER_SECOND))
            t_us = min(t_us, int(math.ceil(attack.end_s * US_PER_SECOND)) - 1)
            size = int(self.rng.integers(60, 1501))
            if attack.kind is AttackKind.SCAN_BURST:
                src, dst = attacker_ip, _rtu_ip(k % cfg.n_rtus)
                sport, dport, flags, fc = attacker_port, 1 + k % 65535, frozenset({'SYN'}), None
                size = 60
            elif attack.kind is AttackKind.FILE_TRANSFER:
                src, dst = attacker_ip, _rtu_ip(target)
                sport, dport, flags, fc = attacker_port, 4444, frozenset({'PSH', 'ACK'}), None
            else:
                # existing MTU-RTU IP pair on a fresh source port
                src, dst = _mtu_ip(0), _rtu_ip(target)
                sport, dport, flags, fc = attacker_port, MODBUS_PORT, frozenset({'PSH', 'ACK'}), 5
            events.append(PacketEvent(t_us, src, dst, sport, dport, 'tcp' if fc is None else 'modbus',
                                      size, flags, fc, malicious=True))
        return events


def generate(config: SimConfig) -> List[PacketEvent]:
    """Deterministic labeled traffic for a fixed config and seed."""
    return TrafficSimulator(config).generate()


def random_attack_schedule(seed: int, window: Tuple[float, float], count: int,
                           kinds: Tuple[str, ...] = ('scan_burst', 'file_transfer', 'fake_command'),
                           duration_range: Tuple[float, float] = (1.0, 4.0),
                           intensity_range: Tuple[float, float] = (20.0, 60.0),
                           min_gap_s: float = 20.0, poll_interval_s: int = 10) -> List[AttackSpec]:
    """
    Draw `count` non-overlapping attacks inside `window`, at least
    `min_gap_s` apart, for building desk-scale experiments.

    A fake_command start is moved into the nearest poll second that keeps it
    inside the window, so it begins while the hijacked session is live.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    lo, hi = window
    snapping = any(AttackKind(k) is AttackKind.FAKE_COMMAND for k in kinds)
    spacing = min_gap_s + duration_range[1] + (2 * poll_interval_s if snapping else 0)
    free = hi - duration_range[1] - (count - 1) * spacing - lo
    if free < 0:
        raise ConfigError(f"cannot place {count} attacks {min_gap_s}s apart inside {window}")
    # sorted offsets in the slack, then consecutive starts pushed `spacing` apart
    starts = lo + np.sort(rng.uniform(0.0, free, size=count)) + spacing * np.arange(count)

    attacks = []
    for start in starts:
        start_s = round(float(start), 4)
        duration_s = round(float(rng.uniform(*duration_range)), 4)
        kind = AttackKind(kinds[int(rng.integers(len(kinds)))])
        if kind is AttackKind.FAKE_COMMAND:
            start_s = _snap_into_poll_second(start_s, duration_s, window, poll_interval_s)
        attacks.append(AttackSpec(
            start_s=start_s,
            duration_s=duration_s,
            kind=kind,
            intensity=round(float(rng.uniform(*intensity_range)), 2),
        ))
    return attacks


def _snap_into_poll_second(start_s: float, duration_s: float, window: Tuple[float, float],
                           poll_interval_s: int) -> float:
    lo, hi = window
    frac = start_s - math.floor(start_s)
    below = int(math.floor(start_s / poll_interval_s)) * poll_interval_s
    for second in sorted((below, below + poll_interval_s), key=lambda s: abs(s + frac - start_s)):
        candidate = round(second + frac, 4)
        if lo <= candidate and candidate + duration_s <= hi:
            return candidate
    raise ConfigError(f"no poll second near {start_s}s fits a {duration_s}s fake_command inside {window}")


def write_truth(path: str, config: SimConfig) -> str:
    """Sidecar JSON with the ground-truth attack intervals of a simulation."""
    truth: Dict[str, Any] = {
        'duration_s': config.duration_s,
        'poll_interval_s': config.poll_interval_s,
        'seed': config.rng_seed,
        'attacks': [
            {'kind': a.kind.value, 'start_s': a.start_s, 'end_s': a.end_s, 'intensity': a.intensity}
            for a in config.attacks
        ],
    }
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(truth, f, indent=2)
        f.write('\n')
    return path


def read_truth(path: str) -> List[Tuple[float, float]]:
    """Real-second (start, end) attack intervals from a truth sidecar, sorted by start."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            truth = json.load(f)
        intervals = [(float(a['start_s']), float(a['end_s'])) for a in truth['attacks']]
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise ConfigError(f"truth file {path} is malformed: {e}")
    return sorted(intervals)
