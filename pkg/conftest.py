import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.extractors.feature_aggregator import aggregate_per_second
from src.simulation.traffic_simulator import SimConfig, generate, random_attack_schedule


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20240611))


@pytest.fixture
def quiet_config():
    """30 s, one MTU polling three RTUs, no manual operations or attacks."""
    return SimConfig(duration_s=30, n_rtus=3, n_mtus=1, manual_op_rate=0.0, rng_seed=7)


def synthetic_run(seed: int):
    """
    370 s of clean training traffic followed by 190 s of test traffic with
    2-4 scan_burst or file_transfer attacks, 10 s polling and
    manual-operation noise. fake_command only rescales a poll spike, which
    z-normalized windows cannot see, so the shared runs leave it out.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    count = int(rng.integers(2, 5))
    attacks = random_attack_schedule(seed, window=(375.0, 555.0), count=count,
                                     kinds=('scan_burst', 'file_transfer'),
                                     duration_range=(1.5, 4.0), min_gap_s=20.0)
    config = SimConfig(duration_s=560, n_rtus=6, n_mtus=1, poll_interval_s=10,
                       manual_op_rate=2.0, attacks=attacks, rng_seed=seed)
    return aggregate_per_second(generate(config)), config


@pytest.fixture
def make_run():
    return synthetic_run
