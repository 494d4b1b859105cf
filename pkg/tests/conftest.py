import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from reciprec.domain import Dataset, assign_segments, quantile_boundary, split_by_time  # noqa: E402
from reciprec.learners import TrainConfig, train_reply_model, train_scout_model  # noqa: E402
from reciprec.synth import SynthConfig, generate_ground_truth, simulate_log  # noqa: E402


def make_dataset(rows, nc, ns) -> Dataset:
    """rows: (company, seeker, scout, reply); timestamps are the row index."""
    arr = np.array(rows, dtype=np.int64).reshape(-1, 4)
    ts = np.arange(len(arr))
    return Dataset(ts, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], nc, ns)


@pytest.fixture(scope="session")
def default_market():
    cfg = SynthConfig(rng_seed=0)
    truth = generate_ground_truth(cfg)
    data = simulate_log(truth, cfg)
    split = split_by_time(data, quantile_boundary(data, 0.8))
    return cfg, truth, data, split


@pytest.fixture(scope="session")
def default_models(default_market):
    _, _, _, split = default_market
    lc = TrainConfig(rng_seed=0)
    return train_scout_model(split.train, lc), train_reply_model(split.train, lc)


@pytest.fixture(scope="session")
def small_market():
    cfg = SynthConfig(num_companies=40, num_seekers=200, exposures_per_company=50, rng_seed=7)
    truth = generate_ground_truth(cfg)
    data = simulate_log(truth, cfg)
    split = split_by_time(data, quantile_boundary(data, 0.8))
    return cfg, truth, data, split, assign_segments(split.train)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
