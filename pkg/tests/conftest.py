import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@functools.lru_cache(maxsize=None)
def preset_data(name, n=None, seed=None):
    from pptrial.sim import generate_trial, get_preset

    cfg = get_preset(name)
    return cfg, generate_trial(cfg, seed=seed, n=n)


@functools.lru_cache(maxsize=None)
def preset_truth(name, strategy="protocol", direct=False):
    from pptrial.sim import get_preset, ground_truth

    return ground_truth(get_preset(name), strategy, direct=direct)
