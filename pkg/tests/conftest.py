import time
from dataclasses import dataclass

import numpy as np
import pytest

from ttfuse.phantom import corpus_specs, generate_phantom
from ttfuse.training import TrainConfig, save_checkpoint, train


@dataclass
class TrainedRun:
    result: object
    seconds: float
    path: object
    config: TrainConfig


@pytest.fixture(scope="session")
def trained(tmp_path_factory):
    """The 5-epoch, 16-pair, 128x128 run shared by everything that needs a trained net."""
    pairs = [generate_phantom(s) for s in corpus_specs(16, 128, seed=7)]
    config = TrainConfig(epochs=5, batch_size=4, seed=0)
    start = time.perf_counter()
    result = train(pairs, config)
    seconds = time.perf_counter() - start
    path = save_checkpoint(result.network, tmp_path_factory.mktemp("ckpt") / "net.ttfz")
    return TrainedRun(result, seconds, path, config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report one line each; collected here and printed at the end of the run
ACCEPTANCE_LINES = {}


@pytest.fixture
def record():
    def _record(number, passed, detail):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
