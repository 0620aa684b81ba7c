import numpy as np
import pytest

from rsmdp.fixtures import random_doeblin_model

RANDOM_SEED = 2024
N_RANDOM = 200

ACCEPTANCE_LINES: dict[int, str] = {}


def random_models(n=N_RANDOM, seed=RANDOM_SEED, n_states=4):
    rng = np.random.default_rng(seed)
    return [random_doeblin_model(rng, n_states, 2) for _ in range(n)]


@pytest.fixture(scope="session")
def doeblin_models():
    return random_models()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
