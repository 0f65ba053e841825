import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from inexact_hypergrad.problems import gen_hyperclean, gen_quadratic  # noqa: E402


@pytest.fixture(scope="session")
def quad100():
    """Seed-0 quadratic, 100 rows by 10 columns: (instance, task, oracle)."""
    return gen_quadratic(0, 100, 10)


@pytest.fixture(scope="session")
def quad1000():
    return gen_quadratic(0, 1000, 10)


@pytest.fixture(scope="session")
def small_clean():
    inst, tasks = gen_hyperclean(0, n_train=60, n_val=30, n_classes=3, dim_f=4)
    return inst, tasks[0]


@pytest.fixture
def ones10():
    return np.ones(10)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
