import sys

import numpy as np
import pytest

from mtem.core import SdeProblem
from mtem.problems import builtin_example1, builtin_example2, builtin_linear


def scalar_problem(drift, diffusion, x0=0.0, lip=1.0, name="scalar"):
    """d = m = 1 problem from elementwise scalar callables."""
    return SdeProblem(1, 1, drift, lambda x: np.asarray(diffusion(x))[..., None],
                      [x0], lambda _: lip, name=name)


@pytest.fixture(scope="session")
def ex1():
    return builtin_example1()


@pytest.fixture(scope="session")
def ex2():
    return builtin_example2()


@pytest.fixture(scope="session")
def linear():
    return builtin_linear()


@pytest.fixture
def frozen():
    return scalar_problem(lambda x: 0.0 * x, lambda x: 0.0 * x, x0=1.5, name="frozen")


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
