import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

from synprob.core import MarkerQuery, PunctaSize, QuerySpec, VoxelGeometry  # noqa: E402

#: Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def geometry():
    return VoxelGeometry(100.0, 70.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def excitatory_query(size=PunctaSize(0.2, 0.21)) -> QuerySpec:
    return QuerySpec("excitatory", (MarkerQuery("synapsin", size),), (MarkerQuery("PSD-95", size),))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
