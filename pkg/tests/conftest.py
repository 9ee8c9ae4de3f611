import sys
from pathlib import Path

import numpy as np
import pytest

from madmm.fem import assemble
from madmm.mesh import UNIT_SQUARE, unit_square_mesh
from madmm.problems import ProblemSpec, example2

sys.path.insert(0, str(Path(__file__).parent))


def _smooth_target(x1, x2):
    return 10.0 * np.sin(np.pi * x1) * np.sin(2 * np.pi * x2)


@pytest.fixture(scope="session")
def toy_problem():
    """Cheap square problem with both bounds active at the optimum."""
    return ProblemSpec(name="toy", domain=UNIT_SQUARE, alpha=1e-2,
                       bounds=(-0.5, 0.5), y_d=_smooth_target)


@pytest.fixture(scope="session")
def ex2():
    return example2()


@pytest.fixture
def toy_level(toy_problem):
    return assemble(unit_square_mesh(4), toy_problem)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_report(request):
    """``report(criterion, ok, detail)`` prints one PASS/FAIL line and keeps
    it for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def report(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        print(line)
        lines.append(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
