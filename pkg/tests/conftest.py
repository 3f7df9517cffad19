import pytest

from distnewton.netgraph import build_ring
from distnewton.objectives import QuadraticObjective, ObjectiveSet, make_localization_instance, random_quadratic_set


@pytest.fixture(scope="session")
def ring30():
    return build_ring(30, 0.7, 0.15, 0.15)


@pytest.fixture(scope="session")
def loc_instance():
    return make_localization_instance(30, (0.0, 0.0), 0.01, 0)


@pytest.fixture(scope="session")
def quad_set():
    return random_quadratic_set(30, 2, 0)


def identical_quadratics(I, Q, c):
    return ObjectiveSet([QuadraticObjective.centered(Q, c) for _ in range(I)])


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.report_line(number))
