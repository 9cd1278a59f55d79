import pytest

from helpers import quad_on
from shsvl import build_complete, build_directed_cycle, build_ring_lattice, make_quadratic


@pytest.fixture
def cycle3():
    return build_directed_cycle(3, 0.9)


@pytest.fixture
def lattice7():
    return build_ring_lattice(7, (1, 3, 5), 0.25)


@pytest.fixture
def complete5():
    # weights 0.1 put sigma at exactly 0.5
    return build_complete(5, 0.1)


@pytest.fixture
def quad3():
    return quad_on(3)


@pytest.fixture
def scalar_quad():
    return make_quadratic([1.0, 3.0], [0.0, 4.0])


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance verdict line; all lines are echoed at the end of the run."""
    def emit(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)
