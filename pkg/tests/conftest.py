import pytest

from builders import make_instance, random_micro


@pytest.fixture
def fig1():
    """Four stations A, B, C, D; line 0 runs A-C-D, line 1 runs A-B-C."""
    A, B, C, D = range(4)
    return make_instance(
        4, [(A, C, 4.0), (C, D, 3.0), (A, B, 2.0), (B, C, 2.0)],
        [((A, C, D), 1.0, 1.0, 1.0, 5.0), ((A, B, C), 1.0, 1.0, 1.0, 5.0)],
        [(A, D, 10.0), (B, D, 5.0)], bidirectional=False, dwell=0.0, transfer_penalty=5.0)


@pytest.fixture
def two_route():
    """One OD with two single-line routes whose link costs are 10 + x and 15 + x/2."""
    return make_instance(
        3, [(0, 1, 9.0), (0, 2, 6.5), (2, 1, 6.5)],
        [((0, 1), 1.0, 1.0, 1.0, 5.0, 1.0), ((0, 2, 1), 1.0, 1.0, 1.0, 5.0, 0.25)],
        [(0, 1, 12.0)], dwell=1.0)


@pytest.fixture
def micro():
    return random_micro


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
