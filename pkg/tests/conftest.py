import numpy as np
import pytest

from lieode import assoc
from lieode import problem as pr
from lieode import problems as pf

EX1_RHS = ["cos(x) + y1^2 + y2 - (1 + x^2 + sin(x)^2)", "2*x - (1 + x^2)*sin(x) + y1*y2"]


def example1_system():
    return pr.autonomize(EX1_RHS, [0, 1], (-1, 1), label="example1")


def example2_system(eps=0.2):
    return pr.reduce_order(2, f"-0.4*exp(-0.4*x)*cos(x) - y - 2*{eps}*dy", [0, 1], (0, 2))


def example2_split(eps=0.2):
    return pr.split(example2_system(eps), {"y1": "y2", "y2": f"-y1 - 2*{eps}*y2"})


def duffing_system(eps=0.5):
    return pr.reduce_order(2, f"-y - 2*{eps}*y^3", [1, 0], (0, 2), clock=False)


@pytest.fixture(scope="session")
def ex1():
    system = example1_system()
    split = pr.split(system, "heuristic")
    return split, assoc.solve_closed_form(split, "example1")


@pytest.fixture(scope="session")
def ex2():
    split = example2_split()
    return split, assoc.solve_closed_form(split, "example2", {"eps": 0.2})


@pytest.fixture(scope="session")
def ex3():
    split = pr.split(duffing_system(), ["y2", "-y1"])
    return split, assoc.solve_closed_form(split, "example3")


@pytest.fixture(scope="session")
def builtin_problems():
    return {name: pf.build(pf.builtin(name)) for name in pf.BUILTINS}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, repeated at the end of the pytest run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
