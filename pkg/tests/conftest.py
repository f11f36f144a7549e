"""Shared fixtures: the two worked example problems and their expensive
artifacts (branch tables, front curves, forward snapshots), built once per
session and reused across test modules."""

import numpy as np
import pytest

from aer import ProblemSpec, parse, solve_front
from aer.forward import SolverConfig, forward_solve


@pytest.fixture(scope="session")
def ex1():
    return ProblemSpec(
        mu=0.08, k=2.0, x0=-2.0, x1=2.0, a=2.0, T=1.0,
        u_minus_a=parse("-4"), u_plus_a=parse("2"),
        f=parse("cos(pi*x/4)*cos(pi*y/4)"), h0_star=0.0, t0=0.7)


@pytest.fixture(scope="session")
def ex2():
    return ProblemSpec(
        mu=0.08, k=1.0, x0=-1.0, x1=1.0, a=1.0, T=0.3,
        u_minus_a=parse("-8"), u_plus_a=parse("4"),
        f=parse("y-2*cos(4*pi*x)"), h0_star=0.0, t0=0.2)


# closed forms for the outer branches of the two examples

def phi1_minus(x, y):
    return -(2.0 / np.sqrt(3 * np.pi)) * np.sqrt(
        np.sin(np.pi * (x + y) / 4) - np.sin(np.pi * (x - 2 * y - 6) / 4)
        + 3 * np.sin(np.pi * (x - y) / 4) - 3 * np.sin(np.pi * (x - 2 * y - 2) / 4)
        + 12 * np.pi)


def phi1_plus(x, y):
    return (2.0 / np.sqrt(3 * np.pi)) * np.sqrt(
        np.sin(np.pi * (x + y) / 4) - 3 * np.sin(np.pi * (x - 2 * y + 2) / 4)
        + 3 * np.sin(np.pi * (x - y) / 4) - np.sin(np.pi * (x - 2 * y + 6) / 4)
        + 3 * np.pi)


def phi2_minus(x, y):
    return -np.sqrt(np.sin(4 * np.pi * (x - y - 1)) - np.sin(4 * np.pi * x)
                    + np.pi * y ** 2 + 63 * np.pi) / np.sqrt(np.pi)


def phi2_plus(x, y):
    return np.sqrt(np.sin(4 * np.pi * (x - y + 1)) - np.sin(4 * np.pi * x)
                   + np.pi * y ** 2 + 15 * np.pi) / np.sqrt(np.pi)


CLOSED_FORMS = {"ex1": (phi1_minus, phi1_plus), "ex2": (phi2_minus, phi2_plus)}


@pytest.fixture(scope="session")
def ex1_front(ex1):
    """Front for the full horizon t in [0, 1], outputs include t0."""
    return solve_front(ex1, 200, ex1.grid(100, 100), t_end=ex1.T,
                       extra_times=(ex1.t0,))


@pytest.fixture(scope="session")
def ex2_front(ex2):
    return solve_front(ex2, 200, ex2.grid(100, 100), t_end=ex2.T,
                       extra_times=(ex2.t0,))


@pytest.fixture(scope="session")
def ex1_snapshot_fine(ex1):
    """Forward solution at t0 on a 4x refined grid (pipeline data source)."""
    cfg = SolverConfig(ex1.grid(200, 200), ex1.t0, 0.4, [ex1.t0])
    return forward_solve(ex1, cfg)[0]


@pytest.fixture(scope="session")
def ex2_snapshot_fine(ex2):
    cfg = SolverConfig(ex2.grid(200, 200), ex2.t0, 0.4, [ex2.t0])
    return forward_solve(ex2, cfg)[0]


@pytest.fixture(scope="session")
def ex1_snapshot_101(ex1):
    """Forward solution at t0 on the 101 x 101 production grid."""
    cfg = SolverConfig(ex1.grid(100, 100), ex1.t0, 0.4, [ex1.t0])
    return forward_solve(ex1, cfg)[0]


@pytest.fixture(scope="session")
def ex2_snapshot_101(ex2):
    cfg = SolverConfig(ex2.grid(100, 100), ex2.t0, 0.4, [ex2.t0])
    return forward_solve(ex2, cfg)[0]
