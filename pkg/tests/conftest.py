import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from srgeo.dsl import builtin
from srgeo.frame_core import build_privileged_frame
from srgeo.nilpotent import nilpotent_frame_at
from srgeo.poly import Polynomial, PolyVectorField

settings.register_profile("srgeo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("srgeo")


def heisenberg_fields():
    return builtin("heisenberg1").horizontal


def rotate(fields, theta):
    c, s = math.cos(theta), math.sin(theta)
    X1, X2 = fields
    return (X1 * c + X2 * s, X1 * (-s) + X2 * c)


def heis_gauge(y, z):
    """Exact CC distance from 0 to (x1, x2, z) in the Heisenberg group, |(x1, x2)| = y."""
    from scipy.optimize import brentq

    y, z = abs(y), abs(z)
    if y < 1e-14:
        return math.sqrt(4 * math.pi * z)
    if z < 1e-15:
        return y
    f = lambda th: (th - math.sin(th)) / (2 * th ** 2) / (math.sin(th / 2) / (th / 2)) ** 2 - z / y ** 2
    th = brentq(f, 1e-9, 2 * math.pi - 1e-12)
    return y / (math.sin(th / 2) / (th / 2))


@pytest.fixture(scope="session")
def heis():
    return heisenberg_fields()


@pytest.fixture(scope="session")
def heis_frame(heis):
    return build_privileged_frame(heis)


@pytest.fixture(scope="session")
def heis_nf(heis_frame):
    return nilpotent_frame_at(heis_frame, (0.0, 0.0, 0.0))


@pytest.fixture(scope="session")
def engel_frame():
    return build_privileged_frame(builtin("engel").horizontal)


@pytest.fixture(scope="session")
def perturbed_frame():
    return build_privileged_frame(builtin("perturbed_heisenberg").horizontal)


def var(n, k):
    return Polynomial.variable(n, k)


def const(n, c):
    return Polynomial.constant(n, c)


def field(*coeffs):
    return PolyVectorField(coeffs)


ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria (slow)")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
