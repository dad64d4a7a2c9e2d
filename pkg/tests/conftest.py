import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lefschetz_lattice.clifford_dirac import assemble_dirac, build_clifford
from lefschetz_lattice.geometry import build_box_lattice, build_torus_lattice

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=100, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(20260417)


@pytest.fixture(scope="session")
def torus_spinor_1d():
    """Spinor Dirac operator on a circle of circumference 4 with 64 sites."""
    model = build_torus_lattice(1, 4.0, 1 / 16)
    return assemble_dirac(model, build_clifford(1, "spinor"), "central")


@pytest.fixture(scope="session")
def box_staggered_1d():
    model = build_box_lattice(1, 4.0, 1 / 16)
    return assemble_dirac(model, build_clifford(1, "staggered"), "staggered")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
