from __future__ import annotations

import numpy as np
import pytest

from hyperqm.bench import Pipeline, Scenario
from hyperqm.fe_core import Structure, VonKarmanBeam, strip_mesh

ALUMINIUM = dict(E=70e9, nu=0.33, rho=2700.0, thickness=0.8e-3, width=0.02)


def make_structure(n_elements=10, left="pinned", right="pinned", length=0.04, **kw) -> Structure:
    params = {**ALUMINIUM, **kw}
    return Structure(strip_mesh(length, n_elements, left, right), VonKarmanBeam(**params))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk():
    """The resonant desk-plate scenario, built once per test session."""
    return Pipeline(Scenario())


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
