import sys

import numpy as np
import pytest

from anytime_ldpc.protograph import ProtographSpec, build_code


@pytest.fixture(scope="session")
def paper_spec():
    return ProtographSpec.paper_code()


@pytest.fixture(scope="session")
def small_code(paper_spec):
    return build_code(paper_spec, 4, 8, 3)


@pytest.fixture(scope="session")
def code_r12(paper_spec):
    return build_code(paper_spec, 12, 30, 7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
