import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("dexgen", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("dexgen")

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def record(number, passed, detail=""):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def hand():
    from dexgen.geometry import default_hand
    return default_hand()


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    path = os.environ.get("DEXGEN_TEST_WORKDIR")
    if path:
        os.makedirs(path, exist_ok=True)
        return path
    return str(tmp_path_factory.mktemp("dexgen"))
