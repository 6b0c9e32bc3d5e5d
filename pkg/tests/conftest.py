import os

import numpy as np
import pytest

from mlvms.kernels import BACKEND

# criterion number -> (title, ok, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def record():
    def _record(number, title, ok, detail):
        ACCEPTANCE[number] = (title, bool(ok), detail)
        print(f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title} | {detail}")

    return _record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_report_header(config):
    forced = os.environ.get("MLVMS_PURE_PYTHON", "")
    return f"mlvms kernel backend: {BACKEND}" + (" (forced)" if forced else "")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{n}] {title}: {detail}")
