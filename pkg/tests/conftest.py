import re

import numpy as np
import pytest

from tabtext.datasets import BUILTINS, build_dataset

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[n] = (report.nodeid.split("::")[-1], report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        name, outcome = _ACCEPTANCE[n]
        status = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{status} criterion {n:2d}  {name}")


def table_dataset(name, header, rows, label):
    """Dataset from literal table rows, typed with the builtin hints for ``name``."""
    recs = [[str(v) for v in r] for r in rows]
    return build_dataset(name, header, recs, label, schema_hint=BUILTINS[name].hints)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
