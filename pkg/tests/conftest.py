import sys
import warnings
from collections import OrderedDict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oedgrowth.solver import NonConvergenceWarning  # noqa: E402
from oedgrowth.studies import CaseStudyConfig, run_all  # noqa: E402

# criterion id -> list of (check name, passed, detail)
_ACCEPTANCE = OrderedDict()


@pytest.fixture(scope="session")
def study_config():
    return CaseStudyConfig()


@pytest.fixture(scope="session")
def report(study_config):
    """Every case-study section plus the convention matrix, computed once per session."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergenceWarning)
        return run_all(study_config, conventions=True)


@pytest.fixture
def acceptance():
    """``record(criterion, check, passed, detail)``; prints the line and keeps it for the summary."""

    def record(criterion, check, passed, detail=""):
        passed = bool(passed)
        _ACCEPTANCE.setdefault(criterion, []).append((check, passed, detail))
        print(f"criterion {criterion} [{check}] {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        checks = _ACCEPTANCE[crit]
        ok = all(p for _, p, _ in checks)
        tr.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} ({sum(p for _, p, _ in checks)}/{len(checks)} checks)")
        for name, passed, detail in checks:
            tr.write_line(f"    {'pass' if passed else 'FAIL'}  {name}: {detail}")
