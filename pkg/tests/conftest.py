import logging
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture(autouse=True)
def _quiet_dynamics():
    # non-converged runs log a warning each; keep the captured output readable
    logging.getLogger("slicegame").setLevel(logging.ERROR)
    yield


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
    _ACCEPTANCE.append((props["criterion"], status, props.get("measured", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, status, measured in sorted(_ACCEPTANCE, key=lambda t: t[0]):
        tr.write_line(f"{status}  {name}" + (f"  [{measured}]" if measured else ""))
