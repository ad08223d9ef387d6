import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nursesched.domain import generate_roster  # noqa: E402

_CRITERIA: dict[int, dict] = {}


@pytest.fixture(scope="session")
def roster40():
    return generate_roster(7, 40)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    if rep.failed:
        entry["ok"] = False
    if rep.when == "call":
        entry["details"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] else "FAIL"
        detail = f"  [{'; '.join(e['details'])}]" if e["details"] else ""
        terminalreporter.write_line(f"criterion {number} {status}: {e['title']}{detail}")
