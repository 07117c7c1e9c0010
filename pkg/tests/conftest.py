from __future__ import annotations

import numpy as np
import pytest

_CRITERIA: dict[int, list[tuple[str, str, str]]] = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        return
    detail = dict(item.user_properties).get("detail", "")
    if rep.skipped:
        status = "SKIP"
        if isinstance(rep.longrepr, tuple):
            detail = rep.longrepr[2].removeprefix("Skipped: ")
    else:
        status = "PASS" if rep.passed else "FAIL"
    _CRITERIA.setdefault(mark.args[0], []).append((item.name, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        rows = _CRITERIA[n]
        statuses = {s for _, s, _ in rows}
        overall = "FAIL" if "FAIL" in statuses else ("SKIP" if statuses == {"SKIP"} else "PASS")
        details = "; ".join(d for _, _, d in rows if d)
        terminalreporter.write_line(f"criterion {n}: {overall}  {details}")
