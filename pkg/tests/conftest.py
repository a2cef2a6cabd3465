import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=400)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


# -- acceptance report: one PASS/FAIL line per criterion ------------------------

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when != "call" and not (rep.when == "setup" and rep.outcome != "passed"):
        return
    if hasattr(rep, "wasxfail"):
        status = "xfail" if rep.skipped else "FAIL"
    else:
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "skip"}[rep.outcome]
    notes = [str(v) for k, v in item.user_properties if k == "detail"]
    _CRITERIA.setdefault(mark.args[0], []).append((item.name, status, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        parts = _CRITERIA[n]
        verdict = "PASS" if all(s == "PASS" for _, s, _ in parts) else "FAIL"
        extra = [f"{name}: {s}" for name, s, _ in parts if s != "PASS"]
        details = "; ".join(d for _, _, notes in parts for d in notes)
        line = f"criterion {n:2d}: {verdict}"
        if extra:
            line += " [" + ", ".join(extra) + "]"
        if details:
            line += f"  {details}"
        tr.write_line(line)
