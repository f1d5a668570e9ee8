"""Collects one verdict line per acceptance criterion and prints them at the end."""

import pytest

_verdicts: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None and (report.when == "call" or report.failed):
        number, title = marker.args
        previous, _, detail = _verdicts.get(number, ("PASS", title, ""))
        verdict = "FAIL" if report.failed or previous == "FAIL" else "PASS"
        details = [str(v) for k, v in report.user_properties if k == "detail"]
        _verdicts[number] = (verdict, title, "; ".join(filter(None, [detail, *details])))
    return report


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        verdict, title, detail = _verdicts[number]
        line = f"criterion {number}: {verdict}  {title}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
