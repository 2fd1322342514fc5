import numpy as np
import pytest

# criterion -> [title, passed, detail lines]
_ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not (rep.when == "call" or rep.failed):
        return
    num, title = marker.kwargs["criterion"], marker.kwargs["title"]
    entry = _ACCEPTANCE.setdefault(num, [title, True, []])
    entry[1] = entry[1] and rep.passed
    if rep.when == "call":
        entry[2].extend(f"{k}: {v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE):
        title, ok, details = _ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num} ({title}): {'PASS' if ok else 'FAIL'}")
        for line in details:
            terminalreporter.write_line(f"    {line}")
