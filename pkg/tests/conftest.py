from __future__ import annotations

import pytest

from iotbotsim import preset, run_scenario

# criterion number -> (title, [(passed, measured)]) over every test carrying it
_ACCEPTANCE: dict[int, tuple[str, list[tuple[bool, str]]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): one numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        number, title = mark.args
        measured = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        entry = _ACCEPTANCE.setdefault(number, (title, []))
        entry[1].append((rep.passed, measured))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, results = _ACCEPTANCE[n]
        status = "PASS" if all(ok for ok, _ in results) else "FAIL"
        measured = "; ".join(m for _, m in results if m)
        line = f"AC{n:<2} {status}  {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def preset_runs():
    """Full-horizon preset runs, computed once per session."""
    cache = {}

    def get(name: str):
        if name not in cache:
            cache[name] = run_scenario(preset(name))
        return cache[name]

    return get
