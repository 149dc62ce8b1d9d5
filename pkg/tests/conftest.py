import pytest

_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    number, title = mark.args
    passed = rep.passed and not hasattr(rep, "wasxfail")
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    if hasattr(rep, "wasxfail"):
        detail = (detail + "; " if detail else "") + "known conflict, see decisions ledger"
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}"
    item.config.stash[_CRITERIA][number] = line + (f"  [{detail}]" if detail else "")


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[_CRITERIA]
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
