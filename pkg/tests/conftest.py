import pytest



def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = marker.args
        store = item.config.stash.setdefault(_KEY, {})
        store[number] = (title, report.passed, dict(report.user_properties))


_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_KEY, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(store):
        title, ok, props = store[number]
        detail = "; ".join(f"{k}={v}" for k, v in props.items())
        line = f"{'PASS' if ok else 'FAIL'}  {number:>2}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
