import pytest

CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record ``(ok, detail)`` for an acceptance criterion and print one line."""
    results = request.config.stash.setdefault(CRITERIA, {})

    def record(k: int, ok: bool, detail: str):
        line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
        results[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(CRITERIA, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
