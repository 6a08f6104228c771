import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def report_criterion(request):
    """Record one PASS/FAIL line per acceptance criterion (echoed in the summary)."""
    def report(number, checks, seconds):
        ok = all(passed for _, _, passed in checks)
        detail = "; ".join(f"{name}={value}{'' if passed else ' (FAIL)'}"
                           for name, value, passed in checks)
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} [{seconds:.1f} s] {detail}"
        request.config.stash[_LINES].append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
