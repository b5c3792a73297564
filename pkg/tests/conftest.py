import re

import pytest

_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line for the summary; returns ``ok``."""

    def report(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {str(number):>3}: {detail}"
        request.config.stash[_KEY].append(line)
        print(line)
        return ok

    return report


def _order(line):
    num, sub = re.search(r"criterion\s+(\d+)(\w*)", line).groups()
    return int(num), sub


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_order):
            terminalreporter.write_line(line)
