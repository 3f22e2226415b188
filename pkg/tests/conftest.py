import time

import pytest

from secagglab import tables

_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in sorted(_VERDICTS, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_ledgers():
    """All four protocols, 100 clients, 100 rounds, no dropout, 1-element model."""
    start = time.perf_counter()
    ledgers = tables.nd_ledgers()
    return ledgers, time.perf_counter() - start
