"""Collects acceptance verdicts and prints one line per criterion at the end."""

import contextlib

import pytest

VERDICTS = {}


@contextlib.contextmanager
def criterion(number, title):
    """Record PASS when the block finishes, FAIL (and re-raise) otherwise."""
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        VERDICTS[number] = ("FAIL", title, detail.get("info", "") or f"{type(exc).__name__}: {exc}")
        raise
    VERDICTS[number] = ("PASS", title, detail.get("info", ""))


@pytest.fixture
def verdict():
    return criterion


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        status, title, info = VERDICTS[number]
        line = f"criterion {number} {status}: {title}"
        if info:
            line += f" ({info})"
        terminalreporter.write_line(line)
