from contextlib import contextmanager

import pytest

CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[CRITERIA] = []


@pytest.fixture
def criterion(request):
    """Record a PASS/FAIL line for an acceptance criterion.

    The body fills ``info["detail"]`` with the measured numbers so the
    summary line says what was observed, not only whether it held.
    """
    lines = request.config.stash[CRITERIA]

    @contextmanager
    def record(number: int, title: str):
        info = {"detail": ""}
        try:
            yield info
        except BaseException:
            lines.append((number, title, "FAIL", info["detail"]))
            raise
        lines.append((number, title, "PASS", info["detail"]))

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash[CRITERIA])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, verdict, detail in lines:
        terminalreporter.write_line(f"criterion {number:2d} {verdict}: {title}" + (f" ({detail})" if detail else ""))
