import contextlib

import numpy as np
import pytest

ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class _Record:
    detail = ""


@pytest.fixture
def accept():
    """Context manager recording one pass/fail line per acceptance criterion."""

    @contextlib.contextmanager
    def criterion(number, title):
        rec = _Record()
        ok = False
        try:
            yield rec
            ok = True
        finally:
            line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}"
            if rec.detail:
                line += f" ({rec.detail})"
            ACCEPTANCE[number] = line
            print(line)

    return criterion


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
