import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qhrx.cli import load_scenario  # noqa: E402


@pytest.fixture(scope="session")
def scenario():
    return load_scenario()


@pytest.fixture(scope="session")
def device(scenario):
    """Default hybrid and detector as stored in the packaged scenario."""
    return scenario.pic, scenario.detector


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary, then assert.

    The wall time since fixture setup is checked against ``budget_s``.
    """
    start = time.perf_counter()

    def record(number: int, passed: bool, detail: str, budget_s: float) -> None:
        elapsed = time.perf_counter() - start
        passed = passed and elapsed <= budget_s
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail} [{elapsed:.1f} s of {budget_s:g} s]"
        _CRITERIA[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
