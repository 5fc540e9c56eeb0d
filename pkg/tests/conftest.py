import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lottery_queue import MarketParams  # noqa: E402

# filled by test_acceptance.py; printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def single_group(lam=1.0, mu=1.0, R=10.0, r=0.1, nu=0.1, td=0.1, **kw) -> MarketParams:
    return MarketParams((lam,), mu, (R,), r, nu, td, **kw)


@pytest.fixture
def tiny():
    return single_group()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
