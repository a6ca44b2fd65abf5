import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not oracles.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name in oracles.CRITERIA.items():
        terminalreporter.line(oracles.RESULTS.get(number, f"[FAIL] {number}. {name}: did not run to completion"))
