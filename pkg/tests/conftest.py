import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).parent))

# (criterion number, title, passed, detail) appended by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] C{num:<2} {title}: {detail}")
