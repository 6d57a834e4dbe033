"""Shared pytest hooks.

Collects the one-line acceptance verdicts emitted by tests/test_acceptance.py
and repeats them in the terminal summary, where they are visible even under
pytest's default output capture.
"""

ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.write_line(line)
