"""Shared pytest hooks.

The acceptance suite appends one line per criterion to ACCEPTANCE_LINES;
printing them in the terminal summary keeps them visible under default
output capture.
"""

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
