"""Collects acceptance-check verdicts and prints them after the run.

Pytest captures file descriptors while tests execute, so the one-line
pass/fail verdicts would vanish on success; routing them through the
terminal reporter keeps them visible in any capture mode.
"""

acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not acceptance_lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in acceptance_lines:
        terminalreporter.write_line(line)
