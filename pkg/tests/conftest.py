"""Shared test plumbing: collect acceptance-criterion verdict lines and
print them as a block at the end of the session."""

_CRITERION_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'}: {detail}"
    _CRITERION_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(_CRITERION_LINES)):
            terminalreporter.write_line(line)
