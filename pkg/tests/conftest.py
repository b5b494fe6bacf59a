"""Shared pytest plumbing: the acceptance-criteria summary block.

Acceptance tests call record_criterion() with their verdict; the terminal
summary then prints one line per criterion regardless of output capture,
so a full-suite run always ends with an explicit pass/fail scoreboard.
"""

_criteria = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    _criteria.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _criteria:
        verdict = "PASS" if ok else "FAIL"
        suffix = " ({})".format(detail) if detail else ""
        terminalreporter.write_line("{}: {}{}".format(name, verdict, suffix))
