import harness


def pytest_terminal_summary(terminalreporter):
    if harness.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in harness.ACCEPTANCE:
            terminalreporter.write_line(line)
