import numpy as np
import pytest


@pytest.fixture
def rng():
    # test-side randomness for generating inputs, independent of the package streams
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[key])
