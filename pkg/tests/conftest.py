import pytest

from ccr_mpc.mpc import make_scenario, train_forecaster


@pytest.fixture(scope="session")
def scenario():
    """Fixed-seed benchmark scenario (seed 0, 2000 history steps, 500 test steps)."""
    return make_scenario(0)


@pytest.fixture(scope="session")
def forecaster(scenario):
    return train_forecaster(scenario.history)


ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
