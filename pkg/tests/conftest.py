import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from itecp.synthetic import SimConfig, generate

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_panel():
    """120 individuals x 8 points x 4 covariates; shared read-only across tests."""
    return generate(SimConfig(n_individuals=120, n_points=8, n_covariates=4, seed=11))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request, capsys):
    """Print one PASS/FAIL line for an acceptance criterion and keep it for the session summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def emit(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        with capsys.disabled():
            print("\n" + line, flush=True)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)
