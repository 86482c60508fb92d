import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "fgp", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("fgp")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, k, ridge=None):
    G = rng.standard_normal((k, k))
    return G @ G.T + (k if ridge is None else ridge) * np.eye(k)


_criteria = []


@pytest.fixture
def criterion():
    """Record a pass/fail line for the acceptance summary, then assert."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _criteria.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
