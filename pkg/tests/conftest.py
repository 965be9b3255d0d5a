import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kgeval.fixtures import stadium_example
from kgeval.rules import ground, random_ecg

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def stadium_graph():
    kg, rules = stadium_example()
    return kg, rules, ground(kg, rules)


def small_ecg(seed: int, n_bets: int, n_constraints: int, max_body: int = 2):
    return random_ecg(np.random.default_rng(seed), n_bets, n_constraints, max_body)


# acceptance results, filled in by tests/test_acceptance.py and printed at the end
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
