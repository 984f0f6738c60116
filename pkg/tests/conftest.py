import numpy as np
import pytest

from cgclatency.model import preset
from cgclatency.oracles import mc_closed_loop

MC_SAMPLES = 1_000_000
MC_SEED = 20240607


@pytest.fixture(scope="session")
def mc_reports():
    """Monte Carlo runs shared by every test that needs one, keyed by (preset, kappa)."""
    cache = {}

    def get(name, kappa=1.1, tau_list=()):
        key = (name, kappa, tuple(tau_list))
        if key not in cache:
            cache[key] = mc_closed_loop(preset(name), kappa, MC_SAMPLES, MC_SEED, tau_list=tau_list)
        return cache[key]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""

    def add(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
