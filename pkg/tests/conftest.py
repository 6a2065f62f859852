import numpy as np
import pytest

from d2dspread.cdr import MobilityParameters
from d2dspread.synth import SynthConfig, generate_cdr, generate_world


def random_mobility(rng, n, density=1.0):
    """Random mobility with a return path for every flow."""
    nu = rng.random((n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(nu, 0.0)
    for i in range(n):
        if nu[i].sum() == 0 and n > 1:
            nu[i, (i + 1) % n] = 1.0
    nu /= np.where(nu.sum(axis=1, keepdims=True) > 0, nu.sum(axis=1, keepdims=True), 1.0)
    sigma = rng.uniform(1e-3, 1e-1, n)
    zeta = rng.uniform(1e-3, 1e-1, (n, n))
    np.fill_diagonal(zeta, 0.0)
    return MobilityParameters(nu, sigma, zeta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synth():
    cfg = SynthConfig(community_count=20, total_users=2000, total_population=200_000,
                      duration_minutes=30 * 1440, seed=7)
    world = generate_world(cfg)
    corpus, truth = generate_cdr(world, cfg)
    return cfg, world, corpus, truth


_acceptance = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line per acceptance criterion; returns the verdict."""
    def emit(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        print(line)
        _acceptance[n] = line
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _acceptance:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_acceptance):
            terminalreporter.write_line(_acceptance[n])
