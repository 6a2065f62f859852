import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from conftest import random_mobility
from d2dspread.cdr import MobilityParameters
from d2dspread.dynamics import (CompartmentState, ModelParameters, SeedSpec, apply_latent_fraction, integrate,
                                latent_rates, r0_local, seed_infection, sir_latent_rhs, sir_rhs)
from d2dspread.errors import StructuralError, ValidationError
from d2dspread.mobility import mobility_rhs, steady_state


def random_params(r, n, latent=False):
    m = random_mobility(r, n)
    kw = {}
    if latent:
        kw = {k: r.uniform(0, 0.05, n) for k in ("mu_s", "mu_i", "mu_r", "alpha_s", "alpha_i", "alpha_r", "gamma")}
    return ModelParameters(r.uniform(0, 1, n), r.uniform(0, 0.1, n), r.uniform(0, 20, n), m,
                           r.uniform(50, 5000, n), **kw)


def random_state(r, n, latent=False):
    X = r.uniform(0, 1000, (6, n, n))
    if not latent:
        X[3:] = 0
    return X


def hand_sir_2(X, p):
    """Twelve scalar equations for two communities (homes a=0, b=1)."""
    S, I, R = X[0], X[1], X[2]
    s, nu, z = p.mobility.sigma, p.mobility.nu, p.mobility.zeta
    f = p.beta * p.k_mean / p.N_star_loc
    I0 = I[0, 0] + I[1, 0]
    I1 = I[0, 1] + I[1, 1]
    d = np.zeros_like(X)
    d[0, 0, 0] = -f[0] * S[0, 0] * I0 + z[1, 0] * S[0, 1] - s[0] * S[0, 0]
    d[0, 0, 1] = -f[1] * S[0, 1] * I1 + s[0] * nu[0, 1] * S[0, 0] - z[1, 0] * S[0, 1]
    d[0, 1, 1] = -f[1] * S[1, 1] * I1 + z[0, 1] * S[1, 0] - s[1] * S[1, 1]
    d[0, 1, 0] = -f[0] * S[1, 0] * I0 + s[1] * nu[1, 0] * S[1, 1] - z[0, 1] * S[1, 0]
    d[1, 0, 0] = f[0] * S[0, 0] * I0 - p.delta[0] * I[0, 0] + z[1, 0] * I[0, 1] - s[0] * I[0, 0]
    d[1, 0, 1] = f[1] * S[0, 1] * I1 - p.delta[1] * I[0, 1] + s[0] * nu[0, 1] * I[0, 0] - z[1, 0] * I[0, 1]
    d[1, 1, 1] = f[1] * S[1, 1] * I1 - p.delta[1] * I[1, 1] + z[0, 1] * I[1, 0] - s[1] * I[1, 1]
    d[1, 1, 0] = f[0] * S[1, 0] * I0 - p.delta[0] * I[1, 0] + s[1] * nu[1, 0] * I[1, 1] - z[0, 1] * I[1, 0]
    d[2, 0, 0] = p.delta[0] * I[0, 0] + z[1, 0] * R[0, 1] - s[0] * R[0, 0]
    d[2, 0, 1] = p.delta[1] * I[0, 1] + s[0] * nu[0, 1] * R[0, 0] - z[1, 0] * R[0, 1]
    d[2, 1, 1] = p.delta[1] * I[1, 1] + z[0, 1] * R[1, 0] - s[1] * R[1, 1]
    d[2, 1, 0] = p.delta[0] * I[1, 0] + s[1] * nu[1, 0] * R[1, 1] - z[0, 1] * R[1, 0]
    return d


def hand_latent_2(X, p):
    """Twenty-four scalar equations: the SIR twelve plus sleep/wake/latent terms and six latent planes."""
    d = np.zeros_like(X)
    base = hand_sir_2(np.concatenate([X[:3], np.zeros_like(X[3:])]), p)
    s, nu, z = p.mobility.sigma, p.mobility.nu, p.mobility.zeta
    mu = (p.mu_s, p.mu_i, p.mu_r)
    al = (p.alpha_s, p.alpha_i, p.alpha_r)
    for h in range(2):
        for loc in range(2):
            for k in range(3):
                act, lat = X[k, h, loc], X[k + 3, h, loc]
                d[k, h, loc] = base[k, h, loc] - mu[k][loc] * act + al[k][loc] * lat
                d[k + 3, h, loc] = mu[k][loc] * act - al[k][loc] * lat
            d[2, h, loc] += p.gamma[loc] * X[4, h, loc]
            d[4, h, loc] -= p.gamma[loc] * X[4, h, loc]
    for k in (3, 4, 5):
        E = X[k]
        d[k, 0, 0] += z[1, 0] * E[0, 1] - s[0] * E[0, 0]
        d[k, 0, 1] += s[0] * nu[0, 1] * E[0, 0] - z[1, 0] * E[0, 1]
        d[k, 1, 1] += z[0, 1] * E[1, 0] - s[1] * E[1, 1]
        d[k, 1, 0] += s[1] * nu[1, 0] * E[1, 1] - z[0, 1] * E[1, 0]
    return d


def single(beta, delta, k=1.0, N=1.0):
    m = MobilityParameters(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))
    return ModelParameters(np.array([beta]), np.array([delta]), np.array([k]), m, np.array([N]))


class TestRhs:
    def test_all_susceptible_is_pure_mobility(self, rng):
        p = random_params(rng, 4)
        X = random_state(rng, 4)
        X[1:] = 0
        d = sir_rhs(X, p)
        np.testing.assert_allclose(d[0], mobility_rhs(X[0], p.mobility), atol=1e-12)
        assert not d[1:].any()

    def test_classical_sir(self):
        p = single(0.3, 0.1, k=2.0, N=1000.0)
        X = np.zeros((6, 1, 1))
        X[0, 0, 0], X[1, 0, 0], X[2, 0, 0] = 900, 60, 40
        d = sir_rhs(X, p)
        inf = 0.3 * 2.0 * 900 * 60 / 1000
        np.testing.assert_allclose(d[:3, 0, 0], [-inf, inf - 6.0, 6.0])

    def test_two_community_hand_expansion(self, rng):
        for _ in range(10):
            p = random_params(rng, 2)
            X = random_state(rng, 2)
            np.testing.assert_allclose(sir_rhs(X, p), hand_sir_2(X, p), rtol=0, atol=1e-12 * np.abs(X).max())

    def test_two_community_latent_hand_expansion(self, rng):
        for _ in range(10):
            p = random_params(rng, 2, latent=True)
            X = random_state(rng, 2, latent=True)
            np.testing.assert_allclose(sir_latent_rhs(X, p), hand_latent_2(X, p), rtol=0,
                                       atol=1e-12 * np.abs(X).max())

    def test_latent_degenerates_exactly(self, rng):
        for _ in range(20):
            p = random_params(rng, 5)
            X = random_state(rng, 5)
            assert np.array_equal(sir_latent_rhs(X, p), sir_rhs(X, p))

    def test_sleep_wake_exchange(self):
        m = MobilityParameters(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))
        p = ModelParameters(0, 0, 0, m, np.array([1.0]), mu_s=0.05, alpha_s=0.05)
        X = np.zeros((6, 1, 1))
        X[0, 0, 0] = 1000
        ts = integrate(sir_latent_rhs, CompartmentState(X), dt=1.0, t_end=300, sample_every=300, params=p)
        fin = ts.metadata["final_state"]
        assert fin[0, 0, 0] == pytest.approx(500, rel=1e-6) and fin[3, 0, 0] == pytest.approx(500, rel=1e-6)

    def test_sir_rejects_latent_state(self, rng):
        p = random_params(rng, 3)
        with pytest.raises(ValidationError):
            sir_rhs(random_state(rng, 3, latent=True), p)

    def test_occupants_in_empty_community(self, rng):
        p = random_params(rng, 3)
        p.N_star_loc[1] = 0.0
        with pytest.raises(StructuralError):
            sir_rhs(random_state(rng, 3), p)

    def test_negative_rates_rejected(self, rng):
        m = random_mobility(rng, 2)
        with pytest.raises(ValidationError):
            ModelParameters([0.1, -0.1], 0.1, 1.0, m, [1.0, 1.0])


class TestIntegrate:
    def test_zero_rhs(self, rng):
        X = random_state(rng, 3)
        ts = integrate(lambda X: np.zeros_like(X), CompartmentState(X), dt=1.0, t_end=50)
        assert np.array_equal(ts.metadata["final_state"], X)

    def test_final_size(self):
        r0 = 1.5
        p = single(r0 * 0.1, 0.1)
        X = np.zeros((6, 1, 1))
        X[0, 0, 0], X[1, 0, 0] = 1 - 1e-6, 1e-6
        ts = integrate(sir_rhs, CompartmentState(X), dt=0.5, t_end=3000, sample_every=100, params=p)
        r_inf = ts.metadata["final_state"][2, 0, 0]
        z = brentq(lambda z: 1 - z - math.exp(-r0 * z), 1e-6, 1.0)
        assert r_inf == pytest.approx(z, rel=0.01)

    def test_step_halving(self, rng):
        p = ModelParameters(0.05, 0.01, 2.0, random_mobility(rng, 5), rng.uniform(500, 5000, 5))
        X0 = CompartmentState(random_state(rng, 5))
        a = integrate(sir_rhs, X0, dt=0.25, t_end=20, sample_every=20, params=p).metadata["final_state"]
        b = integrate(sir_rhs, X0, dt=0.125, t_end=20, sample_every=20, params=p).metadata["final_state"]
        assert np.max(np.abs(a - b)) / np.max(np.abs(b)) < 1e-8

    def test_subthreshold_decay(self):
        p = single(0.05, 0.1, k=1.0)
        X = np.zeros((6, 1, 1))
        X[0, 0, 0], X[1, 0, 0] = 0.99, 0.01
        ts = integrate(sir_rhs, CompartmentState(X), dt=1.0, t_end=500, params=p)
        assert np.all(np.diff(ts.global_counts[:, 1]) <= 0)

    def test_clamping_is_reported(self):
        p = single(0.0, 5.0)
        X = np.zeros((6, 1, 1))
        X[0, 0, 0], X[1, 0, 0] = 10, 10
        ts = integrate(sir_rhs, CompartmentState(X), dt=1.0, t_end=5, params=p)
        assert ts.metadata["clamp_events"] > 0
        assert ts.metadata["final_state"].min() >= 0
        assert ts.metadata["final_state"].sum() == pytest.approx(20)

    def test_non_finite_aborts(self):
        with pytest.raises(Exception, match="non-finite"):
            integrate(lambda X: X * np.inf, CompartmentState(np.ones((6, 1, 1))), dt=1.0, t_end=2)

    @pytest.mark.parametrize("kw", [dict(dt=0), dict(dt=2, sample_every=1), dict(t_end=-1), dict(dt=0.7, t_end=1)])
    def test_bad_grid(self, kw):
        args = dict(dt=1.0, t_end=10)
        args.update(kw)
        with pytest.raises(ValidationError):
            integrate(lambda X: X * 0, CompartmentState(np.ones((6, 1, 1))), **args)


class TestSeeding:
    def _ss(self):
        m = MobilityParameters(np.array([[0, 1.0], [1.0, 0]]), np.array([0.01, 0.01]), np.full((2, 2), 0.01))
        return steady_state(np.array([18959.0, 248842.0]), m)

    def test_seed_layout(self):
        ss = self._ss()
        st_ = seed_infection(ss, SeedSpec(0, 100 / 18959))
        assert st_.X[1, 0, 0] == pytest.approx(100 / 18959 * ss.N_star[0, 0])
        np.testing.assert_allclose(st_.X.sum(axis=0), ss.N_star)
        assert not st_.X[2:].any()

    @pytest.mark.parametrize("eps", [0.0, 1.0])
    def test_epsilon_bounds(self, eps):
        with pytest.raises(ValidationError):
            seed_infection(self._ss(), SeedSpec(0, eps))

    def test_origin_range(self):
        with pytest.raises(ValidationError):
            seed_infection(self._ss(), SeedSpec(2, 0.1))

    def test_tiny_seed_warns(self):
        with pytest.warns(UserWarning):
            seed_infection(self._ss(), SeedSpec(0, 1e-6))

    def test_latent_fraction_and_rates(self):
        st_ = apply_latent_fraction(seed_infection(self._ss(), SeedSpec(1, 0.01)), 0.2)
        np.testing.assert_allclose(st_.X[3:].sum(), 0.2 * st_.X.sum())
        r = latent_rates(0.2, 1 / 720, 3)
        # equilibrium switched-off share mu / (mu + alpha)
        np.testing.assert_allclose(r["mu_s"] / (r["mu_s"] + r["alpha_s"]), 0.2)
        assert not any(v.any() for v in latent_rates(0.0, 1 / 720, 3).values())


def test_r0():
    assert r0_local(3, 1, 2) == 1.5
    assert r0_local(3, 0, 2) == 0
    with pytest.raises(ValidationError):
        r0_local(3, 1, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.booleans(), st.integers(0, 2 ** 32 - 1))
def test_rhs_properties(n, latent, seed):
    r = np.random.default_rng(seed)
    p = random_params(r, n, latent=latent)
    X = random_state(r, n, latent=latent)
    X[r.random(X.shape) < 0.3] = 0.0
    rhs = sir_latent_rhs if latent else sir_rhs
    d = rhs(X, p)
    totals = X.sum(axis=(0, 2))
    assert np.all(np.abs(d.sum(axis=(0, 2))) <= 1e-10 * np.maximum(totals, 1.0))
    assert np.all(d[X == 0] >= -1e-12)
    assert d[2].sum() + d[5].sum() >= -1e-9
    if not latent:
        assert not d[3:].any()


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_frozen_mobility_planes(n, seed):
    r = np.random.default_rng(seed)
    m = random_mobility(r, n)
    p = ModelParameters(0, 0, r.uniform(0, 5, n), m, np.ones(n))
    X = random_state(r, n, latent=True)
    d = sir_latent_rhs(X, p)
    for s in range(6):
        np.testing.assert_allclose(d[s], mobility_rhs(X[s], m), atol=1e-9)
