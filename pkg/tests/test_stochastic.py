import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conftest import random_mobility
from d2dspread import stochastic
from d2dspread.cdr import MobilityParameters
from d2dspread.dynamics import ModelParameters, sir_latent_rhs
from d2dspread.errors import IntegrationError, ValidationError
from d2dspread.mobility import steady_state
from d2dspread.stochastic import (IntegerState, LeapRng, LeapStats, available_backends, channel_drift,
                                  channel_propensities, run_ensemble, simulate, tau_leap_step)
from d2dspread.stochastic import _kernel_py

BACKENDS = available_backends()


def latent_params(r, n, scale=1.0):
    m = random_mobility(r, n)
    kw = {k: r.uniform(0, 0.02, n) for k in ("mu_s", "mu_i", "mu_r", "alpha_s", "alpha_i", "alpha_r", "gamma")}
    return ModelParameters(r.uniform(0, 0.5, n) * scale, r.uniform(0, 0.05, n), r.uniform(0, 5, n), m,
                           r.uniform(100, 1000, n), **kw)


def int_state(r, n, hi=200, latent=True):
    X = r.integers(0, hi, (6, n, n))
    if not latent:
        X[3:] = 0
    return IntegerState(X)


def test_backends_listed():
    assert "python" in BACKENDS


class TestPoisson:
    @pytest.mark.parametrize("lam", [0.01, 0.7, 3.0, 9.9, 10.0, 37.0, 800.0])
    def test_distribution(self, lam):
        draws = np.array([_kernel_py.poisson_sample(lam, k) for k in range(20000)])
        assert abs(draws.mean() - lam) < 5 * np.sqrt(lam / len(draws))
        hi = int(lam + 6 * np.sqrt(lam) + 5)
        obs = np.bincount(np.minimum(draws, hi), minlength=hi + 1)
        p = stats.poisson.pmf(np.arange(hi + 1), lam)
        p[-1] += stats.poisson.sf(hi, lam)
        keep = p * len(draws) >= 5
        exp = np.append(p[keep] * len(draws), p[~keep].sum() * len(draws))
        got = np.append(obs[keep], obs[~keep].sum())
        if exp[-1] < 5:
            exp, got = exp[:-1], got[:-1]
            exp *= got.sum() / exp.sum()
        assert stats.chisquare(got, exp).pvalue > 1e-4

    @pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernel not built")
    def test_backends_draw_identically(self):
        from d2dspread.stochastic import _kernel
        for lam in (0.0, 0.3, 4.0, 12.0, 1e4):
            for key in range(200):
                assert _kernel.poisson_sample(lam, key) == _kernel_py.poisson_sample(lam, key)


class TestChannels:
    def test_all_susceptible(self, rng):
        p = latent_params(rng, 3)
        X = np.zeros((6, 3, 3), dtype=np.int64)
        X[0] = 10
        kinds = {c.kind for c in channel_propensities(IntegerState(X), p)}
        assert kinds <= {"depart", "return", "sleep_S"}

    def test_single_latent_infective(self):
        m = MobilityParameters(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))
        p = ModelParameters(0.1, 0.1, 1.0, m, [1.0], gamma=[0.01])
        X = np.zeros((6, 1, 1), dtype=np.int64)
        X[4, 0, 0] = 1
        ch = channel_propensities(IntegerState(X), p)
        assert len(ch) == 1 and ch[0].kind == "latent_recover" and ch[0].rate == pytest.approx(0.01)

    def test_drift_matches_rhs(self, rng):
        for _ in range(5):
            p = latent_params(rng, 4)
            s = int_state(rng, 4)
            drift = channel_drift(channel_propensities(s, p), 4)
            rhs = sir_latent_rhs(s.X.astype(float), p)
            np.testing.assert_allclose(drift, rhs, rtol=0, atol=1e-9 * np.abs(rhs).max())


class TestLeap:
    @pytest.mark.parametrize("backend", BACKENDS)
    def test_zero_rates(self, backend, rng):
        m = MobilityParameters(np.zeros((3, 3)), np.zeros(3), np.zeros((3, 3)))
        p = ModelParameters(0, 0, 0, m, np.ones(3))
        s = int_state(rng, 3)
        assert np.array_equal(tau_leap_step(s, p, 50.0, 1, backend=backend).X, s.X)

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_underflow(self, backend):
        m = MobilityParameters(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))
        p = ModelParameters(0, 1e7, 0, m, [1.0])
        X = np.zeros((6, 1, 1), dtype=np.int64)
        X[1, 0, 0] = 1
        with pytest.raises(IntegrationError, match="underflow"):
            tau_leap_step(IntegerState(X), p, 1.0, 3, backend=backend)

    def test_halving_keeps_counts_valid(self, rng):
        p = latent_params(rng, 3, scale=50)
        s = int_state(rng, 3, hi=5)
        stats_ = LeapStats()
        out = tau_leap_step(s, p, 20.0, LeapRng(9), stats=stats_)
        assert stats_.halvings > 0 and stats_.min_tau < 20.0
        assert out.X.min() >= 0
        assert np.array_equal(out.home_totals(), s.home_totals())

    def test_invalid_tau(self, rng):
        p = latent_params(rng, 2)
        with pytest.raises(ValidationError):
            tau_leap_step(int_state(rng, 2), p, 0.0, 1)

    @pytest.mark.parametrize("n_dev", [3, 400])
    def test_one_leap_drift(self, n_dev):
        """Mean one-leap change matches the expected drift; covers both sampling regimes."""
        r = np.random.default_rng(5)
        m = random_mobility(r, 3)
        p = ModelParameters(0.2, 0.02, 2.0, m, [500.0, 500.0, 500.0], mu_s=0.01, mu_i=0.01, mu_r=0.01,
                            alpha_s=0.02, alpha_i=0.02, alpha_r=0.02, gamma=0.005)
        X = np.full((6, 3, 3), n_dev, dtype=np.int64)
        s = IntegerState(X)
        tau = 0.5
        drift = channel_drift(channel_propensities(s, p), 3) * tau
        deltas = []
        for seed in range(3000):
            st_ = LeapStats()
            out = tau_leap_step(s, p, tau, seed, stats=st_)
            if st_.halvings == 0:
                deltas.append(out.X - X)
        d = np.array(deltas, dtype=float)
        assert len(d) > 2500
        se = d.std(axis=0) / np.sqrt(len(d))
        z = np.abs(d.mean(axis=0) - drift) / np.where(se > 0, se, 1.0)
        assert z.max() < 5.0


class TestSimulate:
    def _setup(self, r, n=3):
        p = latent_params(r, n)
        return p, int_state(r, n)

    def test_horizon_zero(self, rng):
        p, s = self._setup(rng)
        ts = simulate(s, p, 1.0, 0.0, 10.0, seed=1)
        assert ts.times.tolist() == [0.0]

    @pytest.mark.parametrize("backend", BACKENDS)
    def test_deterministic_given_seed(self, backend, rng):
        p, s = self._setup(rng)
        a = simulate(s, p, 1.0, 100.0, 10.0, seed=42, backend=backend)
        b = simulate(s, p, 1.0, 100.0, 10.0, seed=42, backend=backend)
        c = simulate(s, p, 1.0, 100.0, 10.0, seed=43, backend=backend)
        assert np.array_equal(a.per_community, b.per_community)
        assert not np.array_equal(a.per_community, c.per_community)

    @pytest.mark.skipif("cython" not in BACKENDS, reason="compiled kernel not built")
    def test_backends_bit_identical(self, rng):
        p = latent_params(rng, 4, scale=5)
        s = int_state(rng, 4, hi=50)
        a = simulate(s, p, 2.0, 200.0, 20.0, seed=7, backend="cython")
        b = simulate(s, p, 2.0, 200.0, 20.0, seed=7, backend="python")
        assert np.array_equal(a.metadata["final_state"], b.metadata["final_state"])
        assert a.metadata["halvings"] == b.metadata["halvings"]

    def test_grid_validation(self, rng):
        p, s = self._setup(rng)
        with pytest.raises(ValidationError):
            simulate(s, p, 0.7, 10.0, 10.0)
        with pytest.raises(ValidationError):
            simulate(s, p, 1.0, 5.0, 10.0)
        with pytest.raises(ValidationError):
            simulate(s, p, 1.0, -1.0, 1.0)

    def test_absorbing(self, rng):
        p, s = self._setup(rng)
        X = s.X.copy()
        X[1] = 0
        X[4] = 0
        ts = simulate(IntegerState(X), p, 1.0, 300.0, 10.0, seed=3)
        assert not ts.global_counts[:, 1].any() and not ts.global_counts[:, 4].any()

    def test_pure_mobility_occupancy(self):
        r = np.random.default_rng(8)
        m = random_mobility(r, 3)
        census = np.array([400.0, 300.0, 300.0])
        ss = steady_state(census, m)
        p = ModelParameters(0, 0, 0, m, ss.N_star_loc)
        X = np.zeros((6, 3, 3), dtype=np.int64)
        X[0] = np.diag(census.astype(np.int64))
        ts = simulate(IntegerState(X), p, 1.0, 100_000.0, 1.0, seed=11)
        occ = ts.per_community[2000:, 0, :]  # drop the transient
        batches = occ[: len(occ) // 100 * 100].reshape(100, -1, 3).mean(axis=1)
        se = batches.std(axis=0, ddof=1) / np.sqrt(100)
        assert np.all(np.abs(batches.mean(axis=0) - ss.N_star_loc) < 3 * se + 1e-9)


class TestEnsemble:
    def test_single_replica(self, rng):
        p = latent_params(rng, 2)
        s = int_state(rng, 2)
        e = run_ensemble(s, p, 1.0, 50.0, 10.0, n_replicas=1, base_seed=5)
        assert np.array_equal(e.mean, e.replicas[0].per_community) and not e.std.any()
        assert e.seeds == [5]

    def test_seeds_and_variance_scaling(self):
        r = np.random.default_rng(2)
        m = random_mobility(r, 2)
        p = ModelParameters(0.3, 0.05, 1.0, m, [200.0, 200.0])
        X = np.zeros((6, 2, 2), dtype=np.int64)
        X[0] = [[150, 50], [50, 150]]
        X[1, 0, 0] = 5
        e = run_ensemble(IntegerState(X), p, 1.0, 40.0, 40.0, n_replicas=160, base_seed=100)
        assert e.seeds == list(range(100, 260))
        inf = np.array([rep.global_counts[-1, 1] for rep in e.replicas])
        s2 = inf.var(ddof=1)
        block10 = inf.reshape(16, 10).mean(axis=1).var(ddof=1)
        # ensemble mean of 10 replicas has about s2 / 10 variance, of 160 about s2 / 160
        assert 0.3 < block10 / (s2 / 10) < 3.0
        assert e.n_replicas == 160

    def test_invalid(self, rng):
        p = latent_params(rng, 2)
        with pytest.raises(ValidationError):
            run_ensemble(int_state(rng, 2), p, n_replicas=0)


class TestIntegerState:
    def test_rounding_keeps_row_totals(self, rng):
        from d2dspread.dynamics import CompartmentState
        X = rng.uniform(0, 10, (6, 4, 4))
        s = IntegerState.from_compartments(CompartmentState(X))
        np.testing.assert_array_equal(s.home_totals(), np.rint(X.sum(axis=(0, 2))))

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValidationError):
            IntegerState(np.zeros((3, 2, 2)))
        with pytest.raises(ValidationError):
            IntegerState(-np.ones((6, 1, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2 ** 32 - 1), st.sampled_from([0.5, 1.0, 4.0]))
def test_conservation_property(n, seed, tau):
    r = np.random.default_rng(seed)
    p = latent_params(r, n, scale=3)
    s = int_state(r, n, hi=30)
    ts = simulate(s, p, tau, 20 * tau, tau, seed=seed)
    fin = ts.metadata["final_state"]
    assert fin.min() >= 0
    np.testing.assert_array_equal(fin.sum(axis=(0, 2)), s.home_totals())


def test_module_backend_constant():
    assert stochastic.BACKEND in BACKENDS
