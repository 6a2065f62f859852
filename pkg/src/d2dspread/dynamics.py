"""Deterministic message-spreading dynamics on top of the mobility model.

State arrays have shape ``(6, C, C)``: ``X[s, i, j]`` counts devices in state
``s`` (S, I, R, E_S, E_I, E_R) whose home is ``i`` and who are located in
``j``.  Every local rate is indexed by the location ``j``; mobility rates by
the home ``i``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .cdr import MobilityParameters
from .errors import IntegrationError, StructuralError, ValidationError
from .mobility import SteadyState, effective_sigma
from .timeseries import EI, ER, ES, I, R, S, TimeSeries

log = logging.getLogger(__name__)


@dataclass
class CompartmentState:
    X: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 3 or self.X.shape[0] != 6 or self.X.shape[1] != self.X.shape[2]:
            raise ValidationError("compartment state must have shape (6, C, C)")

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def home_totals(self) -> np.ndarray:
        return self.X.sum(axis=(0, 2))

    def by_location(self) -> np.ndarray:
        """(6, C) counts per state and location."""
        return self.X.sum(axis=1)


@dataclass
class ModelParameters:
    beta: np.ndarray
    delta: np.ndarray
    k_mean: np.ndarray
    mobility: MobilityParameters
    N_star_loc: np.ndarray
    mu_s: np.ndarray = None
    mu_i: np.ndarray = None
    mu_r: np.ndarray = None
    alpha_s: np.ndarray = None
    alpha_i: np.ndarray = None
    alpha_r: np.ndarray = None
    gamma: np.ndarray = None

    def __post_init__(self):
        n = self.mobility.n
        for name in ("beta", "delta", "k_mean", "N_star_loc", "mu_s", "mu_i", "mu_r",
                     "alpha_s", "alpha_i", "alpha_r", "gamma"):
            v = getattr(self, name)
            v = np.zeros(n) if v is None else np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
            if np.any(v < 0) or not np.all(np.isfinite(v)):
                raise ValidationError(f"{name} must be finite and non-negative")
            setattr(self, name, v)

    @property
    def n(self) -> int:
        return self.mobility.n

    @property
    def latent(self) -> bool:
        return any(np.any(getattr(self, f) > 0) for f in
                   ("mu_s", "mu_i", "mu_r", "alpha_s", "alpha_i", "alpha_r", "gamma"))

    def force_coefficient(self) -> np.ndarray:
        """``beta_j <k_j> / N*_j`` per location (0 where nobody lives)."""
        num = self.beta * self.k_mean
        return np.divide(num, self.N_star_loc, out=np.zeros(self.n), where=self.N_star_loc > 0)

    def with_latent(self, **rates) -> "ModelParameters":
        return replace(self, **rates)


@dataclass
class SeedSpec:
    origin_community: int
    epsilon_fraction: float


def _as_array(state):
    return state.X if isinstance(state, CompartmentState) else np.asarray(state, dtype=float)


def _check_occupancy(X, p: ModelParameters):
    empty = p.N_star_loc <= 0
    if empty.any() and np.any(X[:, :, empty] > 0):
        j = int(np.argwhere(empty & (X.sum(axis=(0, 1)) > 0))[0][0])
        raise StructuralError(f"community {j} has occupants but zero steady-state occupancy", pair=(j, j))


def _mobility_plane(P, sigma, nu, zt):
    """Eq.-5 style flow for one state plane; ``zt[i, j] = zeta[j, i]`` with zero diagonal."""
    home = np.diagonal(P)
    back = zt * P
    d = (sigma * home)[:, None] * nu - back
    idx = np.arange(len(sigma))
    d[idx, idx] = back.sum(axis=1) - sigma * home
    return d


def _mobility_terms(X, m: MobilityParameters, planes):
    zt = m.zeta.T.copy()
    np.fill_diagonal(zt, 0.0)
    nu = m.nu.copy()
    np.fill_diagonal(nu, 0.0)
    sigma = effective_sigma(m)
    return [_mobility_plane(X[s], sigma, nu, zt) for s in planes]


def _infection(X, p: ModelParameters):
    active_inf = X[I].sum(axis=0)  # I_qj summed over homes q
    return X[S] * (p.force_coefficient() * active_inf)[None, :]


def sir_rhs(state, p: ModelParameters) -> np.ndarray:
    """Right-hand side of the S/I/R system with mobility; latent planes get zero derivative."""
    X = _as_array(state)
    _check_occupancy(X, p)
    if np.any(X[3:] != 0):
        raise ValidationError("sir_rhs requires empty latent planes; use sir_latent_rhs")
    mS, mI, mR = _mobility_terms(X, p.mobility, (S, I, R))
    inf = _infection(X, p)
    rec = p.delta[None, :] * X[I]
    d = np.zeros_like(X)
    d[S] = -inf + mS
    d[I] = inf + mI - rec
    d[R] = rec + mR
    return d


def sir_latent_rhs(state, p: ModelParameters) -> np.ndarray:
    """Right-hand side of the six-state system (S, I, R and their switched-off twins).

    Only active S and I take part in transmission.  Switched-off devices keep
    moving like everyone else.
    """
    X = _as_array(state)
    _check_occupancy(X, p)
    mS, mI, mR, mES, mEI, mER = _mobility_terms(X, p.mobility, range(6))
    inf = _infection(X, p)
    rec = p.delta[None, :] * X[I]
    sleep_s = p.mu_s[None, :] * X[S]
    sleep_i = p.mu_i[None, :] * X[I]
    sleep_r = p.mu_r[None, :] * X[R]
    wake_s = p.alpha_s[None, :] * X[ES]
    wake_i = p.alpha_i[None, :] * X[EI]
    wake_r = p.alpha_r[None, :] * X[ER]
    lat_rec = p.gamma[None, :] * X[EI]
    d = np.empty_like(X)
    # keep the S/I/R operation order of sir_rhs so the two agree bit-for-bit
    d[S] = (-inf + mS) - sleep_s + wake_s
    d[I] = ((inf + mI) - rec) - sleep_i + wake_i
    d[R] = (rec + mR) - sleep_r + wake_r + lat_rec
    d[ES] = sleep_s - wake_s + mES
    d[EI] = sleep_i - wake_i + mEI - lat_rec
    d[ER] = sleep_r - wake_r + mER
    return d


def seed_infection(ss: SteadyState, spec: SeedSpec, latent_mode: bool = False) -> CompartmentState:
    """Steady-state susceptible population with a fraction of the origin's at-home devices infected.

    ``latent_mode`` only documents that the latent planes start empty; use
    :func:`apply_latent_fraction` to start with switched-off devices.
    """
    n = ss.N_star.shape[0]
    o = spec.origin_community
    if not 0 <= o < n:
        raise ValidationError(f"origin community {o} outside [0, {n})")
    eps = spec.epsilon_fraction
    if not 0 < eps < 1:
        raise ValidationError(f"epsilon_fraction must lie in (0, 1), got {eps}")
    X = np.zeros((6, n, n))
    X[S] = ss.N_star
    seeded = eps * ss.N_star[o, o]
    if seeded < 1:
        warnings.warn(f"only {seeded:.3g} devices seeded in community {o}", stacklevel=2)
    X[S, o, o] -= seeded
    X[I, o, o] = seeded
    return CompartmentState(X, 0.0)


def apply_latent_fraction(state: CompartmentState, fraction: float) -> CompartmentState:
    """Move ``fraction`` of every active compartment to its switched-off twin."""
    if not 0 <= fraction < 1:
        raise ValidationError("latent fraction must lie in [0, 1)")
    X = state.X.copy()
    moved = fraction * X[:3]
    X[:3] -= moved
    X[3:] += moved
    return CompartmentState(X, state.time)


def latent_rates(fraction: float, wake_rate: float, n: int, gamma=None) -> dict:
    """Sleep/wake rates whose equilibrium switched-off share is ``fraction``."""
    if not 0 <= fraction < 1:
        raise ValidationError("latent fraction must lie in [0, 1)")
    if fraction == 0:
        z = np.zeros(n)
        return dict(mu_s=z, mu_i=z, mu_r=z, alpha_s=z, alpha_i=z, alpha_r=z,
                    gamma=np.zeros(n) if gamma is None else gamma)
    alpha = np.full(n, float(wake_rate))
    mu = alpha * fraction / (1.0 - fraction)
    return dict(mu_s=mu, mu_i=mu.copy(), mu_r=mu.copy(), alpha_s=alpha, alpha_i=alpha.copy(),
                alpha_r=alpha.copy(), gamma=np.zeros(n) if gamma is None else np.broadcast_to(gamma, (n,)).copy())


def r0_local(k_mean, beta, delta):
    """Local reproduction number ``<k> beta / delta``."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta <= 0):
        raise ValidationError("delta must be positive for the threshold to exist")
    out = np.asarray(k_mean, dtype=float) * np.asarray(beta, dtype=float) / delta
    return float(out) if out.ndim == 0 else out


@dataclass
class IntegrationReport:
    steps: int = 0
    clamp_events: int = 0
    clamp_mass: float = 0.0
    extra: dict = field(default_factory=dict)


def _clamp(X, totals, report):
    neg = X < 0
    if not neg.any():
        return X
    report.clamp_events += 1
    report.clamp_mass += float(-X[neg].sum())
    X = np.where(neg, 0.0, X)
    rows = np.unique(np.nonzero(neg)[1])
    cur = X[:, rows, :].sum(axis=(0, 2))
    scale = np.divide(totals[rows], cur, out=np.ones_like(cur), where=cur > 0)
    X[:, rows, :] *= scale[None, :, None]
    return X


def _grid_steps(span, dt, what):
    k = span / dt
    n = int(round(k))
    if abs(k - n) > 1e-9 * max(1.0, k):
        raise ValidationError(f"{what} ({span}) must be a multiple of dt ({dt})")
    return n


def integrate(rhs, initial: CompartmentState, dt: float = 1.0, t_end: float = 0.0,
              sample_every: float | None = None, params: ModelParameters | None = None) -> TimeSeries:
    """Classical fixed-step RK4.

    ``rhs`` is either a callable ``rhs(X) -> dX`` or one of :func:`sir_rhs` /
    :func:`sir_latent_rhs` together with ``params``.  Negative undershoots are
    clamped to zero and the affected home rows rescaled to their totals; the
    number and mass of clamps go to ``metadata['clamp_events'/'clamp_mass']``.
    """
    if not dt > 0:
        raise ValidationError("dt must be positive")
    sample_every = dt if sample_every is None else sample_every
    if dt > sample_every:
        raise ValidationError("dt must not exceed sample_every")
    if t_end < 0:
        raise ValidationError("t_end must be non-negative")
    f = rhs if params is None else (lambda X: rhs(X, params))
    n_steps = _grid_steps(t_end, dt, "t_end")
    stride = _grid_steps(sample_every, dt, "sample_every")

    X = initial.X.copy()
    totals = X.sum(axis=(0, 2))
    report = IntegrationReport()
    times = [initial.time]
    samples = [X.sum(axis=1)]
    h = float(dt)
    for step in range(1, n_steps + 1):
        k1 = f(X)
        k2 = f(X + 0.5 * h * k1)
        k3 = f(X + 0.5 * h * k2)
        k4 = f(X + h * k3)
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(X)):
            raise IntegrationError(f"non-finite state at t = {initial.time + step * h:g} min; try a smaller dt")
        X = _clamp(X, totals, report)
        if step % stride == 0:
            times.append(initial.time + step * h)
            samples.append(X.sum(axis=1))
    report.steps = n_steps
    if report.clamp_events:
        log.warning("clamped negative undershoots %d times (mass %.3g)", report.clamp_events, report.clamp_mass)
    meta = {"engine": "deterministic", "dt": h, "clamp_events": report.clamp_events,
            "clamp_mass": report.clamp_mass, "final_state": X}
    return TimeSeries(np.array(times), np.array(samples), meta)

