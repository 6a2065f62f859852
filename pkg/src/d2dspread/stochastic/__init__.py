"""Tau-leap simulation of the full event system with integer device counts.

The hot loop lives in a compiled kernel (``_kernel``) when it has been built;
otherwise the pure-Python reference ``_kernel_py`` is used.  Both give
identical results for identical inputs.  Set ``D2DSPREAD_BACKEND=python`` to
force the fallback.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..dynamics import CompartmentState, ModelParameters
from ..errors import IntegrationError, StructuralError, ValidationError
from ..timeseries import TimeSeries
from . import _kernel_py

log = logging.getLogger(__name__)

try:
    from . import _kernel as _kernel_c
except ImportError:  # not compiled
    _kernel_c = None

_KERNELS = {"python": _kernel_py}
if _kernel_c is not None:
    _KERNELS["cython"] = _kernel_c

BACKEND = os.environ.get("D2DSPREAD_BACKEND") or ("cython" if _kernel_c is not None else "python")
if BACKEND not in _KERNELS:
    log.warning("backend %r unavailable, using pure Python", BACKEND)
    BACKEND = "python"

TAU_MIN = 1e-3
SEED_MASK = (1 << 64) - 1

CHANNEL_KINDS = ("infect", "recover", "depart", "return", "sleep_S", "sleep_I", "sleep_R",
                 "wake_S", "wake_I", "wake_R", "latent_recover")


def available_backends() -> list:
    return sorted(_KERNELS)


def _get_kernel(backend):
    name = BACKEND if backend is None else backend
    try:
        return _KERNELS[name]
    except KeyError:
        raise ValidationError(f"unknown or unavailable backend {name!r}") from None


@dataclass
class EventChannel:
    kind: str
    home: int
    location: int
    rate: float
    state: int
    destination: int | None = None


@dataclass
class IntegerState:
    X: np.ndarray
    rng_seed: int = 0
    time: float = 0.0

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.int64)
        if self.X.ndim != 3 or self.X.shape[0] != 6 or self.X.shape[1] != self.X.shape[2]:
            raise ValidationError("integer state must have shape (6, C, C)")
        if np.any(self.X < 0):
            raise ValidationError("integer state counts must be non-negative")

    @property
    def n(self) -> int:
        return self.X.shape[1]

    def home_totals(self) -> np.ndarray:
        return self.X.sum(axis=(0, 2))

    @classmethod
    def from_compartments(cls, state: CompartmentState, rng_seed: int = 0) -> "IntegerState":
        """Round every compartment; each home row keeps ``round(N_i)`` devices.

        The rounding surplus or deficit of a row is absorbed by its largest compartment.
        """
        X = np.rint(state.X).astype(np.int64)
        target = np.rint(state.X.sum(axis=(0, 2))).astype(np.int64)
        diff = target - X.sum(axis=(0, 2))
        for i in np.nonzero(diff)[0]:
            row = X[:, i, :]
            s, j = np.unravel_index(np.argmax(row), row.shape)
            X[s, i, j] += diff[i]
            if X[s, i, j] < 0:
                raise ValidationError(f"cannot integerise home row {i}")
        return cls(X, rng_seed, state.time)

    def to_compartments(self) -> CompartmentState:
        return CompartmentState(self.X.astype(float), self.time)


@dataclass
class EnsembleResult:
    replicas: list
    mean: np.ndarray
    std: np.ndarray
    n_replicas: int
    seeds: list
    times: np.ndarray

    def mean_series(self) -> TimeSeries:
        return TimeSeries(self.times, self.mean, {"engine": "stochastic-ensemble-mean",
                                                  "replicas": self.n_replicas, "seeds": self.seeds})

    def global_mean(self) -> np.ndarray:
        return np.mean([r.global_counts for r in self.replicas], axis=0)


@dataclass
class _KernelParams:
    sigma: np.ndarray
    nu_ptr: np.ndarray
    nu_idx: np.ndarray
    nu_val: np.ndarray
    leave: np.ndarray  # leave[i, j] = zeta[j, i]; diagonal = departure rate from home
    force: np.ndarray
    delta: np.ndarray
    mu: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray

    @classmethod
    def build(cls, p: ModelParameters) -> "_KernelParams":
        m = p.mobility
        n = m.n
        ptr = [0]
        idx, val = [], []
        for i in range(n):
            cols = [j for j in np.nonzero(m.nu[i])[0] if j != i]
            idx.extend(cols)
            val.extend(m.nu[i, cols].tolist())
            ptr.append(len(idx))
        leave = np.ascontiguousarray(m.zeta.T, dtype=float)
        for i in range(n):
            acc = 0.0  # summed in channel order, as the kernels pick channels
            for v in val[ptr[i]:ptr[i + 1]]:
                acc += float(m.sigma[i]) * v
            leave[i, i] = acc
        return cls(
            sigma=np.ascontiguousarray(m.sigma, dtype=float),
            nu_ptr=np.asarray(ptr, dtype=np.int64),
            nu_idx=np.asarray(idx, dtype=np.int64),
            nu_val=np.asarray(val, dtype=float),
            leave=leave,
            force=np.ascontiguousarray(p.force_coefficient()),
            delta=np.ascontiguousarray(p.delta),
            mu=np.ascontiguousarray(np.vstack([p.mu_s, p.mu_i, p.mu_r])),
            alpha=np.ascontiguousarray(np.vstack([p.alpha_s, p.alpha_i, p.alpha_r])),
            gamma=np.ascontiguousarray(p.gamma),
        )

    def args(self):
        return (self.sigma, self.nu_ptr, self.nu_idx, self.nu_val, self.leave, self.force,
                self.delta, self.mu, self.alpha, self.gamma)


class LeapRng:
    """Counter-based randomness: every leap attempt gets a fresh attempt number under one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & SEED_MASK
        self.attempt = 0

    def next_attempt(self) -> int:
        self.attempt += 1
        return self.attempt


@dataclass
class LeapStats:
    attempts: int = 0
    halvings: int = 0
    events: int = 0
    min_tau: float = float("inf")
    extra: dict = field(default_factory=dict)


def _check_structure(X, p: ModelParameters):
    empty = p.N_star_loc <= 0
    if empty.any() and np.any(X[:, :, empty] > 0):
        raise StructuralError("devices located in a community with zero steady-state occupancy")


def _advance(X, kp, tau, rng, kernel, stats, tau_min):
    """Leap ``X`` forward by ``tau`` in place, halving on rejection."""
    if tau < tau_min:
        raise IntegrationError(
            f"tau underflow: leap of {tau:g} min still drives a compartment negative "
            f"(floor {tau_min:g} min); reduce rates or the base tau")
    stats.attempts += 1
    status, n_events = kernel.leap(X, tau, rng.seed, rng.next_attempt(), *kp.args())
    if status == 0:
        stats.events += n_events
        stats.min_tau = min(stats.min_tau, tau)
        return
    stats.halvings += 1
    half = tau / 2.0
    _advance(X, kp, half, rng, kernel, stats, tau_min)
    _advance(X, kp, half, rng, kernel, stats, tau_min)


def tau_leap_step(state: IntegerState, p: ModelParameters, tau: float, rng: LeapRng | int,
                  backend: str | None = None, tau_min: float = TAU_MIN, stats: LeapStats | None = None) -> IntegerState:
    """Advance ``state`` by ``tau`` minutes.

    Event counts are Poisson per channel.  If any compartment would go
    negative the leap is discarded and replaced by two leaps of ``tau / 2``
    (recursively, down to ``tau_min``).
    """
    if not tau > 0:
        raise ValidationError("tau must be positive")
    if not isinstance(rng, LeapRng):
        rng = LeapRng(rng)
    _check_structure(state.X, p)
    stats = LeapStats() if stats is None else stats
    X = state.X.copy()
    _advance(X, _KernelParams.build(p), float(tau), rng, _get_kernel(backend), stats, tau_min)
    return IntegerState(X, state.rng_seed, state.time + tau)


def _grid(span, step, what):
    k = span / step
    n = int(round(k))
    if abs(k - n) > 1e-9 * max(1.0, k):
        raise ValidationError(f"{what} ({span}) must be a multiple of tau ({step})")
    return n


def simulate(initial: IntegerState, p: ModelParameters, tau: float = 1.0, horizon: float = 0.0,
             sample_every: float = 60.0, seed: int | None = None, backend: str | None = None,
             tau_min: float = TAU_MIN) -> TimeSeries:
    """Repeated tau-leaps from ``initial``; samples per-community state totals on a fixed grid.

    Fully determined by ``(initial, p, tau, horizon, sample_every, seed)``.
    """
    if not tau > 0:
        raise ValidationError("tau must be positive")
    if horizon < 0:
        raise ValidationError("horizon must be non-negative")
    if horizon and horizon < sample_every:
        raise ValidationError("horizon must be at least sample_every")
    seed = initial.rng_seed if seed is None else seed
    _check_structure(initial.X, p)
    n_leaps = _grid(horizon, tau, "horizon")
    stride = _grid(sample_every, tau, "sample_every")
    kernel = _get_kernel(backend)
    kp = _KernelParams.build(p)
    rng = LeapRng(seed)
    stats = LeapStats()
    X = initial.X.copy()
    totals = X.sum(axis=(0, 2))
    times = [initial.time]
    samples = [X.sum(axis=1)]
    for step in range(1, n_leaps + 1):
        _advance(X, kp, float(tau), rng, kernel, stats, tau_min)
        if step % stride == 0:
            times.append(initial.time + step * tau)
            samples.append(X.sum(axis=1))
    if not np.array_equal(X.sum(axis=(0, 2)), totals):
        raise IntegrationError("home-row totals drifted; kernel bug")
    meta = {"engine": "stochastic", "backend": BACKEND if backend is None else backend, "seed": int(seed),
            "tau": float(tau), "attempts": stats.attempts, "halvings": stats.halvings,
            "events": stats.events, "final_state": X}
    return TimeSeries(np.array(times), np.array(samples, dtype=float), meta)


def run_ensemble(initial: IntegerState, p: ModelParameters, tau: float = 1.0, horizon: float = 0.0,
                 sample_every: float = 60.0, n_replicas: int = 1, base_seed: int = 0,
                 workers: int = 1, backend: str | None = None) -> EnsembleResult:
    """Independent replicas seeded ``base_seed + r``; mean and (population) std per sample."""
    if n_replicas < 1:
        raise ValidationError("n_replicas must be at least 1")
    seeds = [int(base_seed) + r for r in range(n_replicas)]

    def one(seed):
        return simulate(initial, p, tau, horizon, sample_every, seed, backend)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            replicas = list(ex.map(one, seeds))
    else:
        replicas = [one(s) for s in seeds]
    stack = np.stack([r.per_community for r in replicas])
    return EnsembleResult(replicas, stack.mean(axis=0), stack.std(axis=0), n_replicas, seeds, replicas[0].times)


def channel_propensities(state, p: ModelParameters) -> list:
    """Every event channel with a positive rate in ``state``."""
    X = state.X if hasattr(state, "X") else np.asarray(state)
    C = X.shape[1]
    m = p.mobility
    force = p.force_coefficient()
    itot = X[1].sum(axis=0).astype(float)
    mu = (p.mu_s, p.mu_i, p.mu_r)
    alpha = (p.alpha_s, p.alpha_i, p.alpha_r)
    names = ("S", "I", "R")
    out = []
    for s, i, j in zip(*np.nonzero(X)):
        s, i, j = int(s), int(i), int(j)
        x = float(X[s, i, j])
        if i == j:
            for k in np.nonzero(m.nu[i])[0]:
                if k != i and m.sigma[i] > 0:
                    out.append(EventChannel("depart", i, i, m.sigma[i] * m.nu[i, k] * x, s, int(k)))
        elif m.zeta[j, i] > 0:
            out.append(EventChannel("return", i, j, m.zeta[j, i] * x, s))
        local = []
        if s == 0:
            local = [("infect", force[j] * itot[j]), ("sleep_S", mu[0][j])]
        elif s == 1:
            local = [("recover", p.delta[j]), ("sleep_I", mu[1][j])]
        elif s == 2:
            local = [("sleep_R", mu[2][j])]
        else:
            local = [(f"wake_{names[s - 3]}", alpha[s - 3][j])]
            if s == 4:
                local.append(("latent_recover", p.gamma[j]))
        out.extend(EventChannel(kind, i, j, r * x, s) for kind, r in local if r > 0)
    return out


_TARGET = {"infect": 1, "recover": 2, "sleep_S": 3, "sleep_I": 4, "sleep_R": 5,
           "wake_S": 0, "wake_I": 1, "wake_R": 2, "latent_recover": 2}


def channel_drift(channels, n: int) -> np.ndarray:
    """Expected rate of change of every compartment implied by ``channels``."""
    d = np.zeros((6, n, n))
    for ch in channels:
        s, i, j = ch.state, ch.home, ch.location
        d[s, i, j] -= ch.rate
        if ch.kind == "depart":
            d[s, i, ch.destination] += ch.rate
        elif ch.kind == "return":
            d[s, i, i] += ch.rate
        else:
            d[_TARGET[ch.kind], i, j] += ch.rate
    return d
