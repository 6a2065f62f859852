"""Scenario configuration and assembly of a runnable model from a corpus and a communities table.

Configuration files are flat ``key = value`` text; ``#`` starts a comment.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import cdr as cdr_mod
from .analysis import graph_stats
from .cdr import MobilityParameters, TrajectorySet
from .dynamics import (CompartmentState, ModelParameters, SeedSpec, apply_latent_fraction, latent_rates,
                       seed_infection)
from .errors import ParseError, ValidationError
from .io import Communities, read_communities
from .mobility import (DEFAULT_CHI, DEFAULT_RADIUS_M, DEFAULT_ZETA_BAR, SteadyState, beta_from_contact,
                       heterogeneous_zeta, neighborhood_size, steady_state)
from .synth import SynthConfig

OUT_ENV = "D2DSPREAD_OUT"


@dataclass
class ScenarioConfig:
    cdr: str = ""
    communities: str = ""
    out_dir: str = ""
    mode: str = "sir"
    engine: str = "stochastic"
    origin: str = "sparse"
    epsilon: float = 100.0 / 18959.0
    seed_devices: float | None = None
    radius_m: float = DEFAULT_RADIUS_M
    c: float = 0.01
    delta: float = 1.0 / 120.0
    latent_fraction: float = 0.0
    wake_rate: float = 1.0 / 720.0
    gamma: float | None = None
    mu_s: float | None = None
    mu_i: float | None = None
    mu_r: float | None = None
    alpha_s: float | None = None
    alpha_i: float | None = None
    alpha_r: float | None = None
    zeta_mode: str = "empirical"
    chi: float = DEFAULT_CHI
    zeta_bar: float = DEFAULT_ZETA_BAR
    rates: str = "per_capita"
    tau: float = 1.0
    dt: float = 1.0
    horizon_min: float = 14 * 1440.0
    sample_every: float = 60.0
    replicas: int = 1
    seed: int = 0
    workers: int = 1
    backend: str = ""
    slot_minutes: int = 60
    threshold: float = 1.0
    extra: dict = field(default_factory=dict, repr=False)

    def validate(self) -> "ScenarioConfig":
        choices = {"mode": ("sir", "sir_latent"), "engine": ("deterministic", "stochastic"),
                   "zeta_mode": ("empirical", "heterogeneous"), "rates": ("per_capita", "aggregate")}
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ValidationError(f"invalid {key}: {getattr(self, key)!r} (expected one of {', '.join(allowed)})")
        positive = ("radius_m", "delta", "wake_rate", "zeta_bar", "tau", "dt", "sample_every", "slot_minutes",
                    "threshold")
        for key in positive:
            if not getattr(self, key) > 0:
                raise ValidationError(f"invalid {key}: must be positive")
        if not 0 <= self.c < 1:
            raise ValidationError("invalid c: contact success probability must lie in [0, 1)")
        if not 0 < self.epsilon < 1:
            raise ValidationError("invalid epsilon: must lie in (0, 1)")
        if not 0 <= self.latent_fraction < 1:
            raise ValidationError("invalid latent_fraction: must lie in [0, 1)")
        if self.mode == "sir" and self.latent_fraction > 0:
            raise ValidationError("invalid latent_fraction: requires mode = sir_latent")
        if self.horizon_min < 0:
            raise ValidationError("invalid horizon_min: must be non-negative")
        if self.replicas < 1:
            raise ValidationError("invalid replicas: must be at least 1")
        if self.workers < 1:
            raise ValidationError("invalid workers: must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("invalid seed: must be an unsigned 64-bit integer")
        return self

    def public_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("extra")
        return d


_SCENARIO_KEYS = {f.name: f for f in fields(ScenarioConfig) if f.name != "extra"}
_SYNTH_KEYS = {f.name: f for f in fields(SynthConfig)}


def _coerce(name, raw, default):
    raw = raw.strip()
    if raw.lower() in ("", "none", "null") and default is None:
        return None
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes", "on")
        if isinstance(default, int) and not isinstance(default, bool):
            return int(raw, 0)
        if isinstance(default, float) or default is None:
            return _float(raw)
    except ValueError:
        raise ValidationError(f"invalid {name}: cannot parse {raw!r}") from None
    return raw


def _float(raw):
    if "/" in raw:
        a, b = raw.split("/", 1)
        return float(a) / float(b)
    return float(raw)


def parse_config_text(text: str) -> dict:
    """``key = value`` pairs; later keys win.  Unknown keys are an error."""
    out = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected key = value", line=ln)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _SCENARIO_KEYS and key not in _SYNTH_KEYS:
            raise ParseError(f"unknown key {key!r}", line=ln)
        out[key] = value
    return out


def _build(cls, keys, raw: dict):
    obj = cls()
    for k, v in raw.items():
        if k in keys:
            setattr(obj, k, _coerce(k, v, getattr(obj, k)) if isinstance(v, str) else v)
    return obj


def load_config(path=None, overrides: dict | None = None) -> tuple:
    """``(ScenarioConfig, SynthConfig)`` from an optional file plus overrides (already parsed values)."""
    raw = {}
    if path is not None:
        raw.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    sc = _build(ScenarioConfig, _SCENARIO_KEYS, raw)
    sy = _build(SynthConfig, _SYNTH_KEYS, raw)
    if "seed" in raw:
        sy.seed = sc.seed
    if not sc.out_dir:
        sc.out_dir = os.environ.get(OUT_ENV, "d2dspread-out")
    return sc, sy


@dataclass
class World:
    """Everything derived from the input files that a run needs."""

    communities: Communities
    trajectories: TrajectorySet
    counts: cdr_mod.TransitionCounts
    home: np.ndarray
    mobility: MobilityParameters
    steady: SteadyState

    @property
    def n(self) -> int:
        return self.communities.n


def mobility_from_trajectories(t: TrajectorySet, rates: str = "per_capita", zeta_mode: str = "empirical",
                               chi: float = DEFAULT_CHI, zeta_bar: float = DEFAULT_ZETA_BAR):
    """``(MobilityParameters, counts, home)`` ready for the closed-form steady state.

    Flows without any observed return are dropped (see ``prune_unreturned_flows``).
    """
    home = cdr_mod.assign_home(t)
    counts = cdr_mod.build_transition_counts(t, home)
    if rates == "per_capita":
        m = cdr_mod.per_capita_mobility(t, counts, home)
    elif rates == "aggregate":
        nu, isolated = cdr_mod.compute_nu(counts)
        m = MobilityParameters(nu, cdr_mod.compute_sigma(counts, t.window_minutes),
                               cdr_mod.compute_zeta(counts, t.window_minutes), isolated)
    else:
        raise ValidationError(f"invalid rates: {rates!r}")
    if zeta_mode == "heterogeneous":
        m = MobilityParameters(m.nu, m.sigma, heterogeneous_zeta(counts.P, zeta_bar, chi), m.isolated)
    return cdr_mod.prune_unreturned_flows(m), counts, home


def load_world(cfg: ScenarioConfig) -> World:
    for key in ("cdr", "communities"):
        if not getattr(cfg, key):
            raise ValidationError(f"missing {key}: path is required")
        if not Path(getattr(cfg, key)).is_file():
            raise ValidationError(f"invalid {key}: file not found: {getattr(cfg, key)}")
    comm = read_communities(cfg.communities)
    t = cdr_mod.read_cdr(cfg.cdr, comm.n)
    return world_from_parts(comm, t, cfg)


def world_from_parts(comm: Communities, t: TrajectorySet, cfg: ScenarioConfig) -> World:
    m, counts, home = mobility_from_trajectories(t, cfg.rates, cfg.zeta_mode, cfg.chi, cfg.zeta_bar)
    ss = steady_state(comm.population.astype(float), m, comm.area_km2)
    return World(comm, t, counts, home, m, ss)


def resolve_origin(origin, world: World) -> int:
    """Community index for ``origin``: an integer id, ``sparse`` (lowest steady density) or ``dense``.

    ``dense`` picks the community with the highest betweenness of the flow
    graph, ties broken by steady-state density.
    """
    n = world.n
    s = str(origin).strip().lower()
    occupied = world.steady.N_star_loc > 0
    if s == "sparse":
        rho = np.where(occupied, world.steady.rho_star, np.inf)
        return int(np.argmin(rho))
    if s == "dense":
        bc = graph_stats(world.counts.P).betweenness
        order = np.lexsort((-world.steady.rho_star, -bc))
        return int(order[0])
    try:
        o = int(s)
    except ValueError:
        raise ValidationError(f"invalid origin: {origin!r}") from None
    if not 0 <= o < n:
        raise ValidationError(f"invalid origin: {o} outside [0, {n})")
    return o


def model_parameters(world: World, cfg: ScenarioConfig) -> ModelParameters:
    n = world.n
    k = neighborhood_size(world.steady, cfg.radius_m)
    beta = np.full(n, float(beta_from_contact(cfg.c)))
    p = ModelParameters(beta, np.full(n, cfg.delta), k, world.mobility, world.steady.N_star_loc)
    if cfg.mode == "sir":
        return p
    gamma = cfg.delta if cfg.gamma is None else cfg.gamma
    rates = latent_rates(cfg.latent_fraction, cfg.wake_rate, n, np.full(n, gamma))
    for key in ("mu_s", "mu_i", "mu_r", "alpha_s", "alpha_i", "alpha_r"):
        v = getattr(cfg, key)
        if v is not None:
            rates[key] = np.full(n, float(v))
    return p.with_latent(**rates)


def initial_state(world: World, cfg: ScenarioConfig, origin: int | None = None) -> CompartmentState:
    o = resolve_origin(cfg.origin, world) if origin is None else origin
    eps = cfg.epsilon
    if cfg.seed_devices is not None:
        at_home = world.steady.N_star[o, o]
        if not 0 < cfg.seed_devices < at_home:
            raise ValidationError(f"invalid seed_devices: need 0 < seed_devices < {at_home:g} at home in {o}")
        eps = cfg.seed_devices / at_home
    state = seed_infection(world.steady, SeedSpec(o, eps), latent_mode=cfg.mode == "sir_latent")
    if cfg.mode == "sir_latent" and cfg.latent_fraction > 0:
        state = apply_latent_fraction(state, cfg.latent_fraction)
    return state


def communities_from_synth(w) -> Communities:
    return Communities(list(w.names), w.lat.copy(), w.lon.copy(), w.areas.copy(), w.population.copy())
