"""Synthetic census and call-record corpora with planted ground truth.

The world is a square plane with heavy-tailed community populations.  Users
live in a home community, leave it at a per-community rate, jump a power-law
distributed distance, and come back home on an exponential clock.  While away
they may also jump onward (never straight back home: the only way home is the
return clock, which keeps the planted return rate exact).  Calls are a
diurnally modulated Poisson process that observes the true trajectory.

Movement happens on a one-minute grid: waits are rounded up to whole minutes.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cdr import DEFAULT_WINDOW_MINUTES, TrajectorySet, trajectories_from_records, write_cdr
from .errors import ValidationError

KIND_JUMP = 0
KIND_RETURN = 1


@dataclass
class SynthConfig:
    community_count: int = 255
    total_users: int = 10_000
    total_population: int = 15_000_000
    duration_minutes: int = DEFAULT_WINDOW_MINUTES
    jump_alpha: float = 2.51
    jump_xmin_km: float = 10.0
    attraction_exponent: float = 1.5
    population_spread: float = 1.2
    area_exponent: float = -0.3
    mean_departure_rate: float = 1.0 / 4320.0
    departure_spread: float = 0.3
    mean_return_rate: float = 1.0 / 720.0
    diurnal_amplitude: float = 0.5
    call_rate: float | None = None
    plane_km: float = 600.0
    seed: int = 0

    def validate(self) -> "SynthConfig":
        checks = [
            ("community_count", self.community_count >= 1),
            ("total_users", self.total_users >= 1),
            ("total_population", self.total_population >= self.community_count),
            ("duration_minutes", self.duration_minutes >= 1),
            ("jump_alpha", self.jump_alpha > 1),
            ("jump_xmin_km", self.jump_xmin_km > 0),
            ("population_spread", self.population_spread > 0),
            ("mean_departure_rate", self.mean_departure_rate > 0),
            ("departure_spread", self.departure_spread >= 0),
            ("mean_return_rate", self.mean_return_rate > 0),
            ("diurnal_amplitude", 0 <= self.diurnal_amplitude < 1),
            ("call_rate", self.call_rate is None or self.call_rate > 0),
            ("plane_km", self.plane_km > 2 * self.jump_xmin_km),
        ]
        for name, ok in checks:
            if not ok:
                raise ValidationError(f"invalid {name}: {getattr(self, name)!r}")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _rng(seed, stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed), stream]))


@dataclass
class World:
    positions: np.ndarray
    population: np.ndarray
    areas: np.ndarray
    attraction: np.ndarray
    departure_rate: np.ndarray
    capital: int
    names: list
    lat: np.ndarray
    lon: np.ndarray

    @property
    def n(self) -> int:
        return len(self.population)

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=2))

    def write_communities(self, path) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["community_id", "name", "lat", "lon", "area_km2", "population"])
            for c in range(self.n):
                w.writerow([c, self.names[c], repr(float(self.lat[c])), repr(float(self.lon[c])),
                            repr(float(self.areas[c])), int(self.population[c])])


def generate_world(cfg: SynthConfig) -> World:
    """Community positions, census populations, areas and attraction weights."""
    cfg.validate()
    rng = _rng(cfg.seed, 0)
    C = cfg.community_count
    L = cfg.plane_km
    pos = rng.uniform(0.0, L, size=(C, 2))
    if C == 1:
        pop = np.array([cfg.total_population], dtype=np.int64)
        areas = np.array([L * L])
    else:
        raw = rng.lognormal(0.0, cfg.population_spread, C)
        share = raw / raw.sum()
        pop = np.floor(share * cfg.total_population).astype(np.int64)
        pop = np.maximum(pop, 1)
        pop[np.argmax(pop)] += cfg.total_population - pop.sum()
        # populous communities are compact, as urban administrative units tend to be
        areas = rng.lognormal(0.0, 0.5, C) * (pop / pop.mean()) ** cfg.area_exponent
        areas *= L * L / areas.sum()
    attraction = pop.astype(float) ** cfg.attraction_exponent
    dep = cfg.mean_departure_rate * rng.lognormal(0.0, cfg.departure_spread, C)
    dep *= cfg.mean_departure_rate / dep.mean()
    lat = 4.5 + 6.0 * pos[:, 1] / L
    lon = -8.5 + 6.0 * pos[:, 0] / L
    names = [f"C{c:03d}" for c in range(C)]
    return World(pos, pop, areas, attraction, dep, int(np.argmax(pop)), names, lat, lon)


@dataclass
class GroundTruth:
    home: np.ndarray
    departure_rate: np.ndarray
    return_rate: float
    move_user: np.ndarray
    move_time: np.ndarray
    move_from: np.ndarray
    move_to: np.ndarray
    move_km: np.ndarray
    move_kind: np.ndarray
    trajectories: TrajectorySet
    user_ids: list = field(default_factory=list)

    def jump_lengths(self) -> np.ndarray:
        """Continuous lengths of all power-law jumps (returns home excluded)."""
        return self.move_km[self.move_kind == KIND_JUMP]

    def transition_tally(self, n: int) -> np.ndarray:
        P = np.zeros((n, n), dtype=np.int64)
        np.add.at(P, (self.move_from, self.move_to), 1)
        return P

    def occupancy(self, slot_minutes: int) -> np.ndarray:
        """Users present in each community at the start of each slot, from the true trajectories."""
        t = self.trajectories
        n_slots = t.window_minutes // slot_minutes
        occ = np.zeros((n_slots, t.community_count), dtype=np.int64)
        starts = np.arange(n_slots) * slot_minutes
        for k in range(t.n_users):
            lo, hi = t.offsets[k], t.offsets[k + 1]
            pos = np.searchsorted(t.arrival[lo:hi], starts, side="right") - 1
            ok = pos >= 0
            np.add.at(occ, (np.nonzero(ok)[0], t.community[lo:hi][pos[ok]]), 1)
        return occ

    def to_json(self) -> dict:
        return {
            "user_ids": self.user_ids,
            "home": self.home.tolist(),
            "departure_rate": self.departure_rate.tolist(),
            "return_rate": self.return_rate,
            "moves": {
                "user": self.move_user.tolist(), "time": self.move_time.tolist(),
                "from": self.move_from.tolist(), "to": self.move_to.tolist(),
                "km": self.move_km.tolist(), "kind": self.move_kind.tolist(),
            },
        }


@dataclass
class Corpus:
    """Call records as parallel columns (``user`` indexes ``user_ids``)."""

    user: np.ndarray
    time: np.ndarray
    community: np.ndarray
    user_ids: list
    window_minutes: int
    community_count: int

    def sorted_records(self):
        order = np.lexsort((self.community, self.user, self.time))
        ids = self.user_ids
        return [(ids[u], int(t), int(c)) for u, t, c in
                zip(self.user[order].tolist(), self.time[order].tolist(), self.community[order].tolist())]

    def write(self, path) -> None:
        write_cdr(path, self.sorted_records())

    def trajectories(self) -> TrajectorySet:
        users = np.asarray(self.user_ids, dtype=object)[self.user]
        return trajectories_from_records(users, self.time, self.community, self.community_count,
                                         self.window_minutes)

    def __len__(self):
        return len(self.user)


class _JumpSampler:
    def __init__(self, world: World, cfg: SynthConfig, rng):
        self.pos = world.positions
        self.attraction = world.attraction
        self.tree = cKDTree(world.positions)
        self.L = cfg.plane_km
        self.alpha = cfg.jump_alpha
        self.xmin = cfg.jump_xmin_km
        self.rng = rng
        self.k = min(4, world.n)

    def sample(self, src, exclude):
        """Destinations and jump lengths for users at ``src``; never ``src`` nor ``exclude``."""
        n = len(src)
        dest = np.full(n, -1, dtype=np.int64)
        length = np.zeros(n)
        todo = np.arange(n)
        for _ in range(1000):
            if len(todo) == 0:
                break
            m = len(todo)
            u = self.rng.random(m)
            L = self.xmin * (1.0 - u) ** (-1.0 / (self.alpha - 1.0))
            theta = self.rng.uniform(0.0, 2.0 * np.pi, m)
            tgt = self.pos[src[todo]] + L[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
            # mirror at the borders so every drawn length is kept
            tgt = np.mod(tgt, 2.0 * self.L)
            tgt = np.where(tgt > self.L, 2.0 * self.L - tgt, tgt)
            dist, cand = self.tree.query(tgt, k=self.k)
            cand = cand.reshape(m, -1)
            dist = dist.reshape(m, -1)
            w = self.attraction[cand] * (dist + 1.0) ** (-self.alpha)
            w[(cand == src[todo][:, None]) | (cand == exclude[todo][:, None])] = 0.0
            tot = w.sum(axis=1)
            ok = tot > 0
            cum = np.cumsum(w[ok], axis=1) / tot[ok, None]
            pick = (self.rng.random(ok.sum())[:, None] > cum).sum(axis=1)
            pick = np.minimum(pick, cum.shape[1] - 1)
            sel = todo[ok]
            dest[sel] = cand[ok][np.arange(len(sel)), pick]
            length[sel] = L[ok]
            todo = todo[~ok]
        if len(todo):
            raise RuntimeError("jump sampler failed to place some users")
        return dest, length


def generate_cdr(world: World, cfg: SynthConfig):
    """Simulate every user's walk; returns ``(Corpus, GroundTruth)``.

    With ``cfg.call_rate=None`` the corpus records every arrival (plus each
    user's position at time 0), so it is the full trajectory.
    """
    cfg.validate()
    rng_move = _rng(cfg.seed, 1)
    rng_jump = _rng(cfg.seed, 2)
    T = int(cfg.duration_minutes)
    U = cfg.total_users
    C = world.n
    zb = cfg.mean_return_rate
    lam = world.departure_rate
    home = rng_move.choice(C, size=U, p=world.population / world.population.sum()).astype(np.int64)
    user_ids = [f"u{k:07d}" for k in range(U)]
    sampler = _JumpSampler(world, cfg, rng_jump)

    loc = home.copy()
    t = np.zeros(U, dtype=np.int64)
    active = np.arange(U) if C > 1 else np.arange(0)
    mu, mt, mf, mto, mkm, mkind = [], [], [], [], [], []
    while len(active):
        at_home = loc[active] == home[active]
        rate = lam[loc[active]] + np.where(at_home, 0.0, zb)
        wait = np.maximum(1, np.ceil(rng_move.exponential(1.0 / rate))).astype(np.int64)
        tn = t[active] + wait
        alive = tn < T
        active, at_home, rate, tn = active[alive], at_home[alive], rate[alive], tn[alive]
        if not len(active):
            break
        going_home = ~at_home & (rng_move.random(len(active)) < zb / rate)
        dest = np.where(going_home, home[active], -1)
        km = np.zeros(len(active))
        jumpers = ~going_home
        if jumpers.any():
            src = loc[active[jumpers]]
            d, L = sampler.sample(src, home[active[jumpers]])
            # a jump out of home only has to avoid home itself
            dest[jumpers] = d
            km[jumpers] = L
        back = going_home
        km[back] = np.sqrt(((world.positions[loc[active[back]]] - world.positions[home[active[back]]]) ** 2).sum(axis=1))
        mu.append(active.copy())
        mt.append(tn.copy())
        mf.append(loc[active].copy())
        mto.append(dest.copy())
        mkm.append(km)
        mkind.append(np.where(going_home, KIND_RETURN, KIND_JUMP).astype(np.int8))
        loc[active] = dest
        t[active] = tn

    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
    move_user, move_time = cat(mu, np.int64), cat(mt, np.int64)
    move_from, move_to = cat(mf, np.int64), cat(mto, np.int64)
    move_km, move_kind = cat(mkm, float), cat(mkind, np.int8)
    order = np.lexsort((move_time, move_user))
    move_user, move_time, move_from, move_to, move_km, move_kind = (
        a[order] for a in (move_user, move_time, move_from, move_to, move_km, move_kind))

    full_user = np.concatenate([np.arange(U), move_user])
    full_time = np.concatenate([np.zeros(U, dtype=np.int64), move_time])
    full_comm = np.concatenate([home, move_to])
    full = Corpus(full_user, full_time, full_comm, user_ids, T, C)
    truth = GroundTruth(home, lam.copy(), zb, move_user, move_time, move_from, move_to, move_km,
                        move_kind, full.trajectories(), user_ids)
    if cfg.call_rate is None:
        return full, truth
    return observe_calls(truth, cfg, cfg.call_rate), truth


def observe_calls(truth: GroundTruth, cfg: SynthConfig, call_rate: float, max_rate: float | None = None) -> Corpus:
    """Thin the true trajectories into call records.

    Candidate calls are drawn at ``max_rate`` from a fixed stream and kept with
    probability proportional to the diurnal profile and ``call_rate``, so a
    lower ``call_rate`` always observes a subset of a higher one.
    """
    max_rate = call_rate if max_rate is None else max_rate
    if not 0 < call_rate <= max_rate:
        raise ValidationError("need 0 < call_rate <= max_rate")
    rng = _rng(cfg.seed, 3)
    traj = truth.trajectories
    T = traj.window_minutes
    A = cfg.diurnal_amplitude
    U = traj.n_users
    n_cand = rng.poisson(max_rate * (1.0 + A) * T, size=U)
    user = np.repeat(np.arange(U), n_cand)
    time = rng.integers(0, T, size=len(user))
    keep_u = rng.random(len(user))
    profile = (1.0 + A * np.sin(2.0 * np.pi * time / 1440.0)) / (1.0 + A)
    keep = keep_u < profile * (call_rate / max_rate)
    user, time = user[keep], time[keep]
    vu = traj.visit_user()
    vkey = vu * (T + 1) + traj.arrival
    ckey = user * (T + 1) + time
    pos = np.searchsorted(vkey, ckey, side="right") - 1
    comm = traj.community[pos]
    return Corpus(user, time, comm, list(truth.user_ids), T, traj.community_count)


def write_ground_truth(path, truth: GroundTruth, world: World, cfg: SynthConfig) -> None:
    doc = {"config": asdict(cfg), "capital": world.capital, **truth.to_json()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
