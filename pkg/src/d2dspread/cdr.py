"""Call-record ingestion and extraction of mobility parameters.

Records are ``(user_id, timestamp_min, community_id)`` tuples.  Each user's
records are sorted by time and consecutive records in the same community are
merged into a single visit; a visit lasts until the next visit starts, and the
last visit lasts until the end of the observation window.

From the visits we build the transition matrix ``P``, the home-return matrix
``P_return``, and the rates ``nu`` (destination choice), ``sigma`` (departure)
and ``zeta`` (return home).  All times are in minutes.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)

#: 150 days of records, in minutes.
DEFAULT_WINDOW_MINUTES = 150 * 24 * 60
CDR_HEADER = ("user_id", "timestamp_min", "community_id")


@dataclass(frozen=True)
class CdrRecord:
    user_id: str
    timestamp: int
    community_id: int


@dataclass(eq=False)
class TrajectorySet:
    """Per-user visit lists stored column-wise.

    Visits of user ``k`` occupy rows ``offsets[k]:offsets[k + 1]`` of
    ``community``/``arrival``/``departure``.  Users are kept in sorted
    ``user_id`` order so identical inputs always give identical sets.
    """

    user_ids: list
    offsets: np.ndarray
    community: np.ndarray
    arrival: np.ndarray
    departure: np.ndarray
    window_minutes: int
    community_count: int

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.community = np.asarray(self.community, dtype=np.int64)
        self.arrival = np.asarray(self.arrival, dtype=np.int64)
        self.departure = np.asarray(self.departure, dtype=np.int64)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_visits(self) -> int:
        return len(self.community)

    def visit_user(self) -> np.ndarray:
        """User index of every visit row."""
        return np.repeat(np.arange(self.n_users), np.diff(self.offsets))

    def visits(self, k: int) -> list:
        """Visits of the ``k``-th user as ``(community, arrival, departure)`` tuples."""
        lo, hi = self.offsets[k], self.offsets[k + 1]
        return [
            (int(c), int(a), int(d))
            for c, a, d in zip(self.community[lo:hi], self.arrival[lo:hi], self.departure[lo:hi])
        ]

    def as_dict(self) -> dict:
        return {u: self.visits(k) for k, u in enumerate(self.user_ids)}

    def __eq__(self, other):
        if not isinstance(other, TrajectorySet):
            return NotImplemented
        return (
            self.user_ids == other.user_ids
            and self.window_minutes == other.window_minutes
            and self.community_count == other.community_count
            and np.array_equal(self.offsets, other.offsets)
            and np.array_equal(self.community, other.community)
            and np.array_equal(self.arrival, other.arrival)
            and np.array_equal(self.departure, other.departure)
        )


@dataclass
class TransitionCounts:
    """``P[i, j]``: moves i -> j.  ``P_return[j, i]``: moves j -> i where i is the mover's home."""

    P: np.ndarray
    P_return: np.ndarray


@dataclass
class MobilityParameters:
    """Destination probabilities ``nu``, departure rates ``sigma`` and return rates ``zeta``.

    ``zeta[j, i]`` is the rate at which a device with home ``i`` located in ``j``
    goes back home.  Rates are per minute.
    """

    nu: np.ndarray
    sigma: np.ndarray
    zeta: np.ndarray
    isolated: np.ndarray = None

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)
        n = len(self.sigma)
        if self.nu.shape != (n, n) or self.zeta.shape != (n, n):
            raise ValidationError("nu, sigma and zeta dimensions disagree")
        if self.isolated is None:
            self.isolated = self.nu.sum(axis=1) == 0
        self.isolated = np.asarray(self.isolated, dtype=bool)

    @property
    def n(self) -> int:
        return len(self.sigma)

    def scaled(self, factor: float) -> "MobilityParameters":
        """Same mobility with every rate multiplied by ``factor`` (steady state unchanged)."""
        return MobilityParameters(self.nu.copy(), self.sigma * factor, self.zeta * factor, self.isolated.copy())


@dataclass
class DensityMatrix:
    rho: np.ndarray
    slot_duration: int
    areas: np.ndarray
    slot_times: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.slot_times is None:
            self.slot_times = np.arange(self.rho.shape[0], dtype=np.int64) * self.slot_duration


def _parse_rows(rows, community_count, window_minutes):
    users, times, comms = [], [], []
    for lineno, row in rows:
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
        user, ts, cid = (f.strip() for f in row)
        if not user:
            raise ParseError("empty user_id", lineno)
        try:
            ts_v = int(ts)
            cid_v = int(cid)
        except ValueError:
            raise ParseError(f"non-integer timestamp or community id: {row!r}", lineno) from None
        if not 0 <= cid_v < community_count:
            raise ValidationError(f"line {lineno}: community id {cid_v} outside [0, {community_count})")
        if not 0 <= ts_v < window_minutes:
            raise ValidationError(f"line {lineno}: timestamp {ts_v} outside [0, {window_minutes})")
        users.append(user)
        times.append(ts_v)
        comms.append(cid_v)
    return users, times, comms


def parse_cdr(record_stream: Iterable[str], community_count: int,
              window_minutes: int = DEFAULT_WINDOW_MINUTES, header: bool | None = None) -> TrajectorySet:
    """Parse CSV lines into a :class:`TrajectorySet`.

    ``header=None`` auto-detects the ``user_id,timestamp_min,community_id``
    header on the first line.
    """
    lines = iter(record_stream)
    reader = csv.reader(line.rstrip("\r\n") for line in lines)

    def numbered():
        first = True
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if first:
                first = False
                is_header = tuple(f.strip() for f in row) == CDR_HEADER
                if header or (header is None and is_header):
                    if header and not is_header:
                        raise ParseError(f"bad header {row!r}", lineno)
                    continue
            yield lineno, row

    users, times, comms = _parse_rows(numbered(), community_count, window_minutes)
    return trajectories_from_records(users, times, comms, community_count, window_minutes)


def read_cdr(path, community_count: int, window_minutes: int = DEFAULT_WINDOW_MINUTES) -> TrajectorySet:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_cdr(fh, community_count, window_minutes)


def write_cdr(path, records) -> None:
    """Write ``(user_id, timestamp, community_id)`` rows with the standard header."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CDR_HEADER)
        w.writerows(records)


def trajectories_from_records(users, times, comms, community_count: int,
                              window_minutes: int = DEFAULT_WINDOW_MINUTES) -> TrajectorySet:
    """Build visits from parallel record columns (users may be any sortable ids)."""
    if len(users) == 0:
        return TrajectorySet([], np.zeros(1, np.int64), np.zeros(0), np.zeros(0), np.zeros(0),
                             window_minutes, community_count)
    uniq, uidx = np.unique(np.asarray(users, dtype=object).astype(str), return_inverse=True)
    times = np.asarray(times, dtype=np.int64)
    comms = np.asarray(comms, dtype=np.int64)
    # stable: records sharing a timestamp keep file order
    order = np.lexsort((times, uidx))
    uidx, times, comms = uidx[order], times[order], comms[order]

    new_user = np.ones(len(uidx), dtype=bool)
    new_user[1:] = uidx[1:] != uidx[:-1]
    starts_visit = new_user.copy()
    starts_visit[1:] |= comms[1:] != comms[:-1]

    v_user = uidx[starts_visit]
    v_comm = comms[starts_visit]
    v_arr = times[starts_visit]
    v_dep = np.empty_like(v_arr)
    v_dep[:-1] = v_arr[1:]
    last_of_user = np.ones(len(v_user), dtype=bool)
    last_of_user[:-1] = v_user[1:] != v_user[:-1]
    v_dep[last_of_user] = window_minutes

    counts = np.bincount(v_user, minlength=len(uniq))
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return TrajectorySet(list(uniq), offsets, v_comm, v_arr, v_dep, window_minutes, community_count)


def _transition_pairs(t: TrajectorySet):
    vu = t.visit_user()
    same = vu[1:] == vu[:-1]
    src = t.community[:-1][same]
    dst = t.community[1:][same]
    who = vu[1:][same]
    return src, dst, who


def assign_home(t: TrajectorySet) -> np.ndarray:
    """Home community of every user: the one where the user spent the most time.

    Ties go to the smallest community index; a user with no observed time gets
    the community of their first record.
    """
    C = t.community_count
    if t.n_users == 0:
        return np.zeros(0, dtype=np.int64)
    vu = t.visit_user()
    dwell = (t.departure - t.arrival).astype(np.int64)
    key = vu * C + t.community
    ukey, inv = np.unique(key, return_inverse=True)
    total = np.bincount(inv, weights=dwell).astype(np.int64)
    k_user = ukey // C
    k_comm = ukey % C
    # by user, then longest time, then smallest index
    order = np.lexsort((k_comm, -total, k_user))
    first = np.ones(len(order), dtype=bool)
    first[1:] = k_user[order][1:] != k_user[order][:-1]
    home = np.empty(t.n_users, dtype=np.int64)
    home[k_user[order][first]] = k_comm[order][first]
    per_user_total = np.bincount(vu, weights=dwell, minlength=t.n_users)
    no_time = per_user_total == 0
    if no_time.any():
        home[no_time] = t.community[t.offsets[:-1][no_time]]
    return home


def build_transition_counts(t: TrajectorySet, home: np.ndarray | None = None) -> TransitionCounts:
    C = t.community_count
    P = np.zeros((C, C), dtype=np.int64)
    Pr = np.zeros((C, C), dtype=np.int64)
    if t.n_users == 0:
        return TransitionCounts(P, Pr)
    if home is None:
        home = assign_home(t)
    src, dst, who = _transition_pairs(t)
    np.add.at(P, (src, dst), 1)
    ret = dst == home[who]
    np.add.at(Pr, (src[ret], dst[ret]), 1)
    return TransitionCounts(P, Pr)


def compute_nu(counts: TransitionCounts):
    """Row-normalise ``P``.  Returns ``(nu, isolated)``; isolated rows stay all-zero."""
    P = np.asarray(counts.P, dtype=float)
    if np.any(np.diag(P) != 0):
        raise ValidationError("transition matrix must have a zero diagonal")
    rows = P.sum(axis=1)
    isolated = rows == 0
    nu = np.zeros_like(P)
    nz = ~isolated
    nu[nz] = P[nz] / rows[nz, None]
    if isolated.any():
        log.info("%d isolated communities (no observed departures)", int(isolated.sum()))
    return nu, isolated


def _check_time(time_minutes):
    if not time_minutes > 0:
        raise ValidationError(f"time_minutes must be positive, got {time_minutes}")


def compute_sigma(counts: TransitionCounts, time_minutes: int = DEFAULT_WINDOW_MINUTES) -> np.ndarray:
    """Departure rate of every community: transitions out per minute of observation."""
    _check_time(time_minutes)
    return np.asarray(counts.P, dtype=float).sum(axis=1) / time_minutes


def compute_zeta(counts: TransitionCounts, time_minutes: int = DEFAULT_WINDOW_MINUTES) -> np.ndarray:
    """Return-home rates ``zeta[j, i]`` = returns from j to home i per minute."""
    _check_time(time_minutes)
    return np.asarray(counts.P_return, dtype=float) / time_minutes


def extract_mobility(t: TrajectorySet, time_minutes: int | None = None):
    """Full extraction: ``(MobilityParameters, TransitionCounts, home)``."""
    time_minutes = t.window_minutes if time_minutes is None else time_minutes
    home = assign_home(t)
    counts = build_transition_counts(t, home)
    nu, isolated = compute_nu(counts)
    m = MobilityParameters(nu, compute_sigma(counts, time_minutes), compute_zeta(counts, time_minutes), isolated)
    return m, counts, home


def exposure_minutes(t: TrajectorySet, home: np.ndarray | None = None):
    """User-minutes spent in each community.

    Returns ``(total, by_home)`` where ``total[j]`` sums over all users and
    ``by_home[j, i]`` only over users whose home is ``i``.
    """
    C = t.community_count
    total = np.zeros(C)
    by_home = np.zeros((C, C))
    if t.n_users == 0:
        return total, by_home
    if home is None:
        home = assign_home(t)
    dwell = (t.departure - t.arrival).astype(float)
    total = np.bincount(t.community, weights=dwell, minlength=C)
    h = home[t.visit_user()]
    np.add.at(by_home, (t.community, h), dwell)
    return total, by_home


def per_capita_mobility(t: TrajectorySet, counts: TransitionCounts | None = None,
                        home: np.ndarray | None = None) -> MobilityParameters:
    """Per-device rates: event counts divided by the user-minutes exposed to them.

    ``sigma_i`` = departures of i-residents from home / minutes they spent at
    home, and ``zeta[j, i]`` = returns from j to home i / minutes i-residents
    spent in j.  ``nu`` is the same as :func:`compute_nu`.
    """
    if home is None:
        home = assign_home(t)
    if counts is None:
        counts = build_transition_counts(t, home)
    C = t.community_count
    nu, isolated = compute_nu(counts)
    _, by_home = exposure_minutes(t, home)
    src, _, who = _transition_pairs(t)
    leaving_home = src == home[who]
    out = np.bincount(src[leaving_home], minlength=C).astype(float)
    at_home = np.diag(by_home).copy()
    sigma = np.divide(out, at_home, out=np.zeros(C), where=at_home > 0)
    Pr = np.asarray(counts.P_return, dtype=float)
    zeta = np.divide(Pr, by_home, out=np.zeros_like(Pr), where=by_home > 0)
    np.fill_diagonal(zeta, 0.0)
    return MobilityParameters(nu, sigma, zeta, isolated)


def compute_density(t: TrajectorySet, areas, slot_minutes: int) -> DensityMatrix:
    """Users per km^2 in every community at the start of every time slot."""
    areas = np.asarray(areas, dtype=float)
    if areas.shape != (t.community_count,):
        raise ValidationError("one area per community is required")
    if np.any(areas <= 0):
        raise ValidationError("community areas must be strictly positive")
    if slot_minutes <= 0 or t.window_minutes % slot_minutes:
        raise ValidationError("slot_minutes must divide the observation window")
    n_slots = t.window_minutes // slot_minutes
    C = t.community_count
    diff = np.zeros((n_slots + 1, C), dtype=np.int64)
    if t.n_visits:
        # slots whose start lies in [arrival, departure)
        first = -(-t.arrival // slot_minutes)
        last = -(-t.departure // slot_minutes)
        ok = last > first
        np.add.at(diff, (first[ok], t.community[ok]), 1)
        np.add.at(diff, (np.minimum(last[ok], n_slots), t.community[ok]), -1)
    occupancy = np.cumsum(diff[:-1], axis=0)
    return DensityMatrix(occupancy / areas, slot_minutes, areas)


def prune_unreturned_flows(m: MobilityParameters) -> MobilityParameters:
    """Drop destinations with no observed way back home, then renormalise ``nu``.

    The closed-form steady state needs ``zeta[j, i] > 0`` wherever ``nu[i, j] > 0``.
    Rows left empty become isolated with ``sigma = 0``.
    """
    nu = m.nu.copy()
    bad = (nu > 0) & (m.zeta.T <= 0)
    if bad.any():
        log.info("pruning %d flows without an observed return", int(bad.sum()))
    nu[bad] = 0.0
    rows = nu.sum(axis=1)
    isolated = rows == 0
    nu[~isolated] /= rows[~isolated, None]
    sigma = np.where(isolated, 0.0, m.sigma)
    return MobilityParameters(nu, sigma, m.zeta.copy(), isolated)
