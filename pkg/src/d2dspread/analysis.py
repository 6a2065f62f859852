"""Metrics: distribution divergence, power-law fits, flow-graph statistics and epidemic-curve summaries."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .timeseries import EI, ER, I, R, TimeSeries

KL_SMOOTHING = 1e-12
DEFAULT_XMIN_KM = 10.0


def _smooth(d):
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValidationError("distributions must be finite and non-negative")
    total = d.sum()
    if total <= 0:
        raise ValidationError("distribution has zero mass")
    d = d / total + KL_SMOOTHING
    return d / d.sum()


def kl_symmetrized(d1, d2) -> float:
    """Half the sum of both KL divergences; inputs are normalised and smoothed by 1e-12 first."""
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if d1.shape != d2.shape:
        raise ValidationError(f"dimension mismatch: {d1.shape} vs {d2.shape}")
    p, q = _smooth(d1), _smooth(d2)
    lr = np.log(p) - np.log(q)
    return float(0.5 * (np.sum(p * lr) - np.sum(q * lr)))


@dataclass
class PowerLawFit:
    alpha: float
    stderr: float
    n: int
    x_min: float


def fit_power_law(samples, x_min: float = DEFAULT_XMIN_KM, min_samples: int = 100) -> PowerLawFit:
    """Continuous maximum-likelihood exponent of the tail above ``x_min``."""
    if not x_min > 0:
        raise ValidationError("x_min must be positive")
    x = np.asarray(samples, dtype=float)
    x = x[x >= x_min]
    n = len(x)
    if n < min_samples:
        raise ValidationError(f"need at least {min_samples} samples above x_min, got {n}")
    s = np.sum(np.log(x / x_min))
    if s <= 0:
        raise ValidationError("all samples sit at x_min; exponent undefined")
    alpha = 1.0 + n / s
    return PowerLawFit(float(alpha), float((alpha - 1.0) / math.sqrt(n)), n, float(x_min))


def betweenness_directed(adj) -> np.ndarray:
    """Brandes betweenness on an unweighted directed graph given as a boolean adjacency matrix.

    Raw pair-dependency sums (not normalised).
    """
    A = np.asarray(adj, dtype=bool).copy()
    np.fill_diagonal(A, False)
    n = len(A)
    succ = [np.nonzero(A[v])[0] for v in range(n)]
    bc = np.zeros(n)
    for s in range(n):
        order = []
        preds = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in succ[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = np.zeros(n)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return bc


@dataclass
class GraphStats:
    in_flow_share: np.ndarray
    in_flow_per_capita: np.ndarray
    betweenness: np.ndarray
    out_degree: np.ndarray
    in_degree: np.ndarray
    ranking: list = field(default_factory=list)

    def degree_distribution(self) -> dict:
        vals, counts = np.unique(self.out_degree + self.in_degree, return_counts=True)
        return {int(v): int(c) for v, c in zip(vals, counts)}


def graph_stats(P, populations=None) -> GraphStats:
    """In-flow shares, normalised betweenness and degrees of the transition graph.

    ``ranking`` orders communities by in-flow share (largest first).  The
    per-capita in-flow divides the share by the community's population and is
    renormalised to sum to one.
    """
    P = np.asarray(P.P if hasattr(P, "P") else P, dtype=float)
    n = len(P)
    total = P.sum()
    inflow = P.sum(axis=0)
    share = inflow / total if total > 0 else np.zeros(n)
    if populations is not None:
        pop = np.asarray(populations, dtype=float)
        pc = np.divide(share, pop, out=np.zeros(n), where=pop > 0)
        pc = pc / pc.sum() if pc.sum() > 0 else pc
    else:
        pc = np.full(n, np.nan)
    support = P > 0
    np.fill_diagonal(support, False)
    bc = betweenness_directed(support)
    if n > 1:
        bc = bc / (n * (n - 1))
    ranking = sorted(range(n), key=lambda k: (-share[k], k))
    return GraphStats(share, pc, bc, support.sum(axis=1), support.sum(axis=0), ranking)


@dataclass
class EpidemicSummary:
    peak_time: float
    peak_height: float
    cumulative_infected_fraction: float
    phase_boundaries: tuple
    no_outbreak: bool = False
    first_infection_times: np.ndarray = None
    three_phases: bool = False

    def to_dict(self) -> dict:
        return {
            "peak_time_min": self.peak_time,
            "peak_time_days": self.peak_time / 1440.0,
            "peak_height": self.peak_height,
            "cumulative_infected_fraction": self.cumulative_infected_fraction,
            "phase_boundaries_min": list(self.phase_boundaries),
            "no_outbreak": self.no_outbreak,
            "three_phases": self.three_phases,
        }


def first_infection_times(ts: TimeSeries, threshold: float = 1.0) -> np.ndarray:
    """First sample time at which each community holds ``threshold`` or more infectives (inf if never)."""
    carrying = ts.per_community[:, I, :] >= threshold
    out = np.full(ts.n_communities, np.inf)
    hit = carrying.any(axis=0)
    out[hit] = ts.times[np.argmax(carrying[:, hit], axis=0)]
    return out


def epidemic_summary(ts: TimeSeries, origin: int | None = None, threshold: float = 1.0) -> EpidemicSummary:
    """Peak, three-phase boundaries and final reach of a spreading run.

    Phase 1 ends at the first sample where more than one community holds at
    least ``threshold`` infectives and still does at the next sample; phase 2
    ends at the (first) global peak of active infectives.  The run shows three
    phases when phase 1 has non-zero length, the peak is interior, and some
    community is first reached after the peak.
    """
    g = ts.global_counts
    inf = g[:, I]
    k_peak = int(np.argmax(inf))
    peak_time = float(ts.times[k_peak])
    n_total = ts.total_population()
    reached = g[-1, R] + g[-1, ER]
    cum = float(np.clip(reached / n_total, 0.0, 1.0)) if n_total > 0 else 0.0
    no_outbreak = bool(np.all(np.diff(inf) <= 0)) if len(inf) > 1 else True

    n_inf = (ts.per_community[:, I, :] >= threshold).sum(axis=1)
    multi = n_inf > 1
    sustained = multi[:-1] & multi[1:] if len(multi) > 1 else multi
    if sustained.any():
        phase1_end = float(ts.times[int(np.argmax(sustained))])
    else:
        phase1_end = peak_time
    phase1_end = min(phase1_end, peak_time)
    first = first_infection_times(ts, threshold)
    late = np.isfinite(first) & (first > peak_time)
    three = (not no_outbreak and phase1_end > ts.times[0] and ts.times[0] < peak_time < ts.times[-1]
             and bool(late.any()))
    return EpidemicSummary(peak_time, float(inf[k_peak]), cum, (phase1_end, peak_time), no_outbreak, first, three)


def peak_time(ts: TimeSeries) -> float:
    return float(ts.times[int(np.argmax(ts.global_counts[:, I]))])


def infected_fraction_curve(ts: TimeSeries, include_latent: bool = False) -> np.ndarray:
    """(n, 2) array of days vs fraction of devices currently carrying the message."""
    g = ts.global_counts
    cur = g[:, I] + (g[:, EI] if include_latent else 0.0)
    return np.column_stack([ts.times / 1440.0, cur / ts.total_population()])


def cumulative_fraction_curve(ts: TimeSeries) -> np.ndarray:
    """(n, 2) array of days vs fraction of devices that have received the message."""
    g = ts.global_counts
    got = g[:, I] + g[:, R] + g[:, EI] + g[:, ER]
    return np.column_stack([ts.times / 1440.0, got / ts.total_population()])
