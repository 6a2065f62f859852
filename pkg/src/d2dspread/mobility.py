"""Home-rooted mobility dynamics, their closed-form steady state and contact parameters."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .cdr import MobilityParameters, TransitionCounts
from .errors import StructuralError, ValidationError

log = logging.getLogger(__name__)

#: mean dwell of half a day
DEFAULT_ZETA_BAR = 1.0 / 720.0
DEFAULT_CHI = -0.5
DEFAULT_RADIUS_M = 100.0


@dataclass
class PopulationPartition:
    """``N[i, j]``: devices with home ``i`` currently in ``j``."""

    N: np.ndarray
    areas: np.ndarray
    census: np.ndarray

    def __post_init__(self):
        self.N = np.asarray(self.N, dtype=float)
        self.areas = np.asarray(self.areas, dtype=float)
        self.census = np.asarray(self.census, dtype=float)

    @classmethod
    def at_home(cls, census, areas):
        census = np.asarray(census, dtype=float)
        return cls(np.diag(census), areas, census)


@dataclass
class SteadyState:
    N_star: np.ndarray
    rho_star: np.ndarray
    N_star_loc: np.ndarray
    areas: np.ndarray

    @property
    def census(self) -> np.ndarray:
        return self.N_star.sum(axis=1)


@dataclass
class ContactParameters:
    k_mean: np.ndarray
    beta: np.ndarray
    radius_m: float


def mobility_rhs(N, m: MobilityParameters) -> np.ndarray:
    """Time derivative of the home/location partition ``N``.

    Devices leave home at rate ``sigma_i`` (to ``j`` with probability
    ``nu_ij``) and go back from ``j`` at rate ``zeta_ji``; there is no direct
    travel between two foreign communities.
    """
    if isinstance(N, PopulationPartition):
        N = N.N
    N = np.asarray(N, dtype=float)
    if N.shape != (m.n, m.n):
        raise ValidationError(f"partition shape {N.shape} does not match {m.n} communities")
    home = np.diag(N)
    zt = m.zeta.T.copy()  # zt[i, j] = zeta[j, i]
    np.fill_diagonal(zt, 0.0)
    back = zt * N
    np.fill_diagonal(back, 0.0)
    sigma = effective_sigma(m)
    d = (sigma * home)[:, None] * m.nu - back
    np.fill_diagonal(d, back.sum(axis=1) - sigma * home)
    return d


def effective_sigma(m: MobilityParameters) -> np.ndarray:
    """Departure rates with rows that have no destination forced to zero (nobody can leave)."""
    return np.where(m.nu.sum(axis=1) > 0, m.sigma, 0.0)


def _away_ratio(m: MobilityParameters) -> np.ndarray:
    """``r[i, j] = sigma_i nu_ij / zeta_ji`` for ``j != i``; raises on missing return paths."""
    zt = m.zeta.T
    flow = m.sigma[:, None] * m.nu
    np.fill_diagonal(flow, 0.0)
    missing = (flow > 0) & (zt <= 0)
    if missing.any():
        i, j = (int(v) for v in np.argwhere(missing)[0])
        raise StructuralError(
            f"no return path: nu[{i},{j}] > 0 but zeta[{j},{i}] == 0 "
            f"({int(missing.sum())} such pairs)", pair=(i, j))
    return np.divide(flow, zt, out=np.zeros_like(flow), where=flow > 0)


def steady_state(census, m: MobilityParameters, areas=None) -> SteadyState:
    """Closed-form long-run partition of each home population across locations."""
    census = np.asarray(census, dtype=float)
    if census.shape != (m.n,):
        raise ValidationError("census length must equal the number of communities")
    if np.any(census < 0):
        raise ValidationError("census populations must be non-negative")
    areas = np.ones(m.n) if areas is None else np.asarray(areas, dtype=float)
    if np.any(areas <= 0):
        raise ValidationError("areas must be strictly positive")
    r = _away_ratio(m)
    denom = 1.0 + r.sum(axis=1)
    N_star = census[:, None] * r / denom[:, None]
    np.fill_diagonal(N_star, census / denom)
    occ = N_star.sum(axis=0)
    return SteadyState(N_star, occ / areas, occ, areas)


def out_degree(P) -> np.ndarray:
    P = np.asarray(P.P if isinstance(P, TransitionCounts) else P)
    support = P > 0
    np.fill_diagonal(support, False)
    return support.sum(axis=1)


def heterogeneous_zeta(P, zeta_bar: float = DEFAULT_ZETA_BAR, chi: float = DEFAULT_CHI) -> np.ndarray:
    """Degree-dependent return rates.

    A device visiting ``j`` returns home at ``zeta_bar * <d^chi> / d_j^chi``,
    so with ``chi < 0`` poorly connected places are left more slowly.  The
    result is indexed like every other return matrix: ``zeta[j, i]`` for a
    device from home ``i`` visiting ``j``.  ``<d^chi>`` averages over
    non-isolated communities; isolated ones get ``zeta_bar``.
    """
    if not zeta_bar > 0:
        raise ValidationError("zeta_bar must be positive")
    if chi >= 0:
        warnings.warn(f"chi = {chi} >= 0: dwell no longer grows towards the periphery", stacklevel=2)
    d = out_degree(P).astype(float)
    n = len(d)
    connected = d > 0
    rate = np.full(n, float(zeta_bar))
    if connected.any():
        dchi = d[connected] ** chi
        rate[connected] = zeta_bar * dchi.mean() / dchi
    z = np.repeat(rate[:, None], n, axis=1)
    np.fill_diagonal(z, 0.0)
    return z


def neighborhood_size(ss, radius_m: float = DEFAULT_RADIUS_M) -> np.ndarray:
    """Expected neighbours of a device: density (per km^2) times the disc of radius ``radius_m``."""
    if not radius_m > 0:
        raise ValidationError("radius_m must be positive")
    rho = ss.rho_star if isinstance(ss, SteadyState) else np.asarray(ss, dtype=float)
    return rho * np.pi * (radius_m / 1000.0) ** 2


def beta_from_contact(c) -> np.ndarray:
    """Infection rate from the per-contact transmission success probability."""
    c = np.asarray(c, dtype=float)
    if np.any(c < 0) or np.any(c >= 1):
        raise ValidationError("contact success probability must lie in [0, 1)")
    return -np.log1p(-c)


def contact_parameters(ss: SteadyState, c, radius_m: float = DEFAULT_RADIUS_M) -> ContactParameters:
    c = np.broadcast_to(np.asarray(c, dtype=float), ss.rho_star.shape)
    return ContactParameters(neighborhood_size(ss, radius_m), beta_from_contact(c), float(radius_m))
