"""Sampled compartment trajectories shared by the deterministic and stochastic engines."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

STATES = ("S", "I", "R", "E_S", "E_I", "E_R")
S, I, R, ES, EI, ER = range(6)


@dataclass
class TimeSeries:
    """Compartment counts on a sampling grid.

    ``per_community[k, s, j]`` is the number of devices in state ``s`` located in
    community ``j`` at ``times[k]`` (summed over home communities).
    """

    times: np.ndarray
    per_community: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.per_community = np.asarray(self.per_community, dtype=float)
        if self.per_community.ndim != 3 or self.per_community.shape[1] != len(STATES):
            raise ValueError("per_community must have shape (n_samples, 6, n_communities)")
        if len(self.times) != self.per_community.shape[0]:
            raise ValueError("times and per_community disagree on sample count")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")

    @property
    def global_counts(self) -> np.ndarray:
        """(n_samples, 6) totals over all communities."""
        return self.per_community.sum(axis=2)

    @property
    def n_communities(self) -> int:
        return self.per_community.shape[2]

    def state(self, name: str) -> np.ndarray:
        return self.per_community[:, STATES.index(name), :]

    def total_population(self) -> float:
        return float(self.per_community[0].sum())
