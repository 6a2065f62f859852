"""Message spreading over device-to-device contacts on a mobility network extracted from call records."""

__version__ = "0.1.0"

from .analysis import epidemic_summary, fit_power_law, graph_stats, kl_symmetrized  # noqa: E402
from .cdr import (MobilityParameters, TrajectorySet, extract_mobility, parse_cdr,  # noqa: E402
                  per_capita_mobility, read_cdr)
from .dynamics import (CompartmentState, ModelParameters, SeedSpec, integrate, seed_infection,  # noqa: E402
                       sir_latent_rhs, sir_rhs)
from .errors import (D2DSpreadError, IntegrationError, ParseError, StructuralError,  # noqa: E402
                     ValidationError)
from .mobility import mobility_rhs, steady_state  # noqa: E402
from .stochastic import IntegerState, run_ensemble, simulate  # noqa: E402
from .timeseries import STATES, TimeSeries  # noqa: E402

__all__ = [
    "CompartmentState", "D2DSpreadError", "IntegerState", "IntegrationError", "MobilityParameters",
    "ModelParameters", "ParseError", "STATES", "SeedSpec", "StructuralError", "TimeSeries", "TrajectorySet",
    "ValidationError", "epidemic_summary", "extract_mobility", "fit_power_law", "graph_stats", "integrate",
    "kl_symmetrized", "mobility_rhs", "parse_cdr", "per_capita_mobility", "read_cdr", "run_ensemble",
    "seed_infection", "simulate", "sir_latent_rhs", "sir_rhs", "steady_state",
]
