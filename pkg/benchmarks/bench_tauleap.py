"""Wall time per tau-leap for the compiled and pure-Python kernels.

    python3 benchmarks/bench_tauleap.py [--communities 20 60 255] [--leaps 50]

Both kernels run the same leaps from the same state and seed; the script
also checks that they end in the same state.
"""
import argparse
import time

import numpy as np

from d2dspread.cdr import MobilityParameters
from d2dspread.dynamics import ModelParameters, SeedSpec, seed_infection
from d2dspread.mobility import neighborhood_size, steady_state
from d2dspread.stochastic import IntegerState, available_backends, simulate


def world(n, seed=0, density=0.15):
    rng = np.random.default_rng(seed)
    nu = rng.random((n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(nu, 0.0)
    nu[np.arange(n), (np.arange(n) + 1) % n] += 0.1
    nu /= nu.sum(axis=1, keepdims=True)
    zeta = np.where(nu.T > 0, rng.uniform(1 / 1440, 1 / 360, (n, n)), 0.0)
    m = MobilityParameters(nu, rng.uniform(1 / 8640, 1 / 1440, n), zeta)
    census = np.rint(rng.pareto(1.2, n) * 2e4 + 5e3)
    ss = steady_state(census, m, rng.uniform(50, 2000, n))
    k = neighborhood_size(ss)
    p = ModelParameters(np.full(n, 0.01), np.full(n, 1 / 120), k, m, ss.N_star_loc)
    return IntegerState.from_compartments(seed_infection(ss, SeedSpec(0, 0.01))), p


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--communities", type=int, nargs="+", default=[20, 60, 255])
    ap.add_argument("--leaps", type=int, default=50)
    args = ap.parse_args()
    backends = available_backends()
    print(f"{'C':>5} " + " ".join(f"{b + ' ms/leap':>18}" for b in backends) + f" {'speedup':>8} same")
    for n in args.communities:
        st, p = world(n)
        ms, finals = {}, {}
        for b in backends:
            t0 = time.perf_counter()
            ts = simulate(st, p, 1.0, float(args.leaps), float(args.leaps), seed=1, backend=b)
            ms[b] = 1e3 * (time.perf_counter() - t0) / args.leaps
            finals[b] = ts.metadata["final_state"]
        same = all(np.array_equal(finals[backends[0]], f) for f in finals.values())
        speed = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
        print(f"{n:>5} " + " ".join(f"{ms[b]:>18.2f}" for b in backends) + f" {speed:>8.1f} {same}")


if __name__ == "__main__":
    main()
