"""Command-line entry point: ``d2dspread {synth,ingest,steady-state,run,analyze}``.

Every command writes into ``--out`` (default: ``$D2DSPREAD_OUT`` or
``./d2dspread-out``) and finishes with ``manifest.json`` listing parameters,
seeds and SHA-256 hashes of the files it produced.  Files are staged and only
moved into place when the command succeeds; on failure ``error.json`` is
written instead.  Exit status: 0 success, 1 invalid input, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import math
import shutil
import sys
import tempfile
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import cdr as cdr_mod
from . import io
from .analysis import (cumulative_fraction_curve, epidemic_summary, fit_power_law, graph_stats,
                       infected_fraction_curve, kl_symmetrized)
from .dynamics import integrate, sir_latent_rhs, sir_rhs
from .errors import D2DSpreadError, ParseError, ValidationError
from .scenario import ScenarioConfig, load_config, load_world, model_parameters, initial_state, resolve_origin
from .stochastic import IntegerState, run_ensemble
from .synth import SynthConfig, generate_cdr, generate_world, write_ground_truth

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class _Stage:
    """Collects output files in a scratch directory, then publishes them atomically per file."""

    def __init__(self, out_dir: Path):
        self.out = out_dir
        self.out.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.out))
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        self.files.append(name)
        p = self.tmp / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def publish(self, command: str, params: dict, seeds=None) -> dict:
        manifest = {
            "command": command,
            "version": __version__,
            "parameters": params,
            "seeds": [] if seeds is None else [int(s) for s in seeds],
            "files": {name: io.sha256_file(self.tmp / name) for name in sorted(self.files)},
        }
        io.write_json(self.tmp / "manifest.json", manifest)
        for name in self.files + ["manifest.json"]:
            dest = self.out / name
            dest.parent.mkdir(parents=True, exist_ok=True)
            (self.tmp / name).replace(dest)
        self.discard()
        err = self.out / "error.json"
        if err.exists():
            err.unlink()
        return manifest

    def discard(self):
        shutil.rmtree(self.tmp, ignore_errors=True)


def _jump_lengths_km(t, comm) -> np.ndarray:
    """Great-circle length of every observed move between community centroids."""
    src, dst, _ = cdr_mod._transition_pairs(t)
    lat = np.radians(comm.lat)
    lon = np.radians(comm.lon)
    a = (np.sin((lat[dst] - lat[src]) / 2) ** 2
         + np.cos(lat[src]) * np.cos(lat[dst]) * np.sin((lon[dst] - lon[src]) / 2) ** 2)
    return 2 * 6371.0 * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def cmd_synth(sc: ScenarioConfig, sy: SynthConfig, stage: _Stage) -> dict:
    sy.validate()
    world = generate_world(sy)
    corpus, truth = generate_cdr(world, sy)
    world.write_communities(stage.path("communities.csv"))
    corpus.write(stage.path("cdr.csv"))
    write_ground_truth(stage.path("ground_truth.json"), truth, world, sy)
    return {"params": asdict(sy), "seeds": [sy.seed]}


def cmd_ingest(sc: ScenarioConfig, sy, stage: _Stage) -> dict:
    w = load_world(sc)
    io.write_mobility(stage.tmp, w.mobility)
    stage.files += ["nu.csv", "sigma.csv", "zeta.csv"]
    io.write_matrix(stage.path("transitions.csv"), w.counts.P)
    io.write_matrix(stage.path("returns.csv"), w.counts.P_return)
    d = cdr_mod.compute_density(w.trajectories, w.communities.area_km2, sc.slot_minutes)
    io.write_density(stage.path("density.csv"), d)
    with open(stage.path("home.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("user_id,home_community_id\n")
        for u, h in zip(w.trajectories.user_ids, w.home.tolist()):
            fh.write(f"{u},{h}\n")
    return {"params": sc.public_dict()}


def _steady_outputs(w, sc, stage):
    ss = w.steady
    io.write_matrix(stage.path("steady_state.csv"), ss.N_star)
    k = model_parameters(w, sc).k_mean
    with open(stage.path("occupancy.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("community_id,census,occupancy,density_per_km2,k_mean,beta\n")
        beta = -math.log1p(-sc.c)
        for c in range(w.n):
            fh.write(",".join([str(c), io.fmt(int(w.communities.population[c])), io.fmt(ss.N_star_loc[c]),
                               io.fmt(ss.rho_star[c]), io.fmt(k[c]), io.fmt(beta)]) + "\n")
    kl = kl_symmetrized(w.communities.population, ss.N_star_loc)
    io.write_json(stage.path("steady_state.json"), {"kl_census_vs_occupancy": kl,
                                                   "at_home_fraction": float(np.trace(ss.N_star) / ss.N_star.sum())})
    return kl


def cmd_steady_state(sc: ScenarioConfig, sy, stage: _Stage) -> dict:
    w = load_world(sc)
    _steady_outputs(w, sc, stage)
    return {"params": sc.public_dict()}


def _run_engine(sc: ScenarioConfig, p, state):
    if sc.engine == "deterministic":
        rhs = sir_latent_rhs if sc.mode == "sir_latent" else sir_rhs
        ts = integrate(rhs, state, dt=sc.dt, t_end=sc.horizon_min, sample_every=sc.sample_every, params=p)
        return ts, None, []
    ens = run_ensemble(IntegerState.from_compartments(state, sc.seed), p, sc.tau, sc.horizon_min,
                       sc.sample_every, sc.replicas, sc.seed, sc.workers, sc.backend or None)
    return ens.mean_series(), ens, ens.seeds


def cmd_run(sc: ScenarioConfig, sy, stage: _Stage) -> dict:
    w = load_world(sc)
    origin = resolve_origin(sc.origin, w)
    p = model_parameters(w, sc)
    state = initial_state(w, sc, origin)
    ts, ens, seeds = _run_engine(sc, p, state)
    io.write_timeseries(stage.tmp / "timeseries", ts)
    stage.files += ["timeseries_communities.csv", "timeseries_global.csv"]
    extra = {}
    if ens is not None:
        g = np.stack([r.global_counts for r in ens.replicas])
        io.write_ensemble(stage.path("ensemble_global.csv"), ens.times, g.mean(axis=0), g.std(axis=0))
        extra = {"attempts": [r.metadata["attempts"] for r in ens.replicas],
                 "halvings": [r.metadata["halvings"] for r in ens.replicas],
                 "backend": ens.replicas[0].metadata["backend"]}
        peaks = [float(r.times[int(np.argmax(r.global_counts[:, 1]))]) for r in ens.replicas]
        extra["replica_peak_times_min"] = peaks
        extra["median_peak_time_min"] = float(np.median(peaks))
    else:
        extra = {"clamp_events": ts.metadata.get("clamp_events", 0), "clamp_mass": ts.metadata.get("clamp_mass", 0.0)}
    summary = epidemic_summary(ts, origin, sc.threshold)
    doc = {"origin": origin, **summary.to_dict(), **extra,
           "first_infection_times_min": [None if not np.isfinite(v) else float(v)
                                         for v in summary.first_infection_times]}
    io.write_json(stage.path("summary.json"), doc)
    io.write_curve(stage.path("curve_infected.csv"), infected_fraction_curve(ts))
    io.write_curve(stage.path("curve_cumulative.csv"), cumulative_fraction_curve(ts))
    return {"params": {**sc.public_dict(), "origin_index": origin}, "seeds": seeds}


def cmd_analyze(sc: ScenarioConfig, sy, stage: _Stage) -> dict:
    w = load_world(sc)
    gs = graph_stats(w.counts.P, w.communities.population)
    with open(stage.path("graph_stats.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write("rank,community_id,name,in_flow_share,in_flow_per_capita,betweenness,out_degree,in_degree\n")
        for r, c in enumerate(gs.ranking, start=1):
            fh.write(",".join([str(r), str(c), w.communities.names[c], io.fmt(gs.in_flow_share[c]),
                               io.fmt(gs.in_flow_per_capita[c]), io.fmt(gs.betweenness[c]),
                               str(int(gs.out_degree[c])), str(int(gs.in_degree[c]))]) + "\n")
    lengths = _jump_lengths_km(w.trajectories, w.communities)
    try:
        fit = fit_power_law(lengths)
        fit_doc = asdict(fit)
    except ValidationError as exc:
        fit_doc = {"error": str(exc)}
    kl = kl_symmetrized(w.communities.population, w.steady.N_star_loc)
    io.write_json(stage.path("analysis.json"), {
        "kl_census_vs_occupancy": kl,
        "jump_length_fit": fit_doc,
        "degree_distribution": {str(k): v for k, v in gs.degree_distribution().items()},
        "top_by_in_flow": gs.ranking[:10],
        "top_by_betweenness": [int(i) for i in np.argsort(-gs.betweenness, kind="stable")[:10]],
    })
    return {"params": sc.public_dict()}


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "steady-state": cmd_steady_state,
            "run": cmd_run, "analyze": cmd_analyze}


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="d2dspread", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value configuration file")
        sp.add_argument("--seed", help="unsigned 64-bit seed (overrides the file)")
        sp.add_argument("--out", help="output directory (default $D2DSPREAD_OUT or ./d2dspread-out)")
        sp.add_argument("--cdr", help="call-record CSV")
        sp.add_argument("--communities", help="communities CSV")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any configuration key")
    return ap


def _error_doc(exc) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ParseError) and exc.line is not None:
        doc["line"] = exc.line
    msg = str(exc)
    if msg.startswith("invalid ") or msg.startswith("missing "):
        doc["field"] = msg.split()[1].rstrip(":")
    return doc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = None
    stage = None
    try:
        overrides = _parse_set(args.set)
        for key in ("seed", "cdr", "communities"):
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        if args.out is not None:
            overrides["out_dir"] = args.out
        sc, sy = load_config(args.config, overrides)
        out_dir = Path(sc.out_dir)
        if args.command != "synth":
            sc.validate()
        stage = _Stage(out_dir)
        res = COMMANDS[args.command](sc, sy, stage)
        manifest = stage.publish(args.command, res.get("params", {}), res.get("seeds"))
        print(json.dumps({"status": "ok", "command": args.command, "out": str(out_dir),
                          "files": sorted(manifest["files"])}))
        return EXIT_OK
    except (ValidationError, ValueError) as exc:
        code, doc = EXIT_VALIDATION, _error_doc(exc)
    except (D2DSpreadError, RuntimeError, OSError, MemoryError) as exc:
        code, doc = EXIT_RUNTIME, _error_doc(exc)
        doc["traceback"] = traceback.format_exc(limit=5)
    if stage is not None:
        stage.discard()
    doc["status"] = "error"
    doc["exit_code"] = code
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            io.write_json(out_dir / "error.json", doc)
        except OSError:
            pass
    print(json.dumps(doc), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
