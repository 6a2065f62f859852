"""CSV/JSON readers and writers with fixed, locale-independent number formatting."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cdr import DensityMatrix, MobilityParameters
from .errors import ParseError, ValidationError
from .timeseries import STATES, TimeSeries

COMMUNITIES_HEADER = ("community_id", "name", "lat", "lon", "area_km2", "population")


def fmt(x) -> str:
    """Shortest round-tripping text for a number (ints stay ints)."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _writer(path):
    fh = open(path, "w", encoding="utf-8", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def write_vector(path, values, name: str) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["community_id", name])
        for c, v in enumerate(np.asarray(values).tolist()):
            w.writerow([c, fmt(v)])


def read_vector(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) for r in rows])


def write_matrix(path, M, row_label: str = "community_id", row_keys=None) -> None:
    """Matrix with a header of column community ids and one row per ``row_keys`` entry."""
    M = np.asarray(M)
    row_keys = range(M.shape[0]) if row_keys is None else row_keys
    fh, w = _writer(path)
    with fh:
        w.writerow([row_label] + [str(c) for c in range(M.shape[1])])
        for key, row in zip(row_keys, M.tolist()):
            w.writerow([fmt(key)] + [fmt(v) for v in row])


def read_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows])


def write_density(path, d: DensityMatrix) -> None:
    write_matrix(path, d.rho, "slot_start_min", d.slot_times)


def write_mobility(out_dir, m: MobilityParameters) -> dict:
    out = Path(out_dir)
    files = {"nu": out / "nu.csv", "sigma": out / "sigma.csv", "zeta": out / "zeta.csv"}
    write_matrix(files["nu"], m.nu)
    write_vector(files["sigma"], m.sigma, "sigma_per_min")
    write_matrix(files["zeta"], m.zeta)
    return files


def read_mobility(in_dir) -> MobilityParameters:
    d = Path(in_dir)
    nu = read_matrix(d / "nu.csv")
    return MobilityParameters(nu, read_vector(d / "sigma.csv"), read_matrix(d / "zeta.csv"), nu.sum(axis=1) == 0)


@dataclass
class Communities:
    names: list
    lat: np.ndarray
    lon: np.ndarray
    area_km2: np.ndarray
    population: np.ndarray

    @property
    def n(self) -> int:
        return len(self.names)


def read_communities(path) -> Communities:
    """Communities table; ids must be exactly ``0..C-1`` (any order)."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(h.strip() for h in rows[0]) != COMMUNITIES_HEADER:
        raise ParseError(f"expected header {','.join(COMMUNITIES_HEADER)}", line=1)
    parsed = []
    for ln, r in enumerate(rows[1:], start=2):
        if len(r) != len(COMMUNITIES_HEADER):
            raise ParseError(f"expected {len(COMMUNITIES_HEADER)} fields, got {len(r)}", line=ln)
        try:
            parsed.append((int(r[0]), r[1], float(r[2]), float(r[3]), float(r[4]), int(r[5])))
        except ValueError as exc:
            raise ParseError(str(exc), line=ln) from None
    parsed.sort()
    ids = [p[0] for p in parsed]
    if ids != list(range(len(ids))):
        raise ValidationError("community ids must be 0..C-1 without gaps or duplicates")
    area = np.array([p[4] for p in parsed])
    pop = np.array([p[5] for p in parsed], dtype=np.int64)
    if np.any(area <= 0):
        raise ValidationError("areas must be strictly positive")
    if np.any(pop < 0):
        raise ValidationError("populations must be non-negative")
    return Communities([p[1] for p in parsed], np.array([p[2] for p in parsed]),
                       np.array([p[3] for p in parsed]), area, pop)


def write_timeseries(prefix, ts: TimeSeries) -> tuple:
    """``<prefix>_communities.csv`` (long format) and ``<prefix>_global.csv``."""
    prefix = str(prefix)
    per, glob = Path(prefix + "_communities.csv"), Path(prefix + "_global.csv")
    fh, w = _writer(per)
    with fh:
        w.writerow(["t_min", "community_id", *STATES])
        for t, block in zip(ts.times.tolist(), ts.per_community):
            for c in range(ts.n_communities):
                w.writerow([fmt(t), c, *(fmt(v) for v in block[:, c].tolist())])
    fh, w = _writer(glob)
    with fh:
        w.writerow(["t_min", *STATES])
        for t, row in zip(ts.times.tolist(), ts.global_counts.tolist()):
            w.writerow([fmt(t), *(fmt(v) for v in row)])
    return per, glob


def read_global_timeseries(path) -> tuple:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    a = np.array([[float(v) for v in r] for r in rows])
    return a[:, 0], a[:, 1:]


def write_ensemble(path, times, mean_global, std_global) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(["t_min"] + [f"{s}_{k}" for s in STATES for k in ("mean", "std")])
        for t, m, s in zip(np.asarray(times).tolist(), np.asarray(mean_global).tolist(),
                           np.asarray(std_global).tolist()):
            w.writerow([fmt(t)] + [fmt(v) for pair in zip(m, s) for v in pair])


def write_curve(path, curve, x_label: str = "days", y_label: str = "fraction") -> None:
    """Two whitespace-free comma columns with a gnuplot comment header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {x_label},{y_label}\n")
        for x, y in np.asarray(curve).tolist():
            fh.write(f"{fmt(x)},{fmt(y)}\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
