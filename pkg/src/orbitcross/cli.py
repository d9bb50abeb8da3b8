"""Command-line surface: configuration ingestion and CSV emission.

Commands: moid, propagate-secular, propagate-full, compare,
crossing-times.  All take a JSON config file; a manifest recording the
package version, the config hash, and the tolerances is written next to
every output set.

Exit codes: 0 success, 1 parse/configuration error, 2 degenerate
geometry, 3 tangent crossing, 4 no crossings.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .constants import DAYS_PER_YEAR, PLANET_MU, DEFAULT_PLANET_ORDER
from .kepler import KeplerianElements, kep_to_equinoctial
from .distance import (TwoOrbitConfig, find_critical_points, minima,
                       check_degenerate, signed_distance, crossing_matrix)
from .ephemeris import EphemerisProvider, PlanetSpec
from .averaged import elements_to_Y
from .secular import propagate_secular, secular_distance_series
from .fullmodel import FullState, propagate_full, phase_ensemble
from .predictor import (read_va_csv, crossing_interval, crossing_probability,
                        BAND_HALFWIDTH)
from .errors import (DegenerateConfiguration, TangentOrbits, TangentCrossing,
                     NoCrossings)

EXIT_PARSE = 1
EXIT_DEGENERATE = 2
EXIT_TANGENT = 3
EXIT_NO_CROSSINGS = 4


# -- configuration -----------------------------------------------------

ELEMENT_KEYS = ("a", "e", "i", "node", "argp")


def _elements_from(cfg, key):
    try:
        d = cfg[key]
        return KeplerianElements(a=float(d["a"]), e=float(d["e"]),
                                 i=float(d["i"]), node=float(d["node"]),
                                 argp=float(d["argp"]),
                                 mean_anom=float(d.get("mean_anom", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"config section {key!r}: {exc}") from exc


def _provider_from(cfg):
    eph = cfg.get("ephemeris", {"mode": "fixed_two_body"})
    mode = eph.get("mode", "fixed_two_body")
    if mode == "table":
        return EphemerisProvider.from_csv(eph["path"])
    if mode != "fixed_two_body":
        raise ValueError(f"unknown ephemeris mode {mode!r}")
    elements = None
    if "planets" in eph:
        elements = {name: _elements_from(eph["planets"], name)
                    for name in eph["planets"]}
    return EphemerisProvider.fixed_two_body(elements,
                                            epoch=float(eph.get("epoch", 0.0)))


def _planets_from(cfg):
    entries = cfg.get("planets", list(DEFAULT_PLANET_ORDER))
    specs = []
    for entry in entries:
        if isinstance(entry, str):
            specs.append(PlanetSpec(entry, PLANET_MU[entry]))
        else:
            specs.append(PlanetSpec(entry["name"],
                                    float(entry.get("mu",
                                          PLANET_MU.get(entry["name"], 0.0)))))
    return specs


def load_config(path, args):
    raw = Path(path).read_bytes()
    cfg = json.loads(raw)
    if not isinstance(cfg, dict):
        raise ValueError("config must be a JSON object")
    cfg["_hash"] = hashlib.sha256(raw).hexdigest()
    if args.out is not None:
        cfg["out"] = args.out
    if args.tol is not None:
        cfg["tol"] = args.tol
    if args.horizon_years is not None:
        cfg["horizon_years"] = args.horizon_years
    if args.band_au is not None:
        cfg["band_au"] = args.band_au
    for key in ("tol",):
        if key in cfg and float(cfg[key]) <= 0:
            raise ValueError(f"{key} must be positive")
    return cfg


def _outdir(cfg):
    out = Path(cfg.get("out", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(outdir, cfg, command, extra=None):
    manifest = {
        "version": __version__,
        "command": command,
        "config_sha256": cfg.get("_hash"),
        "tolerances": {
            "tol": cfg.get("tol"),
            "band_au": cfg.get("band_au"),
        },
    }
    if extra:
        manifest.update(extra)
    path = Path(outdir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.16e}" if isinstance(v, float) else v
                        for v in row])


# -- commands ----------------------------------------------------------

def cmd_moid(cfg):
    orbit1 = _elements_from(cfg, "asteroid")
    orbit2 = _elements_from(cfg, "planet")
    config = TwoOrbitConfig(asteroid=orbit1, planet=orbit2)
    check_degenerate(config)
    points = find_critical_points(config)
    rows = []
    for p in points:
        dtilde, detA, tangent = math.nan, math.nan, False
        if p.kind == "minimum":
            sd = signed_distance(config, p)
            dtilde = sd.value
            tangent = sd.degenerate
            detA = crossing_matrix(config, p).det
        rows.append((p.index, p.kind, float(p.V.l), float(p.V.lp),
                     p.d, dtilde, detA, int(tangent)))
    outdir = _outdir(cfg)
    _write_csv(outdir / "critical_points.csv",
               ("index", "kind", "l", "lp", "d", "dtilde", "detA", "tangent"),
               rows)
    dmin = min(p.d for p in minima(points))
    print(f"critical points: {len(points)}  minima: {len(minima(points))}")
    print(f"orbit distance (MOID): {dmin:.12e} au")
    for r in rows:
        print(",".join(str(v) for v in r))
    write_manifest(outdir, cfg, "moid")
    return 0


def _secular_trajectory(cfg, provider, planets):
    ast = _elements_from(cfg, "asteroid")
    a0, Y0 = elements_to_Y(ast)
    t0 = float(cfg.get("t0_mjd", 0.0))
    horizon = float(cfg.get("horizon_years", 100.0)) * DAYS_PER_YEAR
    dt = float(cfg.get("dt_years", 1.0)) * DAYS_PER_YEAR
    traj = propagate_secular(Y0, t0, t0 + horizon, a0, provider, planets,
                             dt=dt, s=int(cfg.get("stages", 2)))
    return traj, t0, horizon


def _secular_rows(traj, provider, planets, samples_per_step=1):
    series = secular_distance_series(traj, provider, planets,
                                     samples_per_step=samples_per_step)
    rows = []
    for t, dmin in zip(series.times, series.dmin_signed):
        st = traj.state_at(t)
        el = st.elements()
        eq = kep_to_equinoctial(el)
        rows.append((float(t), st.Y[0], st.Y[1], st.Y[2], st.Y[3],
                     eq.h, eq.k, eq.p, eq.q, float(dmin)))
    return rows


def cmd_propagate_secular(cfg):
    provider = _provider_from(cfg)
    planets = _planets_from(cfg)
    outdir = _outdir(cfg)
    traj, t0, horizon = _secular_trajectory(cfg, provider, planets)
    rows = _secular_rows(traj, provider, planets,
                         samples_per_step=int(cfg.get("samples_per_step", 1)))
    _write_csv(outdir / "secular.csv",
               ("t_mjd", "G", "Z", "g", "z", "h", "k", "p", "q",
                "dmin_signed"), rows)
    _write_csv(outdir / "events.csv",
               ("t_mjd", "planet", "h_index", "jump_G", "jump_Z",
                "jump_g", "jump_z"),
               [(ev.t_c, ev.planet, ev.h, *map(float, ev.applied_jump))
                for ev in traj.events])
    write_manifest(outdir, cfg, "propagate-secular",
                   {"events": len(traj.events)})
    if cfg.get("plot"):
        from .plots import plot_secular
        plot_secular(outdir / "secular.csv", outdir / "events.csv",
                     outdir / "secular.png")
    print(f"wrote {outdir/'secular.csv'} ({len(rows)} rows, "
          f"{len(traj.events)} events)")
    return 0


def cmd_propagate_full(cfg):
    provider = _provider_from(cfg)
    planets = _planets_from(cfg)
    ast = _elements_from(cfg, "asteroid")
    t0 = float(cfg.get("t0_mjd", 0.0))
    horizon = float(cfg.get("horizon_years", 100.0)) * DAYS_PER_YEAR
    tol = float(cfg.get("tol", 1e-11))
    traj = propagate_full(FullState.from_elements(ast, t0), t0, t0 + horizon,
                          planets, provider, tol=tol)
    epochs = np.linspace(t0, t0 + horizon, int(cfg.get("n_epochs", 201)))
    rows = []
    for t in epochs:
        eq = kep_to_equinoctial(traj.elements_at(t))
        rows.append((float(t), eq.h, eq.k, eq.p, eq.q,
                     int(traj.close_approach)))
    outdir = _outdir(cfg)
    _write_csv(outdir / "full.csv",
               ("t_mjd", "h", "k", "p", "q", "mean_flag"), rows)
    write_manifest(outdir, cfg, "propagate-full",
                   {"close_approach": traj.close_approach,
                    "min_planet_distance": traj.min_planet_distance})
    if cfg.get("plot"):
        from .plots import plot_equinoctial
        plot_equinoctial(outdir / "full.csv", outdir / "full.png")
    print(f"wrote {outdir/'full.csv'} ({len(rows)} rows)")
    return 0


def cmd_compare(cfg):
    provider = _provider_from(cfg)
    planets = _planets_from(cfg)
    ast = _elements_from(cfg, "asteroid")
    t0 = float(cfg.get("t0_mjd", 0.0))
    horizon = float(cfg.get("horizon_years", 100.0)) * DAYS_PER_YEAR
    n_phases = int(cfg.get("n_phases", 4))
    phases = [2.0 * math.pi * k / n_phases for k in range(n_phases)]
    stats = phase_ensemble(ast, phases, t0 + horizon, planets, provider,
                           t0=t0, n_epochs=int(cfg.get("n_epochs", 21)),
                           tol=float(cfg.get("tol", 1e-11)))
    traj, _, _ = _secular_trajectory(cfg, provider, planets)
    rows = []
    for j, t in enumerate(stats.epochs):
        eq = kep_to_equinoctial(traj.state_at(t).elements())
        sec = (eq.h, eq.k, eq.p, eq.q)
        rows.append((float(t), *sec, *map(float, stats.mean[j]),
                     *map(float, stats.std[j])))
    outdir = _outdir(cfg)
    header = (("t_mjd",) + tuple(f"sec_{c}" for c in "hkpq")
              + tuple(f"mean_{c}" for c in "hkpq")
              + tuple(f"std_{c}" for c in "hkpq"))
    _write_csv(outdir / "compare.csv", header, rows)
    for run in stats.runs:
        if run.ok:
            _write_csv(outdir / f"run_{run.phase_asteroid:.3f}"
                                f"_{run.phase_planets:.3f}.csv",
                       ("t_mjd", "h", "k", "p", "q", "mean_flag"),
                       [(float(t), *map(float, row), int(run.close_approach))
                        for t, row in zip(stats.epochs, run.series)])
    write_manifest(outdir, cfg, "compare",
                   {"complete": stats.complete,
                    "n_runs": len(stats.runs),
                    "n_completed": stats.n_completed})
    if cfg.get("plot"):
        from .plots import plot_compare
        plot_compare(outdir / "compare.csv", outdir / "compare.png")
    print(f"wrote {outdir/'compare.csv'} ({len(rows)} rows, "
          f"{stats.n_completed}/{len(stats.runs)} runs)")
    return 0


def cmd_crossing_times(cfg):
    provider = _provider_from(cfg)
    planets = _planets_from(cfg)
    vas = read_va_csv(cfg["va_file"])
    band = float(cfg.get("band_au", 2.0 * BAND_HALFWIDTH)) / 2.0
    t0 = float(cfg.get("t0_mjd", 0.0))
    horizon = float(cfg.get("horizon_years", 100.0)) * DAYS_PER_YEAR
    lin = crossing_interval(vas, band, provider, planets,
                            method="linearized", t0=t0, horizon=horizon)
    rows = [(va.s, fc.dtilde0, fc.slope,
             math.nan if fc.t_cross is None else fc.t_cross,
             int(fc.inside), va.weight)
            for va, fc in zip(vas, lin.per_va)]
    outdir = _outdir(cfg)
    _write_csv(outdir / "forecast.csv",
               ("s", "dtilde0", "slope_au_per_yr", "t_cross_mjd", "inside",
                "weight"), rows)
    summary = {"J_linearized_mjd": [lin.t1, lin.t2],
               "band_halfwidth_au": band}
    if cfg.get("secular_comparison", False):
        sec = crossing_interval(vas, band, provider, planets,
                                method="secular", t0=t0, horizon=horizon,
                                dt=float(cfg.get("dt_years", 1.0))
                                * DAYS_PER_YEAR)
        summary["J_secular_mjd"] = [sec.t1, sec.t2]
    probs = []
    for lo, hi in cfg.get("intervals", []):
        p = crossing_probability(vas, (float(lo), float(hi)), forecast=lin)
        probs.append({"interval_mjd": [lo, hi], "probability": p})
    summary["probabilities"] = probs
    (outdir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(outdir, cfg, "crossing-times")
    print(f"J = [{lin.t1:.3f}, {lin.t2:.3f}] mjd "
          f"({len(rows)} virtual asteroids)")
    return 0


COMMANDS = {
    "moid": cmd_moid,
    "propagate-secular": cmd_propagate_secular,
    "propagate-full": cmd_propagate_full,
    "compare": cmd_compare,
    "crossing-times": cmd_crossing_times,
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="orbitcross",
        description="Orbit-distance geometry and secular propagation "
                    "for planet-crossing asteroids")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--out", help="output directory (overrides config)")
    ap.add_argument("--tol", type=float, help="integrator tolerance")
    ap.add_argument("--horizon-years", type=float, dest="horizon_years")
    ap.add_argument("--band-au", type=float, dest="band_au",
                    help="total crossing-band width in au")
    ap.add_argument("--plot", action="store_true",
                    help="also render summary figures as PNG")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.plot:
        cfg["plot"] = True
    try:
        return COMMANDS[args.command](cfg)
    except (DegenerateConfiguration, TangentOrbits) as exc:
        print(f"degenerate configuration: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except TangentCrossing as exc:
        print(f"tangent crossing: {exc}", file=sys.stderr)
        return EXIT_TANGENT
    except NoCrossings as exc:
        print(f"no crossings: {exc}", file=sys.stderr)
        return EXIT_NO_CROSSINGS
    except (KeyError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
