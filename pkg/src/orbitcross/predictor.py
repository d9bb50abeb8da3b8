"""Crossing-time forecasts for a sampled 1-parameter family of virtual
asteroids.

Each virtual asteroid (VA) carries the signed orbit distance of its
closest minimum, d_min(t).  A forecast assigns to each VA the epoch T(s)
at which |d_min| first enters the crossing band (default total width
2e-3 au), either from a linearization of the secular evolution at t0 or
from full secular propagation; the interval J = [min T, max T] collects
them, and crossing probability over a time interval is the weight sum of
the VAs whose T falls inside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .constants import DAYS_PER_YEAR
from .kepler import KeplerianElements
from .averaged import elements_to_Y
from .secular import SecularField, SecularState, rkg_step, propagate_secular
from .errors import NoCrossings

BAND_HALFWIDTH = 1e-3           # au (total band width 2e-3)
MIN_SLOPE = 1e-12               # au/yr, below this the ray never arrives


@dataclass(frozen=True)
class VirtualAsteroid:
    s: float                    # parameter along the sampled line
    elements: KeplerianElements
    weight: float               # p(s) * ds

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("weights must be nonnegative")


def validate_family(vas):
    total = sum(va.weight for va in vas)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 (got {total!r})")


VA_COLUMNS = ("s", "a", "e", "i", "node", "argp", "mean_anom", "weight")


def read_va_csv(path):
    """Family from a CSV with columns s,a,e,i,node,argp,mean_anom,weight."""
    vas = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(VA_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"VA file missing columns: {sorted(missing)}")
        for row in reader:
            el = KeplerianElements(a=float(row["a"]), e=float(row["e"]),
                                   i=float(row["i"]), node=float(row["node"]),
                                   argp=float(row["argp"]),
                                   mean_anom=float(row["mean_anom"]))
            vas.append(VirtualAsteroid(s=float(row["s"]), elements=el,
                                       weight=float(row["weight"])))
    return vas


@dataclass
class VAForecast:
    """Per-VA linearization data and band-entry epoch."""
    s: float
    dtilde0: float              # signed distance of the closest minimum (au)
    slope: float                # d(d_min)/dt at t0 (au/yr)
    t_cross: float | None       # band-entry epoch (days), None if no entry
    inside: bool                # already inside the band at t0


@dataclass
class CrossingForecast:
    per_va: list
    t1: float
    t2: float
    method: str                 # "linearized" | "secular"
    band_halfwidth: float
    t0: float

    def __post_init__(self):
        if self.t1 > self.t2:
            raise ValueError("forecast interval must have t1 <= t2")


def _closest_signed_minimum(field: SecularField, t, Y):
    best = None
    for name, vals in field.signed_minima(t, Y).items():
        for h, d in vals:
            if best is None or abs(d) < abs(best):
                best = d
    return best


def _va_field(va: VirtualAsteroid, provider, planets):
    a0, Y0 = elements_to_Y(va.elements)
    return a0, Y0, SecularField(a0, provider, planets)


def linearized_crossing_time(va: VirtualAsteroid, band_halfwidth, provider,
                             planets, t0=0.0, slope_step=DAYS_PER_YEAR,
                             target="band_entry"):
    """Band-entry epoch of the linearized d_min ray, or None.

    The slope is a centered difference of d_min over one short secular
    step in each direction.  target="zero" predicts the d_min = 0 root
    instead of the band entry.
    """
    a0, Y0, field = _va_field(va, provider, planets)
    d0 = _closest_signed_minimum(field, t0, Y0)
    if abs(d0) <= band_halfwidth:
        return float(t0)
    st = SecularState(Y=Y0, t=float(t0), a=a0)
    fwd = rkg_step(st, slope_step, field)
    bwd = rkg_step(st, -slope_step, field)
    dp = _closest_signed_minimum(field, fwd.t, fwd.Y)
    dm = _closest_signed_minimum(field, bwd.t, bwd.Y)
    slope = (dp - dm) / (2.0 * slope_step)          # au/day
    if abs(slope) * DAYS_PER_YEAR < MIN_SLOPE:
        return None
    if d0 * slope > 0:
        return None                                  # moving away
    gap = abs(d0) if target == "zero" else abs(d0) - band_halfwidth
    return float(t0 + gap / abs(slope))


def _linearized_forecast(va, band_halfwidth, provider, planets, t0,
                         slope_step=DAYS_PER_YEAR):
    a0, Y0, field = _va_field(va, provider, planets)
    d0 = _closest_signed_minimum(field, t0, Y0)
    st = SecularState(Y=Y0, t=float(t0), a=a0)
    fwd = rkg_step(st, slope_step, field)
    bwd = rkg_step(st, -slope_step, field)
    slope = ((_closest_signed_minimum(field, fwd.t, fwd.Y)
              - _closest_signed_minimum(field, bwd.t, bwd.Y))
             / (2.0 * slope_step)) * DAYS_PER_YEAR   # au/yr
    if abs(d0) <= band_halfwidth:
        return VAForecast(va.s, d0, slope, float(t0), True)
    if abs(slope) < MIN_SLOPE or d0 * slope > 0:
        return VAForecast(va.s, d0, slope, None, False)
    t_c = t0 + (abs(d0) - band_halfwidth) / (abs(slope) / DAYS_PER_YEAR)
    return VAForecast(va.s, d0, slope, float(t_c), False)


def secular_crossing_time(va: VirtualAsteroid, band_halfwidth, provider,
                          planets, t0=0.0, horizon=None, dt=DAYS_PER_YEAR,
                          samples_per_step=4):
    """First band-entry epoch along the full secular evolution, or None."""
    if horizon is None:
        raise ValueError("secular method requires a horizon")
    a0, Y0, field = _va_field(va, provider, planets)
    d0 = _closest_signed_minimum(field, t0, Y0)
    if abs(d0) <= band_halfwidth:
        return float(t0)
    traj = propagate_secular(Y0, t0, t0 + horizon, a0, provider, planets,
                             dt=dt)
    prev_t, prev_d = float(t0), d0
    for seg in traj.segments:
        for st in seg.steps:
            locs = st.t0 + (np.arange(1, samples_per_step + 1)
                            / samples_per_step) * st.h
            for t in locs:
                d = _closest_signed_minimum(field, t, traj.y_at(t))
                if abs(d) <= band_halfwidth:
                    # linear sub-sample refinement of the entry epoch
                    frac = ((abs(prev_d) - band_halfwidth)
                            / max(abs(prev_d) - abs(d), 1e-300))
                    return float(prev_t + frac * (t - prev_t))
                prev_t, prev_d = float(t), d
    return None


def crossing_interval(vas, band_halfwidth, provider, planets,
                      method="linearized", t0=0.0, horizon=None,
                      dt=DAYS_PER_YEAR) -> CrossingForecast:
    """Interval J = [min, max] of band-entry epochs over the family."""
    validate_family(vas)
    per_va = []
    for va in vas:
        if method == "linearized":
            fc = _linearized_forecast(va, band_halfwidth, provider, planets,
                                      t0)
        elif method == "secular":
            fc = _linearized_forecast(va, band_halfwidth, provider, planets,
                                      t0)
            fc.t_cross = secular_crossing_time(va, band_halfwidth, provider,
                                               planets, t0, horizon, dt)
        else:
            raise ValueError(f"unknown method {method!r}")
        if horizon is not None and fc.t_cross is not None \
                and fc.t_cross > t0 + horizon:
            fc.t_cross = None
        per_va.append(fc)
    times = [fc.t_cross for fc in per_va if fc.t_cross is not None]
    if not times:
        raise NoCrossings("no virtual asteroid reaches the crossing band")
    return CrossingForecast(per_va=per_va, t1=min(times), t2=max(times),
                            method=method, band_halfwidth=band_halfwidth,
                            t0=float(t0))


def crossing_probability(vas, interval, provider=None, planets=None,
                         method="linearized", band_halfwidth=BAND_HALFWIDTH,
                         t0=0.0, horizon=None, forecast=None):
    """P(interval) = sum of weights of VAs whose band-entry epoch T(s)
    lies inside the closed interval."""
    validate_family(vas)
    lo, hi = interval
    if lo > hi:
        raise ValueError("interval must have lo <= hi")
    if forecast is None:
        try:
            forecast = crossing_interval(vas, band_halfwidth, provider,
                                         planets, method=method, t0=t0,
                                         horizon=horizon)
        except NoCrossings:
            return 0.0
    p = 0.0
    for va, fc in zip(vas, forecast.per_va):
        if fc.t_cross is not None and lo <= fc.t_cross <= hi:
            p += va.weight
    return min(1.0, p)
