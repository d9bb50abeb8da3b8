"""Planetary element providers.

Two modes: `fixed_two_body` (constant orbital geometry, mean anomaly
advancing at the two-body rate) and `table` (per-planet epoch tables with
linear interpolation, angles unwrapped at load so interpolation never
crosses a branch cut).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .constants import PLANET_ELEMENTS, PLANET_MU, mean_motion
from .kepler import KeplerianElements, wrap_angle

TABLE_COLUMNS = ("t_mjd", "planet", "a", "e", "i", "node", "argp", "mean_anom")


@dataclass(frozen=True)
class PlanetSpec:
    """Name and mass ratio of one perturbing planet."""
    name: str
    mu: float

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError("mass ratio must be non-negative")


def default_planets(names=None, mu_overrides=None):
    names = names if names is not None else list(PLANET_MU)
    mu_overrides = mu_overrides or {}
    return [PlanetSpec(name=n, mu=float(mu_overrides.get(n, PLANET_MU[n])))
            for n in names]


@dataclass
class _Table:
    epochs: np.ndarray          # MJD, strictly increasing
    values: np.ndarray          # (n, 6): a, e, i, node, argp, mean_anom (unwrapped)


class EphemerisProvider:
    """Queryable source of planetary Keplerian elements at any epoch."""

    def __init__(self, mode, elements=None, tables=None, epoch=0.0):
        if mode not in ("fixed_two_body", "table"):
            raise ValueError(f"unknown ephemeris mode {mode!r}")
        self.mode = mode
        self._elements = dict(elements or {})
        self._tables = dict(tables or {})
        self.epoch = float(epoch)

    # -- constructors -------------------------------------------------
    @classmethod
    def fixed_two_body(cls, elements=None, epoch=0.0):
        """Constant geometry; elements default to the built-in planet set."""
        els = dict(elements) if elements is not None else {
            name: KeplerianElements(a=a, e=e, i=i, node=node, argp=argp)
            for name, (a, e, i, node, argp) in PLANET_ELEMENTS.items()}
        return cls("fixed_two_body", elements=els, epoch=epoch)

    @classmethod
    def from_csv(cls, path):
        """Load a `t_mjd,planet,a,e,i,node,argp,mean_anom` table (radians)."""
        rows = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(TABLE_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"ephemerides table missing columns: {sorted(missing)}")
            for rec in reader:
                rows.setdefault(rec["planet"], []).append(
                    [float(rec[c]) for c in TABLE_COLUMNS if c != "planet"])
        tables = {}
        for name, data in rows.items():
            arr = np.array(sorted(data, key=lambda r: r[0]))
            epochs = arr[:, 0]
            if len(epochs) < 2:
                raise ValueError(f"planet {name!r}: need at least two epochs")
            if np.any(np.diff(epochs) <= 0):
                raise ValueError(f"planet {name!r}: epochs not strictly increasing")
            values = arr[:, 1:].copy()
            values[:, 2:] = np.unwrap(values[:, 2:], axis=0)   # i, node, argp, M
            tables[name] = _Table(epochs=epochs, values=values)
        return cls("table", tables=tables, epoch=min(t.epochs[0] for t in tables.values()))

    # -- queries ------------------------------------------------------
    def planet_names(self):
        if self.mode == "fixed_two_body":
            return list(self._elements)
        return list(self._tables)

    def elements(self, name, t) -> KeplerianElements:
        """Elements of `name` at epoch t (MJD days)."""
        if self.mode == "fixed_two_body":
            el = self._elements[name]
            M = el.mean_anom + mean_motion(el.a) * (t - self.epoch)
            return el.with_mean_anom(wrap_angle(M))
        tab = self._tables[name]
        if not (tab.epochs[0] - 1e-9 <= t <= tab.epochs[-1] + 1e-9):
            raise ValueError(
                f"epoch {t} outside table span [{tab.epochs[0]}, {tab.epochs[-1]}] "
                f"for planet {name!r}")
        vals = [float(np.interp(t, tab.epochs, tab.values[:, j])) for j in range(6)]
        return KeplerianElements(a=vals[0], e=vals[1], i=wrap_angle(vals[2]),
                                 node=wrap_angle(vals[3]), argp=wrap_angle(vals[4]),
                                 mean_anom=wrap_angle(vals[5]))
