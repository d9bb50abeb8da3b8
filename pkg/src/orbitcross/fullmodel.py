"""Non-averaged restricted N-planet model: reference integrator and
phase-ensemble statistics.

The asteroid follows

    xddot = -k^2 x/|x|^3 + sum_i mu_i k^2 [ (x'_i - x)/|x'_i - x|^3
                                            - x'_i/|x'_i|^3 ]

with the planets on the ephemeris provider's orbits (no mutual planetary
perturbations).  Times are in days, lengths in au.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import solve_ivp

from .constants import GAUSS_K
from .kepler import (KeplerianElements, CartesianState, kep_to_cartesian,
                     cartesian_to_kep, kep_to_equinoctial, wrap_angle,
                     solve_kepler, _orientation)
from .ephemeris import EphemerisProvider
from .errors import CollisionSingularity, StepUnderflow

GAUSS_K2 = GAUSS_K * GAUSS_K
COLLISION_RADIUS = 1e-8         # au, hard failure
CLOSE_APPROACH_RADIUS = 0.01    # au, flag only


@dataclass(frozen=True)
class FullState:
    """Heliocentric cartesian state of the asteroid."""
    position: np.ndarray        # au
    velocity: np.ndarray        # au/day
    t: float                    # epoch (days)

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity",
                           np.asarray(self.velocity, dtype=float))
        if not (np.all(np.isfinite(self.position))
                and np.all(np.isfinite(self.velocity))):
            raise ValueError("state components must be finite")
        if np.linalg.norm(self.position) == 0.0:
            raise ValueError("position must be nonzero")

    @classmethod
    def from_elements(cls, elements: KeplerianElements, t=0.0) -> "FullState":
        cs = kep_to_cartesian(elements)
        return cls(position=cs.position, velocity=cs.velocity, t=float(t))

    def elements(self) -> KeplerianElements:
        return cartesian_to_kep(CartesianState(self.position, self.velocity))


_ORIENT_CACHE = {}


def _planet_position(provider, name, t):
    """Planet position only; avoids building full derivative bundles."""
    el = provider.elements(name, t)
    key = (el.a, el.e, el.i, el.node, el.argp)
    PQ = _ORIENT_CACHE.get(key)
    if PQ is None:
        P, Q, _, _ = _orientation(el.i, el.node, el.argp)
        if len(_ORIENT_CACHE) > 4096:
            _ORIENT_CACHE.clear()
        PQ = _ORIENT_CACHE[key] = (P, Q)
    P, Q = PQ
    E = solve_kepler(el.e, el.mean_anom)
    xi = el.a * (math.cos(E) - el.e)
    eta = el.a * math.sqrt(1.0 - el.e * el.e) * math.sin(E)
    return P * xi + Q * eta


def full_rhs(state, t, planets, provider: EphemerisProvider):
    """Acceleration (au/day^2) of the asteroid at epoch t."""
    x = np.asarray(state.position if isinstance(state, FullState) else state,
                   dtype=float)
    r = float(np.linalg.norm(x))
    if r < COLLISION_RADIUS:
        raise CollisionSingularity(f"heliocentric distance {r:.3e} au")
    acc = -GAUSS_K2 * x / r ** 3
    for spec in planets:
        if spec.mu == 0.0:
            continue
        xp = _planet_position(provider, spec.name, t)
        d = xp - x
        dn = float(np.linalg.norm(d))
        if dn < COLLISION_RADIUS:
            raise CollisionSingularity(
                f"{dn:.3e} au from {spec.name} at t={t}")
        rp = float(np.linalg.norm(xp))
        acc = acc + spec.mu * GAUSS_K2 * (d / dn ** 3 - xp / rp ** 3)
    return acc


@dataclass
class FullTrajectory:
    """Dense solution of the full equations on [t0, tf]."""
    t0: float
    tf: float
    sol: object                       # scipy OdeSolution
    close_approach: bool
    min_planet_distance: dict         # planet -> closest sampled distance

    def state_at(self, t) -> FullState:
        y = self.sol(t)
        return FullState(position=y[:3], velocity=y[3:], t=float(t))

    def elements_at(self, t) -> KeplerianElements:
        return self.state_at(t).elements()


def propagate_full(state0: FullState, t0, tf, planets, provider,
                   tol=1e-11) -> FullTrajectory:
    """Adaptive high-order RK integration of the full equations."""
    planets = list(planets)

    def rhs(t, y):
        acc = full_rhs(y[:3], t, planets, provider)
        return np.concatenate([y[3:], acc])

    y0 = np.concatenate([state0.position, state0.velocity])
    res = solve_ivp(rhs, (float(t0), float(tf)), y0, method="DOP853",
                    rtol=tol, atol=tol, dense_output=True)
    if not res.success:
        raise StepUnderflow(f"full integration failed: {res.message}")
    traj = FullTrajectory(t0=float(t0), tf=float(tf), sol=res.sol,
                          close_approach=False, min_planet_distance={})
    # close-approach scan on a dense sampling of the solution
    ts = np.linspace(float(t0), float(tf), max(512, 4 * len(res.t)))
    xs = res.sol(ts)[:3].T
    for spec in planets:
        dmin = math.inf
        for t, x in zip(ts, xs):
            xp = _planet_position(provider, spec.name, t)
            dmin = min(dmin, float(np.linalg.norm(xp - x)))
        traj.min_planet_distance[spec.name] = dmin
        if dmin < CLOSE_APPROACH_RADIUS:
            traj.close_approach = True
    return traj


@dataclass
class EnsembleRun:
    """One member of a phase ensemble."""
    phase_asteroid: float
    phase_planets: float
    ok: bool
    close_approach: bool
    series: np.ndarray | None        # (n_epochs, 4) equinoctial h, k, p, q
    message: str = ""


@dataclass
class EnsembleStats:
    """Per-epoch mean/std of equinoctial (h, k, p, q) over an ensemble."""
    epochs: np.ndarray
    mean: np.ndarray                 # (n_epochs, 4)
    std: np.ndarray                  # (n_epochs, 4)
    runs: list = dc_field(default_factory=list)
    complete: bool = True            # all requested runs finished

    def __post_init__(self):
        if np.any(self.std < 0):
            raise ValueError("standard deviations must be nonnegative")

    @property
    def n_completed(self):
        return sum(1 for r in self.runs if r.ok)


class _PhaseShiftedProvider:
    """Provider view with all planet mean anomalies offset by a phase."""

    def __init__(self, base: EphemerisProvider, phase):
        self.base = base
        self.phase = float(phase)

    def planet_names(self):
        return self.base.planet_names()

    def elements(self, name, t):
        el = self.base.elements(name, t)
        return el.with_mean_anom(wrap_angle(el.mean_anom + self.phase))


def _equinoctial_row(state: FullState):
    eq = kep_to_equinoctial(state.elements())
    return (eq.h, eq.k, eq.p, eq.q)


def phase_ensemble(elements0: KeplerianElements, phases, tf, planets,
                   provider, t0=0.0, n_epochs=101, tol=1e-11) -> EnsembleStats:
    """Full-model ensemble over a grid of initial phases.

    Every pair (asteroid phase, shared planet phase) from `phases` is
    propagated; failed members are recorded and excluded from the
    statistics.
    """
    phases = list(phases)
    if not phases:
        raise ValueError("phase grid must be non-empty")
    epochs = np.linspace(float(t0), float(tf), int(n_epochs))
    runs = []
    for pa in phases:
        ast = elements0.with_mean_anom(wrap_angle(elements0.mean_anom + pa))
        for pp in phases:
            prov = _PhaseShiftedProvider(provider, pp)
            try:
                traj = propagate_full(FullState.from_elements(ast, t0),
                                      t0, tf, planets, prov, tol=tol)
                series = np.array([_equinoctial_row(traj.state_at(t))
                                   for t in epochs])
                runs.append(EnsembleRun(pa, pp, True, traj.close_approach,
                                        series))
            except (CollisionSingularity, StepUnderflow) as exc:
                runs.append(EnsembleRun(pa, pp, False, True, None,
                                        message=str(exc)))
    good = np.array([r.series for r in runs if r.ok])
    if good.size == 0:
        raise StepUnderflow("no ensemble member completed")
    return EnsembleStats(epochs=epochs,
                         mean=good.mean(axis=0),
                         std=good.std(axis=0),
                         runs=runs,
                         complete=all(r.ok for r in runs))
