"""Shared fixtures and config generators for the test suite."""

import numpy as np
import pytest
from scipy.optimize import brentq

from orbitcross.kepler import KeplerianElements
from orbitcross.distance import (TwoOrbitConfig, find_critical_points,
                                 minima, signed_distance_value,
                                 check_degenerate)
from orbitcross.errors import DegenerateConfiguration, TangentOrbits


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)


EARTH_LIKE = KeplerianElements(a=1.0, e=0.0167, i=0.0008, node=0.1,
                               argp=1.79, mean_anom=0.0)

# heavy test planet (earth mass x100) so secular drift is fast enough for
# short integrations
MU_HEAVY = 3.0404e-4

# asteroid family whose signed minimum distance crosses zero near e=0.556
CROSSER = dict(a=1.8, i=0.35, node=1.0, argp=2.0)


def crosser_elements(e):
    return KeplerianElements(a=CROSSER["a"], e=e, i=CROSSER["i"],
                             node=CROSSER["node"], argp=CROSSER["argp"],
                             mean_anom=0.0)


def signed_min(config):
    """Signed distance of the minimum closest to crossing."""
    pts = minima(find_critical_points(config))
    vals = [signed_distance_value(config, p) for p in pts]
    return min(vals, key=abs)


def random_elements(rng, a_range=(0.5, 3.0), e_max=0.8, i_max=1.2):
    return KeplerianElements(
        a=float(rng.uniform(*a_range)),
        e=float(rng.uniform(0.0, e_max)),
        i=float(rng.uniform(0.0, i_max)),
        node=float(rng.uniform(0.0, 2 * np.pi)),
        argp=float(rng.uniform(0.0, 2 * np.pi)),
        mean_anom=0.0)


def random_config(rng, **kw):
    """A random non-degenerate two-orbit configuration."""
    while True:
        cfg = TwoOrbitConfig(asteroid=random_elements(rng, **kw),
                             planet=random_elements(rng, a_range=(0.6, 1.8),
                                                    e_max=0.3, i_max=0.3))
        try:
            check_degenerate(cfg)
        except DegenerateConfiguration:
            continue
        return cfg


def near_crossing_config(rng, target=None, tries=60):
    """Random configuration tuned (via the asteroid eccentricity) so the
    closest minimum has signed distance `target` (random in +-0.04 au if
    not given)."""
    if target is None:
        target = float(rng.uniform(-0.04, 0.04))
    for _ in range(tries):
        ast = random_elements(rng, a_range=(1.2, 2.6), e_max=0.0,
                              i_max=0.7)
        planet = KeplerianElements(a=1.0, e=float(rng.uniform(0, 0.05)),
                                   i=float(rng.uniform(0, 0.05)),
                                   node=float(rng.uniform(0, 2 * np.pi)),
                                   argp=float(rng.uniform(0, 2 * np.pi)),
                                   mean_anom=0.0)
        if ast.i < 0.05:
            continue        # avoid near-coplanar tangency trouble

        def f(e):
            cfg = TwoOrbitConfig(asteroid=KeplerianElements(
                a=ast.a, e=e, i=ast.i, node=ast.node, argp=ast.argp,
                mean_anom=0.0), planet=planet)
            return signed_min(cfg) - target

        es = np.linspace(0.02, 0.9, 24)
        try:
            vals = [f(e) for e in es]
        except (DegenerateConfiguration, TangentOrbits):
            continue
        hit = None
        for e0, e1, v0, v1 in zip(es, es[1:], vals, vals[1:]):
            if v0 * v1 < 0:
                hit = (e0, e1)
                break
        if hit is None:
            continue
        try:
            e_star = brentq(f, *hit, xtol=1e-13)
        except (ValueError, DegenerateConfiguration, TangentOrbits):
            continue
        cfg = TwoOrbitConfig(asteroid=KeplerianElements(
            a=ast.a, e=float(e_star), i=ast.i, node=ast.node, argp=ast.argp,
            mean_anom=0.0), planet=planet)
        if abs(signed_min(cfg) - target) < 1e-9:
            return cfg
    raise RuntimeError("could not generate a near-crossing configuration")
