"""Acceptance suite: each test pins one headline guarantee of the package
against an independent oracle (dense grids, finite differences, Richardson
extrapolation, closed forms, or the full non-averaged model)."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from orbitcross.kepler import (KeplerianElements, PositionBundle,
                               kep_to_equinoctial, wrap_symmetric)
from orbitcross.distance import (TwoOrbitConfig, AnomalyPair,
                                 find_critical_points, minima,
                                 refine_minimum, signed_distance_value,
                                 signed_distance_gradient)
from orbitcross.averaged import (elements_to_Y, CrossingGeometry,
                                 averaged_gradient_plain,
                                 averaged_perturbing_function,
                                 disk_delta_integral_closed_form,
                                 default_extraction_radius,
                                 extended_field, field_jump,
                                 _polar_integrate)
from orbitcross.ephemeris import EphemerisProvider, PlanetSpec
from orbitcross.secular import (propagate_secular, SecularField, _jmap,
                                DAYS_PER_YEAR)
from orbitcross.fullmodel import phase_ensemble
from orbitcross.predictor import (VirtualAsteroid, crossing_interval,
                                  crossing_probability, BAND_HALFWIDTH)
from orbitcross.constants import PLANET_MU, DEFAULT_PLANET_ORDER

from conftest import (EARTH_LIKE, MU_HEAVY, crosser_elements,
                      signed_min, random_config, near_crossing_config)

MU_EARTH = 3.0404e-6


# -- 1. orbit-distance critical points vs a dense grid oracle ----------

GRID_N = 720
GRID_L = 2.0 * np.pi * np.arange(GRID_N) / GRID_N


def _grid_minima(cfg):
    """Strict local minima of the squared distance on a 720x720 torus
    grid, polished by Newton."""
    X1 = PositionBundle(cfg.asteroid, GRID_L).x
    X2 = PositionBundle(cfg.planet, GRID_L).x
    d2 = np.sum((X1[:, None, :] - X2[None, :, :]) ** 2, axis=-1)
    is_min = np.ones_like(d2, dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            is_min &= d2 < np.roll(np.roll(d2, di, 0), dj, 1)
    out = []
    for i, j in zip(*np.nonzero(is_min)):
        p = refine_minimum(cfg, AnomalyPair(GRID_L[i], GRID_L[j]))
        if p is not None and p.kind == "minimum":
            out.append(p.V.as_array())
    return out


def test_minima_match_grid_oracle(rng):
    for _ in range(100):
        cfg = random_config(rng)
        pkg = [p.V.as_array() for p in minima(find_critical_points(cfg))]
        grid = _grid_minima(cfg)

        def close(u, v):
            return np.max(np.abs(wrap_symmetric(u - v))) < 1e-6

        for u in pkg:
            assert any(close(u, v) for v in grid)
        for v in grid:
            assert any(close(u, v) for u in pkg)


# -- 2. closed-form geometry --------------------------------------------

def test_perpendicular_circles_closed_form():
    cfg = TwoOrbitConfig(
        asteroid=KeplerianElements(a=2.0, e=0.0, i=0.5 * math.pi,
                                   node=0.0, argp=0.0, mean_anom=0.0),
        planet=KeplerianElements(a=1.0, e=0.0, i=0.0, node=0.0,
                                 argp=0.0, mean_anom=0.0))
    mins = minima(find_critical_points(cfg))
    assert len(mins) == 2
    for p in mins:
        assert abs(p.d - 1.0) < 1e-10


def test_perpendicular_unit_circles_two_crossings():
    cfg = TwoOrbitConfig(
        asteroid=KeplerianElements(a=1.0, e=0.0, i=0.5 * math.pi,
                                   node=0.0, argp=0.0, mean_anom=0.0),
        planet=KeplerianElements(a=1.0, e=0.0, i=0.0, node=0.0,
                                 argp=0.0, mean_anom=0.0))
    mins = minima(find_critical_points(cfg))
    crossings = [p for p in mins if p.d < 1e-10]
    # two crossing points, and never more
    assert len(crossings) == 2


# -- 3. signed-distance gradient vs re-solve finite differences ---------

def _fd_gradient(cfg, point, dv=1e-6):
    grad = np.empty(10)
    for k in range(10):
        vals = []
        for sgn in (+1.0, -1.0):
            pert = cfg.perturbed(k, sgn * dv)
            p = refine_minimum(pert, point.V)
            assert p is not None
            vals.append(signed_distance_value(pert, p))
        grad[k] = (vals[0] - vals[1]) / (2.0 * dv)
    return grad


def test_signed_gradient_fidelity(rng):
    for _ in range(50):
        cfg = near_crossing_config(rng)
        pts = minima(find_critical_points(cfg))
        point = min(pts, key=lambda p: abs(signed_distance_value(cfg, p)))
        assert abs(signed_distance_value(cfg, point)) < 0.05
        grad = signed_distance_gradient(cfg, point)
        fd = _fd_gradient(cfg, point)
        scale = np.max(np.abs(fd))
        assert np.max(np.abs(grad - fd)) / scale < 1e-4


# -- 4. singularity extraction consistency ------------------------------

def _config_at_dtilde(target):
    def f(e):
        return signed_min(TwoOrbitConfig(asteroid=crosser_elements(e),
                                         planet=EARTH_LIKE)) - target
    e = brentq(f, 0.4, 0.7, xtol=1e-13)
    return TwoOrbitConfig(asteroid=crosser_elements(e), planet=EARTH_LIKE)


def test_extended_matches_plain_near_crossing():
    for target, side in ((1e-3, "plus"), (-1e-3, "minus")):
        cfg = _config_at_dtilde(target)
        pts = find_critical_points(cfg)
        point = min(minima(pts),
                    key=lambda p: abs(signed_distance_value(cfg, p)))
        ext = extended_field(cfg, point, MU_EARTH, side, refine=2,
                             points=pts)
        plain = averaged_gradient_plain(cfg, MU_EARTH, margin=0.0, refine=2,
                                        points=pts)
        assert np.max(np.abs(ext - plain)) / np.max(np.abs(plain)) < 1e-4


def test_extraction_radius_invariance():
    cfg = _config_at_dtilde(1e-3)
    pts = find_critical_points(cfg)
    point = min(minima(pts),
                key=lambda p: abs(signed_distance_value(cfg, p)))
    r = default_extraction_radius(cfg, point, pts)
    f1 = extended_field(cfg, point, MU_EARTH, "plus", r=r, refine=4,
                        points=pts)
    f2 = extended_field(cfg, point, MU_EARTH, "plus", r=2.0 * r, refine=4,
                        points=pts)
    assert np.max(np.abs(f2 - f1)) / np.max(np.abs(f1)) < 1e-7


def test_disk_delta_closed_form():
    cfg = _config_at_dtilde(1e-3)
    pts = minima(find_critical_points(cfg))
    point = min(pts, key=lambda p: abs(signed_distance_value(cfg, p)))
    geom = CrossingGeometry(cfg, point)
    r = default_extraction_radius(cfg, point)

    def inv_delta(V):
        u = wrap_symmetric(V - geom.V_h.as_array())
        q = np.einsum("ni,ij,nj->n", u, geom.A, u)
        return 1.0 / np.sqrt(geom.d_sq + q)

    quad = _polar_integrate(geom, inv_delta, r, "disk", refine=4)
    closed = disk_delta_integral_closed_form(geom, r)
    assert abs(quad - closed) / abs(closed) < 1e-8


# -- 5. jump formula vs Richardson extrapolation ------------------------

def _crosser_family(a, i, node, argp):
    planet = EARTH_LIKE

    def elements(e):
        return KeplerianElements(a=a, e=e, i=i, node=node, argp=argp,
                                 mean_anom=0.0)

    def dmin(e):
        return signed_min(TwoOrbitConfig(asteroid=elements(e),
                                         planet=planet))

    return elements, dmin, planet


JUMP_FAMILIES = [
    (1.8, 0.35, 1.0, 2.0),
    (1.5, 0.50, 0.3, 1.0),
    (2.2, 0.25, 2.0, 4.0),
    (1.3, 0.70, 4.0, 0.5),
    (2.6, 0.40, 5.5, 3.0),
]


def test_jump_formula_vs_richardson():
    eps = 4e-3
    for a, i, node, argp in JUMP_FAMILIES:
        elements, dmin, planet = _crosser_family(a, i, node, argp)
        es = np.linspace(0.05, 0.9, 18)
        vals = [dmin(e) for e in es]
        lo, hi = next((e0, e1) for e0, e1, v0, v1
                      in zip(es, es[1:], vals, vals[1:]) if v0 * v1 < 0)
        e_star = brentq(dmin, lo, hi, xtol=1e-13)

        def e_at(target):
            # bracket tightly around the crossing eccentricity so the
            # tracked minimum cannot switch branches
            w = 0.005
            while w < 0.3:
                a_, b_ = max(0.02, e_star - w), min(0.95, e_star + w)
                if (dmin(a_) - target) * (dmin(b_) - target) < 0:
                    return brentq(lambda e: dmin(e) - target, a_, b_,
                                  xtol=1e-13)
                w *= 2.0
            raise RuntimeError("no bracket for target distance")

        def grad_at(target):
            cfg = TwoOrbitConfig(asteroid=elements(e_at(target)),
                                 planet=planet)
            return averaged_gradient_plain(cfg, MU_EARTH, margin=0.0,
                                           refine=3)

        def f(ep):
            return grad_at(-ep) - grad_at(+ep)

        rich = 2.0 * f(0.5 * eps) - f(eps)
        cfg0 = TwoOrbitConfig(asteroid=elements(e_star), planet=planet)
        pts = minima(find_critical_points(cfg0))
        point = min(pts, key=lambda p: abs(signed_distance_value(cfg0, p)))
        diff = field_jump(cfg0, point, MU_EARTH)
        scale = np.max(np.abs(diff))
        assert np.max(np.abs(rich - diff)) / scale < 1e-3


# -- 6/7. generalized solutions through a crossing ----------------------

PROV_HEAVY = EphemerisProvider.fixed_two_body(elements={"earth": EARTH_LIKE})
SPECS_HEAVY = [PlanetSpec("earth", MU_HEAVY)]


@pytest.fixture(scope="module")
def crossing_run():
    el = crosser_elements(0.5553648974)
    a0, Y0 = elements_to_Y(el)
    traj = propagate_secular(Y0, 0.0, 30 * DAYS_PER_YEAR, a0, PROV_HEAVY,
                             SPECS_HEAVY, dt=0.5 * DAYS_PER_YEAR)
    assert len(traj.events) == 1
    field = SecularField(a0, PROV_HEAVY, SPECS_HEAVY)
    return traj, traj.events[0], field, a0, Y0


def test_slope_jump_and_roundtrip(crossing_run):
    traj, ev, field, a0, Y0 = crossing_run
    ydot_m = traj.ydot_at(ev.t_c, side=-1)
    ydot_p = traj.ydot_at(ev.t_c, side=+1)
    jump = ydot_p - ydot_m
    scale = np.max(np.abs(ev.applied_jump))
    assert np.max(np.abs(jump - ev.applied_jump)) / scale < 1e-4

    back = propagate_secular(traj.y_at(traj.t_end), traj.t_end, 0.0, a0,
                             PROV_HEAVY, SPECS_HEAVY,
                             dt=0.5 * DAYS_PER_YEAR)
    assert len(back.events) == 1
    assert np.max(np.abs(back.y_at(0.0) - Y0)) < 1e-8


def test_c1_distance_and_bracket_identity(crossing_run):
    traj, ev, field, a0, Y0 = crossing_run

    def dbar(t, side):
        # evaluate strictly on one side of the event
        y = traj._segment(t, side).y_at(t)
        return field.dtilde(t, y, ev.planet, ev.h)

    # one-sided slopes of the signed minimal distance
    d1, d2 = 0.5, 1.5
    slope_m = (dbar(ev.t_c - d1, -1) - dbar(ev.t_c - d2, -1)) / (d2 - d1)
    slope_p = (dbar(ev.t_c + d2, +1) - dbar(ev.t_c + d1, +1)) / (d2 - d1)
    rel_d = abs(slope_p - slope_m) / max(abs(slope_p), abs(slope_m))
    assert rel_d < 1e-3

    # the state derivative itself jumps by far more than that
    ydot_m = traj.ydot_at(ev.t_c, side=-1)
    ydot_p = traj.ydot_at(ev.t_c, side=+1)
    rel_y = np.max(np.abs(ydot_p - ydot_m)) / np.max(np.abs(ydot_m))
    assert rel_y >= 10.0 * rel_d

    # bracket identity at the event configuration
    cfg = field.config(ev.t_c, traj.y_at(ev.t_c), ev.planet)
    pts = minima(find_critical_points(cfg))
    point = min(pts, key=lambda p: abs(signed_distance_value(cfg, p)))
    geom = CrossingGeometry(cfg, point)
    diff = field_jump(cfg, point, MU_HEAVY, geom)
    bracket = float(diff @ _jmap(geom.ddtilde_dy))
    scale = np.linalg.norm(diff) * np.linalg.norm(geom.ddtilde_dy)
    assert abs(bracket) / scale < 1e-10


# -- 8. first integrals, circular coplanar single planet ----------------

def test_first_integrals_circular_coplanar():
    planet = KeplerianElements(a=1.0, e=0.0, i=0.0, node=0.0, argp=0.0,
                               mean_anom=0.0)
    prov = EphemerisProvider.fixed_two_body(elements={"earth": planet})
    specs = [PlanetSpec("earth", MU_EARTH)]
    ast = KeplerianElements(a=1.8, e=0.1, i=0.2, node=1.0, argp=2.0,
                            mean_anom=0.0)
    a0, Y0 = elements_to_Y(ast)
    tf = 1e4 * DAYS_PER_YEAR
    traj = propagate_secular(Y0, 0.0, tf, a0, prov, specs,
                             dt=10 * DAYS_PER_YEAR)
    assert not traj.events

    times = np.linspace(0.0, tf, 21)
    Z0 = Y0[1]
    zs = [traj.y_at(t)[1] for t in times]
    assert max(abs(z - Z0) for z in zs) / abs(Z0) < 1e-10

    def rbar(t):
        st = traj.state_at(t)
        cfg = TwoOrbitConfig(asteroid=st.elements(),
                             planet=prov.elements("earth", t))
        return averaged_perturbing_function(cfg, MU_EARTH, n=512)

    rs = [rbar(t) for t in times[::4]]
    assert (max(rs) - min(rs)) / abs(rs[0]) < 1e-8

    # the semimajor axis is constant bitwise
    assert traj.state_at(tf).a == a0


# -- 9. secular vs full-model phase ensemble ----------------------------

def test_secular_matches_full_ensemble():
    prov = EphemerisProvider.fixed_two_body()
    specs = [PlanetSpec(n, PLANET_MU[n]) for n in DEFAULT_PLANET_ORDER]
    assert len(specs) == 5
    ast = KeplerianElements(a=1.3, e=0.2, i=0.2, node=1.0, argp=2.0,
                            mean_anom=0.0)
    tf = 200 * DAYS_PER_YEAR
    phases = [2.0 * math.pi * k / 4 for k in range(4)]
    stats = phase_ensemble(ast, phases, tf, specs, prov, n_epochs=21,
                           tol=1e-11)
    assert stats.complete

    a0, Y0 = elements_to_Y(ast)
    traj = propagate_secular(Y0, 0.0, tf, a0, prov, specs,
                             dt=2 * DAYS_PER_YEAR)
    for j, t in enumerate(stats.epochs):
        if j == 0:
            continue            # identical initial conditions: zero spread
        eq = kep_to_equinoctial(traj.state_at(t).elements())
        sec = np.array([eq.h, eq.k, eq.p, eq.q])
        dev = np.abs(stats.mean[j] - sec)
        assert np.all(dev <= 3.0 * stats.std[j])


# -- 10. crossing forecast ----------------------------------------------

def test_forecast_interval_probability_and_secular():
    vas = [VirtualAsteroid(s=0, elements=crosser_elements(0.55),
                           weight=0.5),
           VirtualAsteroid(s=1, elements=crosser_elements(0.554),
                           weight=0.5)]
    horizon = 120 * DAYS_PER_YEAR
    lin = crossing_interval(vas, BAND_HALFWIDTH, PROV_HEAVY, SPECS_HEAVY,
                            horizon=horizon)

    # J endpoints agree exactly with the hand band-entry arithmetic
    hand = []
    for fc in lin.per_va:
        hand.append((abs(fc.dtilde0) - BAND_HALFWIDTH)
                    / (abs(fc.slope) / DAYS_PER_YEAR))
    assert lin.t1 == min(hand) and lin.t2 == max(hand)

    # P is additive in the weights and monotone in the interval
    full = crossing_probability(vas, (0.0, horizon), PROV_HEAVY,
                                SPECS_HEAVY, forecast=lin)
    assert full == pytest.approx(1.0, abs=1e-12)
    singles = [crossing_probability(vas, (t - 1.0, t + 1.0), PROV_HEAVY,
                                    SPECS_HEAVY, forecast=lin)
               for t in hand]
    assert sum(singles) == pytest.approx(full, abs=1e-12)
    mid = 0.5 * (min(hand) + max(hand))
    assert crossing_probability(vas, (0.0, mid), PROV_HEAVY, SPECS_HEAVY,
                                forecast=lin) == pytest.approx(0.5,
                                                               abs=1e-12)

    # linearized vs secular endpoints for this slow family
    sec = crossing_interval(vas, BAND_HALFWIDTH, PROV_HEAVY, SPECS_HEAVY,
                            method="secular", horizon=horizon,
                            dt=2 * DAYS_PER_YEAR)
    assert abs(sec.t1 - lin.t1) < 0.05 * horizon
    assert abs(sec.t2 - lin.t2) < 0.05 * horizon
