"""Critical points of the Keplerian distance, signed distance, and the
crossing matrix."""

import math

import numpy as np
import pytest

from orbitcross.kepler import KeplerianElements, PositionBundle
from orbitcross.distance import (TwoOrbitConfig, AnomalyPair,
                                 find_critical_points, minima,
                                 orbit_distance, squared_distance,
                                 signed_distance, signed_distance_value,
                                 signed_distance_gradient, crossing_matrix,
                                 check_degenerate, refine_minimum,
                                 refine_critical_point, match_minimum)
from orbitcross.errors import DegenerateConfiguration

from conftest import (random_config, near_crossing_config, signed_min,
                      crosser_elements, EARTH_LIKE)


def circle(a, i=0.0, node=0.0):
    return KeplerianElements(a=a, e=0.0, i=i, node=node, argp=0.0,
                             mean_anom=0.0)


def test_perpendicular_circles_r1_r2():
    cfg = TwoOrbitConfig(asteroid=circle(1.0),
                         planet=circle(2.0, i=math.pi / 2))
    pts = minima(find_critical_points(cfg))
    assert len(pts) == 2
    for p in pts:
        assert abs(p.d - 1.0) < 1e-10


def test_perpendicular_unit_circles_cross():
    cfg = TwoOrbitConfig(asteroid=circle(1.0),
                         planet=circle(1.0, i=math.pi / 2))
    pts = minima(find_critical_points(cfg))
    assert len(pts) == 2
    for p in pts:
        assert p.d < 1e-10


def test_concentric_coplanar_circles_degenerate():
    cfg = TwoOrbitConfig(asteroid=circle(1.0), planet=circle(2.0))
    with pytest.raises(DegenerateConfiguration):
        check_degenerate(cfg)


def test_gradient_vanishes_at_critical_points(rng):
    for _ in range(10):
        cfg = random_config(rng)
        for p in find_critical_points(cfg):
            d2, grad, hess = squared_distance(cfg, p.V)
            assert np.max(np.abs(grad)) < 1e-8
            # FD consistency of the returned gradient nearby
            h = 1e-6
            V1 = AnomalyPair(p.V.l + 0.3, p.V.lp - 0.2)
            _, g1, _ = squared_distance(cfg, V1)
            up, _, _ = squared_distance(cfg, AnomalyPair(V1.l + h, V1.lp))
            dn, _, _ = squared_distance(cfg, AnomalyPair(V1.l - h, V1.lp))
            assert abs((up - dn) / (2 * h) - g1[0]) < 1e-6


def test_minima_count_and_kinds(rng):
    # Morse theory on the torus: #minima - #saddles + #maxima = 0
    for _ in range(10):
        cfg = random_config(rng)
        pts = find_critical_points(cfg)
        kinds = [p.kind for p in pts]
        n_min = kinds.count("minimum")
        n_sad = kinds.count("saddle")
        n_max = kinds.count("maximum")
        assert n_min >= 1
        assert n_min + n_max == n_sad


def test_orbit_distance_le_all_grid_values(rng):
    for _ in range(5):
        cfg = random_config(rng)
        moid, _ = orbit_distance(cfg)
        ls = np.linspace(0, 2 * np.pi, 90, endpoint=False)
        x1 = PositionBundle(cfg.asteroid, ls).x
        x2 = PositionBundle(cfg.planet, ls).x
        grid_min = np.min(np.linalg.norm(x1[:, None, :] - x2[None, :, :],
                                         axis=-1))
        assert moid <= grid_min + 1e-9


def test_signed_distance_sign_convention():
    # the crosser family straddles zero near e = 0.556
    lo = TwoOrbitConfig(asteroid=crosser_elements(0.5553648974),
                        planet=EARTH_LIKE)
    hi = TwoOrbitConfig(asteroid=crosser_elements(0.5569258948),
                        planet=EARTH_LIKE)
    assert abs(signed_min(lo) - 1e-3) < 1e-7
    assert abs(signed_min(hi) + 1e-3) < 1e-7


def test_signed_distance_magnitude_is_d(rng):
    for _ in range(8):
        cfg = random_config(rng)
        for p in minima(find_critical_points(cfg)):
            sd = signed_distance(cfg, p)
            if not sd.degenerate:
                assert abs(abs(sd.value) - p.d) < 1e-9


def test_signed_distance_gradient_fd(rng):
    cfg = near_crossing_config(rng, target=0.01)
    pts = minima(find_critical_points(cfg))
    p = min(pts, key=lambda q: abs(signed_distance_value(cfg, q)))
    grad = signed_distance_gradient(cfg, p)
    names = ("a", "e", "i", "node", "argp")
    h = 1e-7
    for which, orbit in enumerate((cfg.asteroid, cfg.planet)):
        for j, name in enumerate(names):
            vals = []
            for sgn in (+1, -1):
                d = {k: getattr(orbit, k) for k in
                     names + ("mean_anom",)}
                d[name] += sgn * h
                el = KeplerianElements(**d)
                c2 = TwoOrbitConfig(asteroid=el, planet=cfg.planet) \
                    if which == 0 else \
                    TwoOrbitConfig(asteroid=cfg.asteroid, planet=el)
                q = refine_minimum(c2, p.V)
                vals.append(signed_distance_value(c2, q))
            fd = (vals[0] - vals[1]) / (2 * h)
            assert abs(fd - grad[5 * which + j]) < 1e-5 * max(
                1.0, abs(grad[5 * which + j]))


def test_crossing_matrix_positive_definite_at_minimum(rng):
    for _ in range(8):
        cfg = random_config(rng)
        for p in minima(find_critical_points(cfg)):
            cm = crossing_matrix(cfg, p)
            assert cm.det > 0
            assert cm.A[0, 0] > 0


def test_refine_functions(rng):
    cfg = random_config(rng)
    pts = find_critical_points(cfg)
    for p in pts:
        q = refine_critical_point(cfg, AnomalyPair(p.V.l + 0.01,
                                                   p.V.lp - 0.01))
        assert q is not None
        assert q.kind == p.kind
        assert abs(q.d - p.d) < 1e-9
    m = minima(pts)[0]
    q = refine_minimum(cfg, m.V)
    assert q is not None and abs(q.d - m.d) < 1e-12


def test_match_minimum(rng):
    cfg = random_config(rng)
    pts = find_critical_points(cfg)
    m = minima(pts)[0]
    near = AnomalyPair(m.V.l + 0.05, m.V.lp - 0.05)
    assert match_minimum(near, pts).index == m.index
    far = AnomalyPair(m.V.l + 3.0, m.V.lp + 3.0)
    hit = match_minimum(far, pts)
    assert hit is None or hit.index != m.index
