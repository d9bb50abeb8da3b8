"""Kepler solver, element conversions, and position-bundle partials."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orbitcross.kepler import (KeplerianElements, solve_kepler, wrap_angle,
                               wrap_symmetric, kep_to_delaunay,
                               delaunay_to_kep, kep_to_equinoctial,
                               equinoctial_to_kep, kep_to_cartesian,
                               cartesian_to_kep, PositionBundle,
                               cartesian_position)
from orbitcross.constants import GAUSS_K


@given(e=st.floats(0.0, 0.99), M=st.floats(-50.0, 50.0))
@settings(max_examples=200, deadline=None)
def test_kepler_residual(e, M):
    E = solve_kepler(e, M)
    assert abs(E - e * math.sin(E) - M) < 5e-13
    # branch preservation: E stays within pi of M
    assert abs(E - M) <= math.pi + 1e-12


def test_kepler_vectorized():
    M = np.linspace(-10, 10, 257)
    E = solve_kepler(0.7, M)
    assert np.max(np.abs(E - 0.7 * np.sin(E) - M)) < 5e-13


@given(a=st.floats(0.3, 5.0), e=st.floats(0.0, 0.9),
       i=st.floats(0.01, 3.0), node=st.floats(0.0, 6.2),
       argp=st.floats(0.0, 6.2), M=st.floats(0.0, 6.2))
@settings(max_examples=100, deadline=None)
def test_delaunay_roundtrip(a, e, i, node, argp, M):
    el = KeplerianElements(a=a, e=e, i=i, node=node, argp=argp, mean_anom=M)
    back = delaunay_to_kep(kep_to_delaunay(el))
    for name in ("a", "e", "i"):
        assert abs(getattr(back, name) - getattr(el, name)) < 1e-10
    for name in ("node", "argp", "mean_anom"):
        assert abs(wrap_symmetric(getattr(back, name)
                                  - getattr(el, name))) < 1e-9


@given(a=st.floats(0.3, 5.0), e=st.floats(0.0, 0.9),
       i=st.floats(0.0, 2.8), node=st.floats(0.0, 6.2),
       argp=st.floats(0.0, 6.2), M=st.floats(0.0, 6.2))
@settings(max_examples=100, deadline=None)
def test_equinoctial_roundtrip(a, e, i, node, argp, M):
    el = KeplerianElements(a=a, e=e, i=i, node=node, argp=argp, mean_anom=M)
    back = equinoctial_to_kep(kep_to_equinoctial(el))
    assert np.max(np.abs(np.array(kep_to_cartesian(back).position)
                         - kep_to_cartesian(el).position)) < 1e-9


def test_cartesian_roundtrip(rng):
    for _ in range(30):
        el = KeplerianElements(a=float(rng.uniform(0.5, 3)),
                               e=float(rng.uniform(0, 0.8)),
                               i=float(rng.uniform(0.01, 2.9)),
                               node=float(rng.uniform(0, 6.2)),
                               argp=float(rng.uniform(0, 6.2)),
                               mean_anom=float(rng.uniform(0, 6.2)))
        back = cartesian_to_kep(kep_to_cartesian(el))
        assert abs(back.a - el.a) < 1e-10
        assert abs(back.e - el.e) < 1e-10
        assert abs(back.i - el.i) < 1e-10
        assert abs(wrap_symmetric(back.mean_anom - el.mean_anom)) < 1e-8


def test_vis_viva():
    el = KeplerianElements(a=1.7, e=0.3, i=0.4, node=1.0, argp=2.0,
                           mean_anom=0.7)
    cs = kep_to_cartesian(el)
    r = np.linalg.norm(cs.position)
    v2 = float(cs.velocity @ cs.velocity)
    assert abs(v2 - GAUSS_K ** 2 * (2.0 / r - 1.0 / el.a)) < 1e-15


def test_bundle_anomaly_derivatives():
    el = KeplerianElements(a=1.4, e=0.45, i=0.6, node=0.9, argp=2.3,
                           mean_anom=0.0)
    l0, h = 1.1, 1e-6
    b = PositionBundle(el, l0)
    bp = PositionBundle(el, l0 + h)
    bm = PositionBundle(el, l0 - h)
    assert np.max(np.abs((bp.x - bm.x) / (2 * h) - b.xl)) < 1e-8
    assert np.max(np.abs((bp.xl - bm.xl) / (2 * h) - b.xll)) < 1e-8
    assert np.max(np.abs((bp.xll - bm.xll) / (2 * h) - b.xlll)) < 1e-7


@pytest.mark.parametrize("name,delta", [
    ("a", 1e-7), ("e", 1e-7), ("i", 1e-7), ("node", 1e-7), ("argp", 1e-7)])
def test_bundle_element_partials(name, delta):
    base = dict(a=1.4, e=0.45, i=0.6, node=0.9, argp=2.3, mean_anom=0.0)
    l0 = 0.8
    b = PositionBundle(KeplerianElements(**base), l0)
    hi, lo = dict(base), dict(base)
    hi[name] += delta
    lo[name] -= delta
    bp = PositionBundle(KeplerianElements(**hi), l0)
    bm = PositionBundle(KeplerianElements(**lo), l0)
    assert np.max(np.abs((bp.x - bm.x) / (2 * delta) - b.dx[name])) < 1e-6
    assert np.max(np.abs((bp.xl - bm.xl) / (2 * delta) - b.dxl[name])) < 1e-6
    assert np.max(np.abs((bp.xll - bm.xll) / (2 * delta)
                         - b.dxll[name])) < 1e-5


def test_cartesian_position_matches_bundle():
    el = KeplerianElements(a=2.0, e=0.2, i=0.3, node=0.5, argp=1.5,
                           mean_anom=0.0)
    l = np.linspace(0, 6.2, 13)
    x, xl, xll = cartesian_position(el, l)
    b = PositionBundle(el, l)
    assert np.allclose(x, b.x, atol=1e-14)
    assert np.allclose(xl, b.xl, atol=1e-14)
    assert np.allclose(xll, b.xll, atol=1e-14)


def test_angle_wrapping():
    el = KeplerianElements(a=1.0, e=0.1, i=0.2, node=-1.0, argp=7.0,
                           mean_anom=2 * math.pi + 0.25)
    assert 0 <= el.node < 2 * math.pi
    assert 0 <= el.argp < 2 * math.pi
    assert abs(el.mean_anom - 0.25) < 1e-12
    assert wrap_angle(-0.1) == pytest.approx(2 * math.pi - 0.1)
    assert wrap_symmetric(2 * math.pi - 0.1) == pytest.approx(-0.1)


def test_element_validation():
    with pytest.raises(ValueError):
        KeplerianElements(a=-1.0, e=0.1, i=0.2, node=0.0, argp=0.0,
                          mean_anom=0.0)
    with pytest.raises(ValueError):
        KeplerianElements(a=1.0, e=1.0, i=0.2, node=0.0, argp=0.0,
                          mean_anom=0.0)
