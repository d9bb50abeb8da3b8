"""Keplerian geometry: element sets, Kepler's equation and analytic
derivatives of the heliocentric position.

Positions are functions of the trajectory elements (a, e, i, node, argp)
and the mean anomaly l.  Everything downstream (distance geometry,
averaged field, jump formula) consumes the derivative bundle computed
here, so all derivatives are closed-form chain rules through the
eccentric anomaly, never finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .constants import GAUSS_K

TWO_PI = 2.0 * math.pi

# element index order used for 3x5 partial blocks
ELEMENT_NAMES = ("a", "e", "i", "node", "argp")


def wrap_angle(x):
    """Wrap to [0, 2*pi)."""
    return np.mod(x, TWO_PI)


def wrap_symmetric(x):
    """Wrap to [-pi, pi)."""
    return np.mod(np.asarray(x) + math.pi, TWO_PI) - math.pi


@dataclass(frozen=True)
class KeplerianElements:
    a: float
    e: float
    i: float
    node: float
    argp: float
    mean_anom: float = 0.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"semimajor axis must be positive, got {self.a}")
        if not 0 <= self.e < 1:
            raise ValueError(f"eccentricity must be in [0, 1), got {self.e}")
        for name in ("i", "node", "argp", "mean_anom"):
            object.__setattr__(self, name, float(wrap_angle(getattr(self, name))))

    def with_mean_anom(self, l):
        return replace(self, mean_anom=float(wrap_angle(l)))


@dataclass(frozen=True)
class DelaunayElements:
    L: float
    G: float
    Z: float
    l: float
    g: float
    z: float

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("L must be positive")
        if not 0 < self.G <= self.L * (1 + 1e-12):
            raise ValueError("requires 0 < G <= L")
        if abs(self.Z) > self.G * (1 + 1e-12):
            raise ValueError("requires |Z| <= G")


@dataclass(frozen=True)
class EquinoctialElements:
    a: float
    h: float
    k: float
    p: float
    q: float
    lam: float

    def __post_init__(self):
        if self.h * self.h + self.k * self.k >= 1:
            raise ValueError("requires h^2 + k^2 < 1")


@dataclass(frozen=True)
class CartesianState:
    position: np.ndarray
    velocity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float))
        if not (np.all(np.isfinite(self.position)) and np.all(np.isfinite(self.velocity))):
            raise ValueError("state components must be finite")


def solve_kepler(e, M, tol=1e-14, max_iter=50):
    """Solve E - e*sin(E) = M for the eccentric anomaly.

    Newton iteration seeded with M + e*sin(M); bisection fallback for the
    rare non-monotone Newton step.  Works on scalars and arrays.
    Returns E on the same 2*pi branch as M.
    """
    M = np.asarray(M, dtype=float)
    scalar = M.ndim == 0
    M = np.atleast_1d(M)
    if np.any(e < 0) or np.any(e >= 1):
        raise ValueError("eccentricity must be in [0, 1)")
    k2pi = np.round(M / TWO_PI) * TWO_PI
    m = M - k2pi  # reduced to [-pi, pi]
    E = m + e * np.sin(m)
    converged = np.zeros(m.shape, dtype=bool)
    for _ in range(max_iter):
        f = E - e * np.sin(E) - m
        converged = np.abs(f) < tol
        if np.all(converged):
            break
        fp = 1.0 - e * np.cos(E)
        E = np.where(converged, E, E - f / fp)
    if not np.all(np.abs(E - e * np.sin(E) - m) < 1e-13):
        # bisection fallback on the stragglers
        bad = np.abs(E - e * np.sin(E) - m) >= 1e-13
        lo = np.where(m[bad] >= 0, 0.0, -math.pi)
        hi = lo + math.pi
        mb = m[bad]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = mid - e * np.sin(mid) - mb
            lo = np.where(fm < 0, mid, lo)
            hi = np.where(fm < 0, hi, mid)
        E[bad] = 0.5 * (lo + hi)
        if not np.all(np.abs(E - e * np.sin(E) - m) < 1e-13):
            raise RuntimeError("Kepler solver failed to converge")
    E = E + k2pi
    return float(E[0]) if scalar else E


def _orientation(i, node, argp):
    """Perihelion / transverse unit vectors P, Q and their partials.

    Returns (P, Q, dP, dQ) with dP[name], dQ[name] for name in
    ('i', 'node', 'argp'); all shape (3,).
    """
    ci, si = math.cos(i), math.sin(i)
    cn, sn = math.cos(node), math.sin(node)
    cw, sw = math.cos(argp), math.sin(argp)
    P = np.array([cn * cw - sn * sw * ci,
                  sn * cw + cn * sw * ci,
                  sw * si])
    Q = np.array([-cn * sw - sn * cw * ci,
                  -sn * sw + cn * cw * ci,
                  cw * si])
    dP = {
        "i": np.array([sn * sw * si, -cn * sw * si, sw * ci]),
        "node": np.array([-sn * cw - cn * sw * ci, cn * cw - sn * sw * ci, 0.0]),
        "argp": Q,
    }
    dQ = {
        "i": np.array([sn * cw * si, -cn * cw * si, cw * ci]),
        "node": np.array([sn * sw - cn * cw * ci, -cn * sw - sn * cw * ci, 0.0]),
        "argp": -P,
    }
    return P, Q, dP, dQ


class PositionBundle:
    """Heliocentric position of a Keplerian trajectory at mean anomaly l
    together with analytic derivatives.

    Attributes (position arrays have shape l.shape + (3,)):
      x            position
      xl, xll, xlll d/dl, d2/dl2, d3/dl3
      dx[p]        d x / d p for p in ELEMENT_NAMES
      dxl[p]       d (dx/dl) / d p
      dxll[p]      d (d2x/dl2) / d p
    """

    def __init__(self, elements: KeplerianElements, l):
        a, e = elements.a, elements.e
        l = np.asarray(l, dtype=float)
        self.l = l
        E = solve_kepler(e, l)
        E = np.asarray(E, dtype=float)
        cE, sE = np.cos(E), np.sin(E)
        beta = math.sqrt(1.0 - e * e)
        beta_e = -e / beta
        f = 1.0 / (1.0 - e * cE)            # dE/dl
        E1 = f
        E2 = -e * sE * f ** 3
        E3 = -e * cE * f ** 4 + 3.0 * (e * sE) ** 2 * f ** 5
        Ee = sE * f                          # dE/de at fixed l
        E1e = f * f * (cE - e * sE * Ee)     # d(dE/dl)/de
        E2e = (-sE - e * cE * Ee) * f ** 3 - 3.0 * e * sE * f ** 2 * E1e

        # in-plane coordinates u = (cE - e, beta sE), scaled by a later
        u = np.stack([cE - e, beta * sE], axis=-1)
        ul = np.stack([-sE, beta * cE], axis=-1) * E1[..., None]
        d1 = np.stack([-sE, beta * cE], axis=-1)       # du/dE
        d2 = np.stack([-cE, -beta * sE], axis=-1)      # d2u/dE2
        d3 = np.stack([sE, -beta * cE], axis=-1)       # d3u/dE3
        ull = d2 * (E1 ** 2)[..., None] + d1 * E2[..., None]
        ulll = (d3 * (E1 ** 3)[..., None]
                + 3.0 * d2 * (E1 * E2)[..., None]
                + d1 * E3[..., None])
        ue = np.stack([-sE * Ee - 1.0,
                       beta_e * sE + beta * cE * Ee], axis=-1)
        d1e = np.stack([-cE * Ee,
                        beta_e * cE - beta * sE * Ee], axis=-1)  # d(du/dE)/de at fixed l
        ule = d1e * E1[..., None] + d1 * E1e[..., None]
        d2e = np.stack([sE * Ee,
                        -beta_e * sE - beta * cE * Ee], axis=-1)
        ulle = (d2e * (E1 ** 2)[..., None] + d2 * (2.0 * E1 * E1e)[..., None]
                + d1e * E2[..., None] + d1 * E2e[..., None])

        P, Q, dP, dQ = _orientation(elements.i, elements.node, elements.argp)
        PQ = np.stack([P, Q], axis=0)  # (2, 3)

        def rot(v2):
            return a * np.tensordot(v2, PQ, axes=([-1], [0]))

        self.x = rot(u)
        self.xl = rot(ul)
        self.xll = rot(ull)
        self.xlll = rot(ulll)

        self.dx, self.dxl, self.dxll = {}, {}, {}
        self.dx["a"] = self.x / a
        self.dxl["a"] = self.xl / a
        self.dxll["a"] = self.xll / a
        self.dx["e"] = rot(ue)
        self.dxl["e"] = rot(ule)
        self.dxll["e"] = rot(ulle)
        for p in ("i", "node", "argp"):
            dPQ = np.stack([dP[p], dQ[p]], axis=0)
            self.dx[p] = a * np.tensordot(u, dPQ, axes=([-1], [0]))
            self.dxl[p] = a * np.tensordot(ul, dPQ, axes=([-1], [0]))
            self.dxll[p] = a * np.tensordot(ull, dPQ, axes=([-1], [0]))


def cartesian_position(elements: KeplerianElements, l):
    """Position on the ellipse with first and second mean-anomaly derivatives.

    Returns (x, dx/dl, d2x/dl2), each of shape l.shape + (3,).
    """
    b = PositionBundle(elements, l)
    return b.x, b.xl, b.xll


def position_partials(elements: KeplerianElements, l):
    """3x5 block of d x / d(a, e, i, node, argp) at fixed mean anomaly."""
    b = PositionBundle(elements, l)
    return np.stack([b.dx[p] for p in ELEMENT_NAMES], axis=-1)


def kep_to_delaunay(kep: KeplerianElements) -> DelaunayElements:
    L = GAUSS_K * math.sqrt(kep.a)
    G = L * math.sqrt(1.0 - kep.e ** 2)
    Z = G * math.cos(kep.i)
    return DelaunayElements(L=L, G=G, Z=Z, l=kep.mean_anom, g=kep.argp, z=kep.node)


def delaunay_to_kep(d: DelaunayElements) -> KeplerianElements:
    if abs(d.Z) > d.G * (1 + 1e-12):
        raise ValueError("requires |Z| <= G")
    a = (d.L / GAUSS_K) ** 2
    ratio = min(d.G / d.L, 1.0)
    e = math.sqrt(max(0.0, 1.0 - ratio * ratio))
    i = math.acos(max(-1.0, min(1.0, d.Z / d.G)))
    return KeplerianElements(a=a, e=e, i=i, node=d.z, argp=d.g, mean_anom=d.l)


def kep_to_equinoctial(kep: KeplerianElements) -> EquinoctialElements:
    if abs(wrap_symmetric(kep.i - math.pi)) < 1e-9:
        raise ValueError("i = pi is a coordinate singularity for equinoctial elements")
    varpi = kep.argp + kep.node
    t = math.tan(kep.i / 2.0)
    return EquinoctialElements(
        a=kep.a,
        h=kep.e * math.sin(varpi),
        k=kep.e * math.cos(varpi),
        p=t * math.sin(kep.node),
        q=t * math.cos(kep.node),
        lam=float(wrap_angle(kep.mean_anom + varpi)),
    )


def equinoctial_to_kep(eq: EquinoctialElements) -> KeplerianElements:
    e = math.hypot(eq.h, eq.k)
    t = math.hypot(eq.p, eq.q)
    i = 2.0 * math.atan(t)
    node = math.atan2(eq.p, eq.q) if t > 0 else 0.0
    varpi = math.atan2(eq.h, eq.k) if e > 0 else 0.0
    return KeplerianElements(a=eq.a, e=e, i=i, node=node, argp=varpi - node,
                             mean_anom=eq.lam - varpi)


def kep_to_cartesian(elements: KeplerianElements) -> CartesianState:
    """Position and velocity at the elements' own mean anomaly."""
    b = PositionBundle(elements, elements.mean_anom)
    n = GAUSS_K * elements.a ** -1.5
    return CartesianState(position=b.x, velocity=b.xl * n)


def cartesian_to_kep(state: CartesianState, t_ref=0.0) -> KeplerianElements:
    """Osculating elements from a heliocentric state (mu = k^2)."""
    mu = GAUSS_K * GAUSS_K
    r = state.position
    v = state.velocity
    rn = float(np.linalg.norm(r))
    hvec = np.cross(r, v)
    hn = float(np.linalg.norm(hvec))
    evec = np.cross(v, hvec) / mu - r / rn
    e = float(np.linalg.norm(evec))
    energy = 0.5 * float(v @ v) - mu / rn
    if energy >= 0:
        raise ValueError("unbound trajectory")
    a = -mu / (2.0 * energy)
    i = math.acos(max(-1.0, min(1.0, hvec[2] / hn)))
    nvec = np.cross([0.0, 0.0, 1.0], hvec)
    nn = float(np.linalg.norm(nvec))
    if nn > 1e-14:
        node = math.atan2(nvec[1], nvec[0])
    else:
        node = 0.0
        nvec = np.array([1.0, 0.0, 0.0])
        nn = 1.0
    if e > 1e-14:
        cosw = float(nvec @ evec) / (nn * e)
        argp = math.acos(max(-1.0, min(1.0, cosw)))
        if evec[2] < 0:
            argp = TWO_PI - argp
        cosnu = float(evec @ r) / (e * rn)
        nu = math.acos(max(-1.0, min(1.0, cosnu)))
        if float(r @ v) < 0:
            nu = TWO_PI - nu
    else:
        argp = 0.0
        cosnu = float(nvec @ r) / (nn * rn)
        nu = math.acos(max(-1.0, min(1.0, cosnu)))
        if r[2] < 0:
            nu = TWO_PI - nu
    E = 2.0 * math.atan2(math.sqrt(1.0 - e) * math.sin(nu / 2.0),
                         math.sqrt(1.0 + e) * math.cos(nu / 2.0))
    M = E - e * math.sin(E)
    return KeplerianElements(a=a, e=e, i=i, node=node, argp=argp, mean_anom=M)
