"""Double-averaged gradient of the perturbing function and its two
one-sided Lipschitz extensions across the orbit-crossing set.

The singular part of the average is extracted with the quadratic-model
distance delta_h = sqrt(d_h^2 + (V-V_h).A_h(V-V_h)); the disk integral of
1/delta_h has a closed form whose non-smooth |d_h| term carries the whole
crossing singularity, which yields the explicit jump between the two
extensions.

All quadratures run in elliptic polar coordinates aligned with A_h^(1/2),
with geometrically refined radial panels down to the scale of d_h, so the
same machinery evaluates the plain average accurately arbitrarily close
to a crossing (needed for the side-consistency and extrapolation checks).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from .constants import GAUSS_K, GAUSS_K2
from .distance import (AnomalyPair, CriticalPoint, CrossingMatrix, TwoOrbitConfig,
                       crossing_matrix, find_critical_points, minima, orbit_distance,
                       squared_distance)
from .errors import DegenerateCrossing, TangentOrbits, TooCloseToCrossing
from .kepler import KeplerianElements, PositionBundle, wrap_symmetric

TWO_PI = 2.0 * math.pi

EXTRACTION_TRIGGER = 0.01   # au; |d_tilde| below this uses the extended field
DET_A_THRESHOLD = 1e-8      # below this the extraction is declared degenerate

# Delaunay subset order used everywhere: y = (G, Z, g, z)
Y_NAMES = ("G", "Z", "g", "z")


@dataclass(frozen=True)
class PerturbingFunctionSpec:
    """One perturbing planet: mass ratio and trajectory elements."""
    mu: float
    planet: KeplerianElements

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mass ratio must be positive")


@dataclass(frozen=True)
class ApproxDistanceModel:
    d_sq: float
    V_h: AnomalyPair
    A: CrossingMatrix

    def __post_init__(self):
        lam = np.linalg.eigvalsh(self.A.A)
        if lam[0] <= 0:
            raise ValueError("quadratic-model matrix must be positive definite")


@dataclass(frozen=True)
class ExtractionDomain:
    V_h: AnomalyPair
    r: float


@dataclass(frozen=True)
class ExtendedFieldPair:
    plus: np.ndarray
    minus: np.ndarray
    diff: np.ndarray


def elements_to_Y(el: KeplerianElements):
    """(a, Y) with Y = (G, Z, g, z) for the asteroid."""
    L = GAUSS_K * math.sqrt(el.a)
    G = L * math.sqrt(1.0 - el.e ** 2)
    Z = G * math.cos(el.i)
    return el.a, np.array([G, Z, el.argp, el.node])


def Y_to_elements(a, Y, mean_anom=0.0) -> KeplerianElements:
    L = GAUSS_K * math.sqrt(a)
    G, Z, g, z = (float(v) for v in Y)
    ratio = min(G / L, 1.0)
    e = math.sqrt(max(0.0, 1.0 - ratio * ratio))
    i = math.acos(max(-1.0, min(1.0, Z / G)))
    return KeplerianElements(a=a, e=e, i=i, node=z, argp=g, mean_anom=mean_anom)


def _delaunay_chain(el: KeplerianElements):
    """5x4 Jacobian d(a, e, i, node, argp)/d(G, Z, g, z) at fixed L."""
    L = GAUSS_K * math.sqrt(el.a)
    G = L * math.sqrt(1.0 - el.e ** 2)
    si = math.sin(el.i)
    if el.e < 1e-9 or si < 1e-9:
        raise ValueError("Delaunay chain is singular at e = 0 or i = 0")
    Z = G * math.cos(el.i)
    C = np.zeros((5, 4))
    C[1, 0] = -G / (L * L * el.e)       # de/dG
    C[2, 0] = Z / (G * G * si)          # di/dG
    C[2, 1] = -1.0 / (G * si)           # di/dZ
    C[4, 2] = 1.0                       # dargp/dg
    C[3, 3] = 1.0                       # dnode/dz
    return C


def approx_distance(model: ApproxDistanceModel, V):
    """delta_h(V): closed-form quadratic-model distance (>= d_h)."""
    if isinstance(V, AnomalyPair):
        u = wrap_symmetric(V.as_array() - model.V_h.as_array())
    else:
        u = wrap_symmetric(np.asarray(V, dtype=float) - model.V_h.as_array())
    q = np.einsum("...i,ij,...j->...", u, model.A.A, u)
    return np.sqrt(model.d_sq + q)


class CrossingGeometry:
    """Everything the extraction needs at one minimum of d^2: the signed
    distance, the quadratic-model matrix and their analytic derivatives
    with respect to the asteroid's (G, Z, g, z)."""

    def __init__(self, config: TwoOrbitConfig, point: CriticalPoint):
        self.config = config
        self.point = point
        self.V_h = point.V
        b1 = PositionBundle(config.asteroid, point.V.l)
        b2 = PositionBundle(config.planet, point.V.lp)
        self.b1, self.b2 = b1, b2
        delta = b1.x - b2.x
        tau3 = np.cross(b1.xl, b2.xl)
        n3 = float(np.linalg.norm(tau3))
        if n3 < 1e-10:
            raise TangentOrbits("tangent vectors are parallel at the minimum")
        t3 = tau3 / n3
        self.d_tilde = float(t3 @ delta)
        self.d_sq = self.d_tilde ** 2

        cm = crossing_matrix(config, point)
        self.A = cm.A
        self.detA = cm.det
        if self.detA <= DET_A_THRESHOLD:
            raise DegenerateCrossing(f"det A_h = {self.detA:.3e} too small")

        C = _delaunay_chain(config.asteroid)

        # d(d_tilde)/dy: asteroid block of the 10-vector gradient, chained
        grad5 = np.array([float(t3 @ b1.dx[p]) for p in
                          ("a", "e", "i", "node", "argp")])
        self.ddtilde_dy = C.T @ grad5

        # dV_h/dy = -H^{-1} d(grad_V d^2)/dy
        _, _, H = squared_distance(config, point.V)
        dgrad5 = np.zeros((5, 2))
        for j, p in enumerate(("a", "e", "i", "node", "argp")):
            dgrad5[j, 0] = 2.0 * (float(b1.dx[p] @ b1.xl) + float(delta @ b1.dxl[p]))
            dgrad5[j, 1] = -2.0 * float(b1.dx[p] @ b2.xl)
        dgrad_dy = C.T @ dgrad5                     # (4, 2)
        self.dVh_dy = -np.linalg.solve(H, dgrad_dy.T).T   # (4, 2)

        # dA/dy: explicit element dependence plus transport along V_h
        dA5 = np.zeros((5, 2, 2))
        for j, p in enumerate(("a", "e", "i", "node", "argp")):
            a11 = 2.0 * float(b1.xl @ b1.dxl[p]) + float(b1.dxll[p] @ delta) \
                + float(b1.xll @ b1.dx[p])
            a12 = -float(b1.dxl[p] @ b2.xl)
            a22 = -float(b2.xll @ b1.dx[p])
            dA5[j] = [[a11, a12], [a12, a22]]
        dA_dl = np.array([
            [3.0 * float(b1.xl @ b1.xll) + float(b1.xlll @ delta),
             -float(b1.xll @ b2.xl)],
            [-float(b1.xll @ b2.xl), -float(b2.xll @ b1.xl)]])
        dA_dlp = np.array([
            [-float(b1.xll @ b2.xl), -float(b1.xl @ b2.xll)],
            [-float(b1.xl @ b2.xll),
             3.0 * float(b2.xl @ b2.xll) - float(b2.xlll @ delta)]])
        dA_chain = np.einsum("pk,pij->kij", C, dA5)
        self.dA_dy = (dA_chain
                      + np.einsum("k,ij->kij", self.dVh_dy[:, 0], dA_dl)
                      + np.einsum("k,ij->kij", self.dVh_dy[:, 1], dA_dlp))
        self.ddetA_dy = (self.dA_dy[:, 0, 0] * self.A[1, 1]
                         + self.A[0, 0] * self.dA_dy[:, 1, 1]
                         - 2.0 * self.A[0, 1] * self.dA_dy[:, 0, 1])
        self.dd2h_dy = 2.0 * self.d_tilde * self.ddtilde_dy

        # asteroid element partials chained to y, as functions of l
        self._C = C

    def model(self) -> ApproxDistanceModel:
        return ApproxDistanceModel(d_sq=self.d_sq, V_h=self.V_h,
                                   A=CrossingMatrix(A=self.A, det=self.detA))

    def delta_sq_dy(self, u):
        """d(delta^2)/dy at fixed V; u = V - V_h, shape (..., 2).
        Returns shape (..., 4)."""
        Au = u @ self.A.T
        term_vh = -2.0 * np.einsum("kj,...j->...k", self.dVh_dy, Au)
        term_A = np.einsum("...i,kij,...j->...k", u, self.dA_dy, u)
        return self.dd2h_dy + term_vh + term_A

    def phi_sq_dy(self, u):
        """d(delta^2)/dy at fixed u (no V_h transport): the integrand of
        the derivative of the fixed-square integral of 1/delta."""
        term_A = np.einsum("...i,kij,...j->...k", u, self.dA_dy, u)
        return self.dd2h_dy + term_A


def _asteroid_dXdy(config: TwoOrbitConfig, l, C=None):
    """dX/d(G,Z,g,z) for the asteroid at mean anomalies l; shape l+(3,4)."""
    if C is None:
        C = _delaunay_chain(config.asteroid)
    b = PositionBundle(config.asteroid, l)
    dx5 = np.stack([b.dx[p] for p in ("a", "e", "i", "node", "argp")], axis=-1)
    return b.x, dx5 @ C


def _gl_cache(n, _cache={}):
    if n not in _cache:
        _cache[n] = leggauss(n)
    return _cache[n]


def _weighted_sum(f, V, w, chunk=65536):
    """w @ f(V) evaluated in chunks to bound peak memory."""
    out = 0.0
    for i in range(0, len(w), chunk):
        out = out + w[i:i + chunk] @ f(V[i:i + chunk])
    return out


def _radial_edges(lo, hi, scale, ratio=2.5):
    """Panel edges on [lo, hi] refined geometrically toward lo, with the
    finest panel no smaller than `scale` (the smoothness scale of the
    integrand near the center)."""
    if hi <= lo:
        return np.array([lo, hi])
    anchor = max(lo, scale)
    edges = [hi]
    while edges[-1] > ratio * anchor and len(edges) < 60:
        edges.append(edges[-1] / ratio)
    edges.append(lo)
    return np.array(edges[::-1])


def _planet_grid(planet: KeplerianElements, n, _cache={}):
    key = (planet.a, planet.e, planet.i, planet.node, planet.argp, n)
    if key not in _cache:
        if len(_cache) > 64:
            _cache.clear()
        l = TWO_PI * (np.arange(n) + 0.5) / n
        _cache[key] = PositionBundle(planet, l).x
    return _cache[key]


def _product_gl_gradient(config, n, C):
    """Plain product-rule estimate of (2 pi)^-2 * integral of d(1/d)/dy
    over the torus; no mu k^2 factor.

    Uses the periodic trapezoid rule (equispaced midpoints): geometric
    convergence for periodic analytic integrands, and exact equivariance
    under rotations of the planet's orbit, so symmetry-protected
    conservation laws (e.g. Z for a circular coplanar planet) hold to
    roundoff in the discretized field as well.
    """
    l = TWO_PI * (np.arange(n) + 0.5) / n
    X1, dXdy = _asteroid_dXdy(config, l, C)
    X2 = _planet_grid(config.planet, n)
    delta = X1[:, None, :] - X2[None, :, :]                  # (n, n, 3)
    d3 = np.sum(delta * delta, axis=-1) ** 1.5
    proj = np.einsum("imc,ick->imk", delta, dXdy)            # (n, n, 4)
    return -np.sum(proj / d3[..., None], axis=(0, 1)) / (n * n)


class _PolarGrid:
    """Elliptic polar quadrature nodes around V_h, aligned with A^(1/2).

    Radial panels refine geometrically toward the center down to d_scale,
    and the angular range is split at the kink angles of the square
    boundary so each theta panel is smooth.
    """

    def __init__(self, A, V_h, d_scale, n_theta=192, n_gl=20):
        lam, U = np.linalg.eigh(A)
        self.sqrtA_inv = U @ np.diag(1.0 / np.sqrt(lam)) @ U.T
        self.sqrt_det = math.sqrt(lam[0] * lam[1])
        self.V_h = np.asarray(V_h, dtype=float)
        self.d_scale = max(d_scale, 1e-9)
        self.n_theta = n_theta
        self.n_gl = n_gl
        M = self.sqrtA_inv
        kinks = []
        for s in (1.0, -1.0):
            c1 = M[0, 0] - s * M[1, 0]
            c2 = M[0, 1] - s * M[1, 1]
            th = math.atan2(-c1, c2)
            kinks.extend([th % TWO_PI, (th + math.pi) % TWO_PI])
        kinks = sorted(kinks)
        self.arcs = [(kinks[i], kinks[(i + 1) % 4] if i < 3 else kinks[0] + TWO_PI)
                     for i in range(4)]

    def _theta_nodes(self, extra_breaks=()):
        """Composite Gauss-Legendre: each smooth arc is split into equal
        panels of 24 nodes (localized angular features from secondary
        minima are resolved far better by composite panels than by one
        high-order rule per arc).  extra_breaks inserts additional panel
        edges at angles where the integrand has kinks (e.g. rays tangent
        to an excluded disk)."""
        per_panel = 24
        n_panels = max(1, int(round(self.n_theta / per_panel)))
        xs, ws = _gl_cache(per_panel)
        th, wt = [], []
        for a, b in self.arcs:
            edges = np.linspace(a, b, n_panels + 1)
            for brk in extra_breaks:
                x = a + (brk - a) % TWO_PI
                if not (a + 1e-9 < x < b - 1e-9):
                    continue
                # geometric grading toward the break: the excluded chord
                # varies like sqrt(theta - theta_t) there
                extra = [x]
                lo_gap = x - edges[np.searchsorted(edges, x) - 1]
                hi_gap = edges[np.searchsorted(edges, x)] - x
                for k in range(1, 11):
                    extra.append(x - lo_gap * 0.5 ** k)
                    extra.append(x + hi_gap * 0.5 ** k)
                edges = np.unique(np.concatenate([edges, extra]))
            for lo, hi in zip(edges[:-1], edges[1:]):
                th.append(0.5 * (hi - lo) * xs + 0.5 * (lo + hi))
                wt.append(0.5 * (hi - lo) * ws)
        return np.concatenate(th), np.concatenate(wt)

    def _p_of_theta(self, theta):
        w = self.sqrtA_inv @ np.stack([np.cos(theta), np.sin(theta)])
        return math.pi / np.maximum(np.abs(w[0]), np.abs(w[1])), w

    def p_min(self):
        theta = np.linspace(0.0, TWO_PI, 512, endpoint=False)
        P, _ = self._p_of_theta(theta)
        return float(P.min())

    def nodes(self, r, region):
        """(V, weights) with V shape (N, 2); weights include the polar
        Jacobian rho and the metric factor 1/sqrt(det A).

        region: 'disk' (rho <= r), 'outside' (r <= rho <= boundary of the
        fundamental square), or 'full' (their union, the whole torus).
        """
        theta, wt = self._theta_nodes()
        P, _ = self._p_of_theta(theta)
        xs, ws = _gl_cache(self.n_gl)
        rho_list, wr_list = [], []
        if region in ("disk", "full") and r > 0:
            edges = _radial_edges(0.0, r, self.d_scale)
            for lo, hi in zip(edges[:-1], edges[1:]):
                rho = 0.5 * (hi - lo) * xs + 0.5 * (lo + hi)
                wr = 0.5 * (hi - lo) * ws
                rho_list.append(np.broadcast_to(rho, (len(theta), self.n_gl)))
                wr_list.append(np.broadcast_to(wr, (len(theta), self.n_gl)))
        if region in ("outside", "full"):
            r0 = max(r, max(1e-12, 1e-6 * self.d_scale))
            max_ratio = float(np.max(P / r0))
            n_panels = max(4, int(math.ceil(math.log(max_ratio) / math.log(2.5))))
            tpow = np.linspace(0.0, 1.0, n_panels + 1)
            ratio = P / r0
            for j in range(n_panels):
                lo = r0 * ratio[:, None] ** tpow[j]
                hi = r0 * ratio[:, None] ** tpow[j + 1]
                rho = 0.5 * (hi - lo) * xs[None, :] + 0.5 * (lo + hi)
                wr = 0.5 * (hi - lo) * ws[None, :]
                rho_list.append(rho)
                wr_list.append(wr)
        rho = np.concatenate(rho_list, axis=1)            # (n_th, n_r)
        wr = np.concatenate(wr_list, axis=1)
        dirs = self.sqrtA_inv @ np.stack([np.cos(theta), np.sin(theta)])  # (2, n_th)
        u = rho[..., None] * dirs.T[:, None, :]           # (n_th, n_r, 2)
        V = self.V_h + u
        wtot = (wt[:, None] * wr * rho) / self.sqrt_det
        return V.reshape(-1, 2), wtot.ravel()


def _remainder_integrand(config, geoms, C):
    """Pointwise d/dy(1/d - sum_h 1/delta_h) as a function of V (N, 2)."""
    def f(V):
        l, lp = V[:, 0], V[:, 1]
        X1, dXdy = _asteroid_dXdy(config, l, C)
        X2 = PositionBundle(config.planet, lp).x
        delta = X1 - X2
        d3 = np.sum(delta * delta, axis=-1) ** 1.5
        out = -np.einsum("nc,nck->nk", delta, dXdy) / d3[:, None]
        for g in geoms:
            u = wrap_symmetric(V - g.V_h.as_array())
            q = np.einsum("ni,ij,nj->n", u, g.A, u)
            delta3 = (g.d_sq + q) ** 1.5
            out += 0.5 * g.delta_sq_dy(u) / delta3[:, None]
        return out
    return f


def _plain_integrand(config, C):
    def f(V):
        l, lp = V[:, 0], V[:, 1]
        X1, dXdy = _asteroid_dXdy(config, l, C)
        X2 = PositionBundle(config.planet, lp).x
        delta = X1 - X2
        d3 = np.sum(delta * delta, axis=-1) ** 1.5
        return -np.einsum("nc,nck->nk", delta, dXdy) / d3[:, None]
    return f


def _phi_integrand(geom):
    def f(V):
        u = wrap_symmetric(V - geom.V_h.as_array())
        q = np.einsum("ni,ij,nj->n", u, geom.A, u)
        delta3 = (geom.d_sq + q) ** 1.5
        return -0.5 * geom.phi_sq_dy(u) / delta3[:, None]
    return f


def _polar_integrate(geom, f, r, region, refine=1, d_scale=None):
    if d_scale is None:
        d_scale = max(abs(geom.d_tilde), 1e-9)
    grid = _PolarGrid(geom.A, geom.V_h.as_array(), d_scale,
                      n_theta=96 * refine, n_gl=8 + 6 * refine)
    V, w = grid.nodes(r, region)
    return _weighted_sum(f, V, w)


def default_extraction_radius(config: TwoOrbitConfig, point: CriticalPoint,
                              points=None):
    """0.25 x (A_h-metric distance from V_h to the nearest other critical
    point), clamped to [0.05, 1.0]."""
    if points is None:
        points = find_critical_points(config)
    A = crossing_matrix(config, point).A
    best = np.inf
    for p in points:
        if p.index == point.index:
            continue
        u = wrap_symmetric(p.V.as_array() - point.V.as_array())
        best = min(best, math.sqrt(float(u @ A @ u)))
    if not np.isfinite(best):
        best = 4.0
    return min(max(0.25 * best, 0.05), 1.0)


def _clamp_radius(geom, r):
    """Keep the extraction disk inside the fundamental square around V_h."""
    pmin = _PolarGrid(geom.A, geom.V_h.as_array(), 1e-3).p_min()
    return min(r, 0.9 * pmin)


def averaged_gradient_plain(config: TwoOrbitConfig, mu, margin=EXTRACTION_TRIGGER,
                            tol=1e-11, n0=64, refine=2, points=None):
    """Averaged gradient dRbar/dy, y = (G, Z, g, z), by direct quadrature.

    Far from crossings this is a doubled periodic product rule; when the
    orbit distance is small the peak of the integrand is resolved in
    polar coordinates around the closest minimum instead.  The average of
    the indirect part of the perturbation vanishes and is omitted.
    """
    C = _delaunay_chain(config.asteroid)
    if points is None:
        points = find_critical_points(config)
    dmin, h = orbit_distance(config, points)
    if margin is not None and dmin < margin:
        raise TooCloseToCrossing(
            f"d_min = {dmin:.4e} au < margin {margin:.4e}; use extended_field")
    if dmin > 0.05:
        n = n0
        prev = _product_gl_gradient(config, n, C)
        for _ in range(5):
            n *= 2
            cur = _product_gl_gradient(config, n, C)
            if np.max(np.abs(cur - prev)) < tol * max(np.max(np.abs(cur)), 1e-30):
                prev = cur
                break
            prev = cur
        return mu * GAUSS_K2 * prev
    point = next(p for p in points if p.index == h)
    geom = CrossingGeometry(config, point)
    f = _plain_integrand(config, C)
    val = _polar_integrate(geom, f, 0.0, "outside", refine=refine)
    return mu * GAUSS_K2 * val / TWO_PI ** 2


def remainder_gradient_integral(config: TwoOrbitConfig, point: CriticalPoint,
                                r, refine=2, geom=None):
    """Integral over the torus of d/dy(1/d - 1/delta_h); finite through
    the crossing.  No mu k^2 / (2 pi)^2 prefactor."""
    if geom is None:
        geom = CrossingGeometry(config, point)
    C = _delaunay_chain(config.asteroid)
    f = _remainder_integrand(config, [geom], C)
    return _polar_integrate(geom, f, r, "full", refine=refine)


def _phi_gradient(geom, r, refine=2):
    """d/dy of the fixed-square integral of 1/delta_h (pointwise branch)."""
    f = _phi_integrand(geom)
    return _polar_integrate(geom, f, 0.0, "outside", refine=refine)


def disk_delta_integral_closed_form(geom: CrossingGeometry, r):
    """Closed form of the disk integral of 1/delta_h."""
    d_h = abs(geom.d_tilde)
    return TWO_PI / math.sqrt(geom.detA) * (math.sqrt(geom.d_sq + r * r) - d_h)


def analytic_domain_term(config: TwoOrbitConfig, point: CriticalPoint, r,
                         side, refine=2, geom=None):
    """The analytic map G^{side}_{h,k} (4-vector), side in {plus, minus}."""
    if side not in ("plus", "minus"):
        raise ValueError("side must be 'plus' or 'minus'")
    if geom is None:
        geom = CrossingGeometry(config, point)
    d_t = geom.d_tilde
    d_h = abs(d_t)
    s_half = math.sqrt(geom.d_sq + r * r)
    c = TWO_PI / math.sqrt(geom.detA)
    dc_dy = -math.pi * geom.detA ** -1.5 * geom.ddetA_dy
    F = dc_dy * s_half + c * (d_t / s_half) * geom.ddtilde_dy
    # smooth outer term: pointwise derivative of the full-square integral
    # minus the pointwise derivative of the closed-form disk part
    dphi = _phi_gradient(geom, r, refine=refine)
    s0 = 0.0 if d_h < 1e-14 else math.copysign(1.0, d_t)
    side_disk = (dc_dy * (s_half - d_h)
                 + c * (d_t * geom.ddtilde_dy / s_half - s0 * geom.ddtilde_dy))
    outer = dphi - side_disk
    sgn = 1.0 if side == "plus" else -1.0
    return F - sgn * (dc_dy * d_t + c * geom.ddtilde_dy) + outer


def extended_field(config: TwoOrbitConfig, point: CriticalPoint, mu, side,
                   r=None, refine=2, points=None):
    """One-sided Lipschitz extension (dRbar/dy)_h^side of the averaged
    gradient across the crossing set."""
    if r is None:
        r = default_extraction_radius(config, point, points)
    geom = CrossingGeometry(config, point)
    r = _clamp_radius(geom, r)
    rem = remainder_gradient_integral(config, point, r, refine=refine, geom=geom)
    g = analytic_domain_term(config, point, r, side, refine=refine, geom=geom)
    return mu * GAUSS_K2 / TWO_PI ** 2 * (rem + g)


def extended_field_pair(config: TwoOrbitConfig, point: CriticalPoint, mu,
                        r=None, refine=2, points=None) -> ExtendedFieldPair:
    if r is None:
        r = default_extraction_radius(config, point, points)
    geom = CrossingGeometry(config, point)
    r = _clamp_radius(geom, r)
    rem = remainder_gradient_integral(config, point, r, refine=refine, geom=geom)
    gp = analytic_domain_term(config, point, r, "plus", refine=refine, geom=geom)
    gm = analytic_domain_term(config, point, r, "minus", refine=refine, geom=geom)
    scale = mu * GAUSS_K2 / TWO_PI ** 2
    plus = scale * (rem + gp)
    minus = scale * (rem + gm)
    return ExtendedFieldPair(plus=plus, minus=minus, diff=minus - plus)


def field_jump(config: TwoOrbitConfig, point: CriticalPoint, mu, geom=None):
    """Closed-form difference Diff_h between the minus and plus extensions."""
    if geom is None:
        geom = CrossingGeometry(config, point)
    dinv = geom.detA ** -0.5
    ddinv_dy = -0.5 * geom.detA ** -1.5 * geom.ddetA_dy
    return mu * GAUSS_K2 / math.pi * (ddinv_dy * geom.d_tilde
                                      + dinv * geom.ddtilde_dy)


def extended_field_double(config: TwoOrbitConfig, mu, side1, side2,
                          r1=None, r2=None, refine=3):
    """Extension with extraction at two crossing-relevant minima: the
    remainder is 1/d - 1/delta_1 - 1/delta_2, one analytic term per
    minimum; sides chosen independently."""
    points = find_critical_points(config)
    mins = sorted(minima(points), key=lambda p: p.index)
    if len(mins) < 2:
        raise DegenerateCrossing("configuration has fewer than two minima")
    p1, p2 = mins[0], mins[1]
    g1 = CrossingGeometry(config, p1)
    g2 = CrossingGeometry(config, p2)
    if r1 is None:
        r1 = default_extraction_radius(config, p1, points)
    if r2 is None:
        r2 = default_extraction_radius(config, p2, points)
    # keep the two extraction disks disjoint
    u12 = wrap_symmetric(p2.V.as_array() - p1.V.as_array())
    sep1 = math.sqrt(float(u12 @ g1.A @ u12))
    sep2 = math.sqrt(float(u12 @ g2.A @ u12))
    r1 = min(r1, 0.4 * sep1)
    r2 = min(r2, 0.4 * sep2)
    # keep each disk inside the other's fundamental square
    p1min = _PolarGrid(g1.A, g1.V_h.as_array(), 1e-3).p_min()
    p2min = _PolarGrid(g2.A, g2.V_h.as_array(), 1e-3).p_min()
    r1 = min(r1, 0.9 * p1min)
    r2 = min(r2, 0.9 * p2min)

    C = _delaunay_chain(config.asteroid)
    # Exact regrouping: the full-torus integral of d/dy(1/delta_2) at
    # fixed V equals dPhi_2/dy at fixed offset (the quadratic model is
    # even, so the moving-domain flux cancels).  The remainder therefore
    # only ever needs 1/d - 1/delta_1, split so that each piece is
    # integrated on a grid centered where its small-scale structure lives.
    f1 = _remainder_integrand(config, [g1], C)
    rem = (_ray_panel_integral(g1, f1, refine, exclude=(g2, r2))
           + _ray_panel_integral(g2, f1, refine, r_max=r2, seam=g1.V_h)
           - _phi_gradient(g2, 0.0, refine=refine))
    ga = analytic_domain_term(config, p1, r1, side1, refine=refine, geom=g1)
    gb = analytic_domain_term(config, p2, r2, side2, refine=refine, geom=g2)
    return mu * GAUSS_K2 / TWO_PI ** 2 * (rem + ga + gb)


def _subtract_interval(segments, lo, hi):
    out = []
    for a, b in segments:
        if hi <= a or lo >= b:
            out.append((a, b))
            continue
        if lo > a:
            out.append((a, lo))
        if hi < b:
            out.append((hi, b))
    return out


def _seam_breakpoints(V0, d, r_max, seam_center):
    """rho values in (0, r_max) where the ray V0 + rho d crosses the seam
    of the fundamental square around seam_center (the lines where the
    wrapped offset to that center jumps)."""
    out = []
    for axis in range(2):
        if abs(d[axis]) < 1e-12:
            continue
        target = seam_center[axis] + math.pi
        base = (target - V0[axis]) / d[axis]
        step = TWO_PI / d[axis]
        k_lo = math.floor((0.0 - base) / step) - 1
        for k in range(int(k_lo), int(k_lo) + 5):
            rho = base + k * step
            if 1e-12 < rho < r_max - 1e-12:
                out.append(rho)
    return sorted(out)


def _tangency_angles(grid, V0, geom_o, r_o):
    """Angles at which a ray from V0 grazes the excluded disk (where the
    per-ray excluded interval appears or vanishes); panel edges there
    restore smooth-panel convergence of the theta rule."""
    from scipy.optimize import brentq
    c0 = wrap_symmetric(V0 - geom_o.V_h.as_array())
    A2 = geom_o.A
    thetas = np.linspace(0.0, TWO_PI, 2048, endpoint=False)
    dirs = grid.sqrtA_inv @ np.stack([np.cos(thetas), np.sin(thetas)])
    out = []
    for di in (-TWO_PI, 0.0, TWO_PI):
        for dj in (-TWO_PI, 0.0, TWO_PI):
            c = c0 + np.array([di, dj])
            gamma = float(c @ A2 @ c) - r_o * r_o
            if gamma < 0:
                continue    # center inside the disk: no tangency
            alpha = np.einsum("in,ij,jn->n", dirs, A2, dirs)
            beta = 2.0 * np.einsum("i,ij,jn->n", c, A2, dirs)
            disc = beta * beta - 4.0 * alpha * gamma
            sign = np.sign(disc)
            idx = np.nonzero(sign[:-1] * np.roll(sign, -1)[:-1] < 0)[0]
            def disc_of(th):
                d = grid.sqrtA_inv @ np.array([math.cos(th), math.sin(th)])
                a_ = float(d @ A2 @ d)
                b_ = 2.0 * float(c @ A2 @ d)
                return b_ * b_ - 4.0 * a_ * gamma
            for i in idx:
                out.append(brentq(disc_of, thetas[i], thetas[i + 1]))
    return out


def _ray_panel_integral(geom_c, f, refine, r_max=None, exclude=None, seam=None):
    """Polar integral centered at geom_c's minimum, built ray by ray.

    r_max: disk radius (None = out to the square boundary).  exclude =
    (geom_o, r_o) removes the metric disk around the other minimum from
    each ray exactly (quadratic roots, including the 2 pi images).  seam:
    an AnomalyPair whose fundamental-square seam lines become panel
    breakpoints -- the wrapped quadratic model centered there is
    discontinuous across them.
    """
    grid = _PolarGrid(geom_c.A, geom_c.V_h.as_array(),
                      max(abs(geom_c.d_tilde), 1e-9),
                      n_theta=96 * refine, n_gl=8 + 6 * refine)
    breaks = ()
    if exclude is not None:
        breaks = _tangency_angles(grid, geom_c.V_h.as_array(), *exclude)
    theta, wt = grid._theta_nodes(breaks)
    P, _ = grid._p_of_theta(theta)
    dirs = grid.sqrtA_inv @ np.stack([np.cos(theta), np.sin(theta)])
    xs, ws = _gl_cache(grid.n_gl)
    V0 = geom_c.V_h.as_array()
    seam_c = seam.as_array() if seam is not None else None
    V_all, w_all = [], []
    for j in range(len(theta)):
        d = dirs[:, j]
        hi_j = float(P[j]) if r_max is None else min(r_max, float(P[j]))
        segments = [(0.0, hi_j)]
        if exclude is not None:
            geom_o, r_o = exclude
            A2 = geom_o.A
            c0 = wrap_symmetric(V0 - geom_o.V_h.as_array())
            for di in (-TWO_PI, 0.0, TWO_PI):
                for dj in (-TWO_PI, 0.0, TWO_PI):
                    c = c0 + np.array([di, dj])
                    alpha = float(d @ A2 @ d)
                    beta = 2.0 * float(c @ A2 @ d)
                    gamma = float(c @ A2 @ c) - r_o * r_o
                    disc = beta * beta - 4.0 * alpha * gamma
                    if disc <= 0:
                        continue
                    s = math.sqrt(disc)
                    segments = _subtract_interval(
                        segments, (-beta - s) / (2 * alpha),
                        (-beta + s) / (2 * alpha))
        if seam_c is not None:
            for rho_b in _seam_breakpoints(V0, d, hi_j, seam_c):
                new = []
                for a, b in segments:
                    if a < rho_b < b:
                        new.extend([(a, rho_b), (rho_b, b)])
                    else:
                        new.append((a, b))
                segments = new
        for lo, hi in segments:
            edges = _radial_edges(lo, hi, grid.d_scale)
            for a, b in zip(edges[:-1], edges[1:]):
                rho = 0.5 * (b - a) * xs + 0.5 * (a + b)
                wr = 0.5 * (b - a) * ws
                V_all.append(V0 + rho[:, None] * d)
                w_all.append(wt[j] * wr * rho / grid.sqrt_det)
    V = np.concatenate(V_all)
    w = np.concatenate(w_all)
    return _weighted_sum(f, V, w)


def averaged_perturbing_function(config: TwoOrbitConfig, mu, n=256):
    """Rbar itself (scalar) by periodic-trapezoid product quadrature; used
    as a first-integral diagnostic, not by the propagator."""
    l = TWO_PI * (np.arange(n) + 0.5) / n
    X1 = PositionBundle(config.asteroid, l).x
    X2 = _planet_grid(config.planet, n)
    delta = X1[:, None, :] - X2[None, :, :]
    invd = 1.0 / np.linalg.norm(delta, axis=-1)
    return mu * GAUSS_K2 * float(np.sum(invd)) / (n * n)
