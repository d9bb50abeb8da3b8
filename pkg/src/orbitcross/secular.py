"""Gauss-collocation integration of the averaged equations of motion and
assembly of generalized trajectories across orbit crossings.

The state is Y = (G, Z, g, z) at fixed semimajor axis; the flow is
Ydot = (dRbar/dg, dRbar/dz, -dRbar/dG, -dRbar/dZ).  Near a crossing of a
planet's trajectory the field evaluator switches to the one-sided
Lipschitz extension of the incoming side, the crossing time is located on
the collocation dense output, the step is cut to land on it, and
integration restarts with the outgoing-side extension.  The recorded jump
between the one-sided derivatives is the closed-form field difference.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import brentq

from .averaged import (EXTRACTION_TRIGGER, _delaunay_chain,
                       _product_gl_gradient, averaged_gradient_plain,
                       default_extraction_radius, extended_field, field_jump,
                       Y_to_elements)
from .constants import DAYS_PER_YEAR, GAUSS_K, GAUSS_K2
from .distance import (CriticalPoint, TwoOrbitConfig, find_critical_points,
                       minima, refine_critical_point, signed_distance_value)
from .ephemeris import EphemerisProvider
from .errors import StageNonConvergence, StepUnderflow, TangentCrossing

CROSSING_TOL = 1e-10          # au, |d_tilde| at a located crossing
TANGENT_SLOPE = 1e-8 / DAYS_PER_YEAR   # au/day; below this a root is tangent
MIN_STEP = 1e-6               # days


def _butcher(s):
    if s == 2:
        r = math.sqrt(3.0) / 6.0
        c = np.array([0.5 - r, 0.5 + r])
        A = np.array([[0.25, 0.25 - r], [0.25 + r, 0.25]])
        b = np.array([0.5, 0.5])
    elif s == 3:
        r15 = math.sqrt(15.0)
        c = np.array([0.5 - r15 / 10.0, 0.5, 0.5 + r15 / 10.0])
        A = np.array([
            [5.0 / 36.0, 2.0 / 9.0 - r15 / 15.0, 5.0 / 36.0 - r15 / 30.0],
            [5.0 / 36.0 + r15 / 24.0, 2.0 / 9.0, 5.0 / 36.0 - r15 / 24.0],
            [5.0 / 36.0 + r15 / 30.0, 2.0 / 9.0 + r15 / 15.0, 5.0 / 36.0]])
        b = np.array([5.0 / 18.0, 4.0 / 9.0, 5.0 / 18.0])
    else:
        raise ValueError("Gauss collocation implemented for s in {2, 3}")
    # Lagrange basis polynomials at the nodes and their antiderivatives,
    # for collocation dense output
    basis, primitives = [], []
    for i in range(s):
        p = np.poly1d([1.0])
        for j in range(s):
            if j != i:
                p *= np.poly1d([1.0, -c[j]]) / (c[i] - c[j])
        basis.append(p)
        primitives.append(p.integ())
    return c, A, b, basis, primitives


_TABLEAUX = {s: _butcher(s) for s in (2, 3)}


@dataclass
class SecularState:
    Y: np.ndarray       # (G, Z, g, z)
    t: float            # epoch, days (MJD)
    a: float            # fixed semimajor axis, au

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.shape != (4,):
            raise ValueError("Y must be a 4-vector (G, Z, g, z)")
        L = GAUSS_K * math.sqrt(self.a)
        G, Z = self.Y[0], self.Y[1]
        if not 0 < G <= L * (1 + 1e-12):
            raise ValueError(f"requires 0 < G <= k*sqrt(a), got G={G}, L={L}")
        if abs(Z) > G * (1 + 1e-12):
            raise ValueError("requires |Z| <= G")

    def elements(self, mean_anom=0.0):
        return Y_to_elements(self.a, self.Y, mean_anom=mean_anom)


@dataclass(frozen=True)
class CrossingEvent:
    t_c: float
    planet: str
    h: int
    config_c: TwoOrbitConfig
    applied_jump: np.ndarray      # one-sided Ydot difference (after - before)
    side_before: int
    side_after: int

    def __post_init__(self):
        if self.side_before != -self.side_after:
            raise ValueError("crossing must flip the side")


@dataclass
class Step:
    """One collocation step with its dense output polynomial."""
    t0: float
    h: float
    Y0: np.ndarray
    K: np.ndarray       # (s, 4) stage derivatives
    s: int

    def y_at(self, t):
        theta = (t - self.t0) / self.h
        _, _, _, _, prim = _TABLEAUX[self.s]
        L = np.array([p(theta) for p in prim])
        return self.Y0 + self.h * (L @ self.K)

    def ydot_at(self, t):
        theta = (t - self.t0) / self.h
        basis = _TABLEAUX[self.s][3]
        ell = np.array([p(theta) for p in basis])
        return ell @ self.K

    @property
    def t1(self):
        return self.t0 + self.h


@dataclass
class Segment:
    steps: list

    @property
    def t_start(self):
        return self.steps[0].t0

    @property
    def t_end(self):
        return self.steps[-1].t1

    def _find(self, t):
        # containing step: last one whose start t0 has been passed by t
        # in the direction of integration
        sign = 1.0 if self.steps[0].h > 0 else -1.0
        ts = [sign * st.t0 for st in self.steps]        # ascending
        idx = max(0, min(len(self.steps) - 1, bisect_right(ts, sign * t) - 1))
        return self.steps[idx]

    def y_at(self, t):
        return self._find(t).y_at(t)

    def ydot_at(self, t):
        return self._find(t).ydot_at(t)


@dataclass
class GeneralizedTrajectory:
    a: float
    segments: list
    events: list
    provenance: dict = dc_field(default_factory=dict)

    @property
    def t_start(self):
        return self.segments[0].t_start

    @property
    def t_end(self):
        return self.segments[-1].t_end

    def _segment(self, t, side=+1):
        forward = (self.t_end - self.t_start) >= 0
        tol = 1e-9 * max(1.0, abs(t))
        last = len(self.segments) - 1
        for j, seg in enumerate(self.segments):
            lo, hi = seg.t_start, seg.t_end
            if not forward:
                lo, hi = hi, lo
            if lo - tol <= t <= hi + tol:
                # at interior boundaries, side selects the earlier-time
                # (side<0) or later-time (side>0) neighbouring segment
                earlier = j - 1 if forward else j + 1
                later = j + 1 if forward else j - 1
                if abs(t - lo) <= tol and side < 0 and 0 <= earlier <= last:
                    return self.segments[earlier]
                if abs(t - hi) <= tol and side > 0 and 0 <= later <= last:
                    return self.segments[later]
                return seg
        raise ValueError(f"epoch {t} outside trajectory span")

    def y_at(self, t):
        return self._segment(t).y_at(t)

    def ydot_at(self, t, side=+1):
        """One-sided derivative; side=-1 takes the limit from before t."""
        return self._segment(t, side).ydot_at(t)

    def state_at(self, t) -> SecularState:
        return SecularState(Y=self.y_at(t), t=t, a=self.a)


def _jmap(grad):
    """Ydot from the averaged gradient dRbar/d(G, Z, g, z)."""
    return np.array([grad[2], grad[3], -grad[0], -grad[1]])


class _MinimaTracker:
    """Warm-started critical points of d^2 for one planet: Newton-polish
    from the previous anomaly pairs, with full re-detection whenever a
    polish fails or two points collide."""

    def __init__(self):
        self.points = None

    def refresh(self, config):
        self.points = find_critical_points(config)
        return self.points

    def get(self, config):
        if self.points is None:
            return self.refresh(config)
        new = []
        for p in self.points:
            q = refine_critical_point(config, p.V)
            if q is None or q.kind != p.kind:
                return self.refresh(config)
            new.append(CriticalPoint(V=q.V, d=q.d, hessian=q.hessian,
                                     kind=q.kind, index=p.index))
        for i in range(len(new)):
            for j in range(i + 1, len(new)):
                du = np.abs(np.mod(new[i].V.as_array() - new[j].V.as_array()
                                   + math.pi, 2 * math.pi) - math.pi)
                if np.max(du) < 1e-4:
                    return self.refresh(config)
        self.points = new
        return new

    def refine_minima(self, config):
        """Cheaper update polishing only the tracked minima; the other
        stationary points are left stale (they only matter near crossings,
        where get() is used instead)."""
        if self.points is None:
            return minima(self.refresh(config))
        out = []
        for idx, p in enumerate(self.points):
            if p.kind != "minimum":
                continue
            q = refine_critical_point(config, p.V)
            if q is None or q.kind != "minimum":
                return minima(self.refresh(config))
            q = CriticalPoint(V=q.V, d=q.d, hessian=q.hessian,
                              kind=q.kind, index=p.index)
            self.points[idx] = q
            out.append(q)
        return out


class SecularField:
    """Evaluator of Ydot(t, Y) for the averaged flow, with per-planet
    crossing bookkeeping (locked extension sides, tracked minima, cached
    quadrature sizes and extraction radii)."""

    def __init__(self, a, provider: EphemerisProvider, planets, refine=1,
                 trigger=EXTRACTION_TRIGGER, t_freeze=None):
        self.a = a
        self.provider = provider
        self.planets = list(planets)
        self.refine = refine
        self.trigger = trigger
        self.t_freeze = t_freeze        # planet elements frozen at this epoch
        self.trackers = {p.name: _MinimaTracker() for p in self.planets}
        self.locked = {}                # planet -> {h: side}
        self._radius = {}               # (planet, h) -> extraction r
        self._n_quad = {}               # planet -> calibrated trapezoid n
        self._n_age = {}
        self.n_evals = 0

    # -- geometry helpers ---------------------------------------------
    def asteroid(self, Y):
        return Y_to_elements(self.a, Y)

    def config(self, t, Y, name) -> TwoOrbitConfig:
        te = self.t_freeze if self.t_freeze is not None else t
        return TwoOrbitConfig(asteroid=self.asteroid(Y),
                              planet=self.provider.elements(name, te))

    def signed_minima(self, t, Y):
        """{planet: list of (h, d_tilde)} over all tracked minima."""
        out = {}
        for spec in self.planets:
            cfg = self.config(t, Y, spec.name)
            pts = self.trackers[spec.name].get(cfg)
            vals = []
            for p in minima(pts):
                vals.append((p.index, signed_distance_value(cfg, p)))
            out[spec.name] = vals
        return out

    def dtilde(self, t, Y, name, h):
        cfg = self.config(t, Y, name)
        pts = self.trackers[name].get(cfg)
        point = next(p for p in pts if p.index == h)
        return signed_distance_value(cfg, point)

    def lock(self, name, h, side):
        self.locked.setdefault(name, {})[h] = int(side)

    def unlock(self, name, h):
        self.locked.get(name, {}).pop(h, None)

    # -- quadrature calibration -----------------------------------------
    def _plain_gradient(self, cfg, mu, name, C):
        n = self._n_quad.get(name)
        if n is not None and self._n_age[name] < 400:
            self._n_age[name] += 1
            return mu * GAUSS_K2 * _product_gl_gradient(cfg, n, C)
        n, prev = 64, None
        cur = _product_gl_gradient(cfg, n, C)
        while n < 4096:
            n *= 2
            prev, cur = cur, _product_gl_gradient(cfg, n, C)
            if np.max(np.abs(cur - prev)) < 1e-10 * max(np.max(np.abs(cur)), 1e-30):
                break
        self._n_quad[name] = n
        self._n_age[name] = 0
        return mu * GAUSS_K2 * cur

    # -- field -----------------------------------------------------------
    def gradient(self, t, Y):
        """Sum over planets of dRbar/dy with crossing-side extensions."""
        self.n_evals += 1
        C = _delaunay_chain(self.asteroid(Y))
        total = np.zeros(4)
        for spec in self.planets:
            if spec.mu == 0.0:
                continue
            cfg = self.config(t, Y, spec.name)
            tracker = self.trackers[spec.name]
            mins = tracker.refine_minima(cfg)
            d_abs = [(abs(signed_distance_value(cfg, p)), p) for p in mins]
            d_abs.sort(key=lambda x: x[0])
            dmin, point = d_abs[0]
            if dmin < 0.05:
                pts = tracker.get(cfg)
            if dmin < self.trigger:
                dt_signed = signed_distance_value(cfg, point)
                side_sign = self.locked.get(spec.name, {}).get(point.index)
                if side_sign is None:
                    side_sign = 1 if dt_signed >= 0 else -1
                    self.lock(spec.name, point.index, side_sign)
                side = "plus" if side_sign > 0 else "minus"
                key = (spec.name, point.index)
                if key not in self._radius:
                    self._radius[key] = default_extraction_radius(cfg, point, pts)
                total += extended_field(cfg, point, spec.mu, side,
                                        r=self._radius[key], refine=self.refine,
                                        points=pts)
            elif dmin < 0.05:
                total += averaged_gradient_plain(cfg, spec.mu, margin=0.0,
                                                 refine=self.refine, points=pts)
            else:
                total += self._plain_gradient(cfg, spec.mu, spec.name, C)
        return total

    def __call__(self, t, Y):
        return _jmap(self.gradient(t, Y))


def rkg_step(state: SecularState, dt, field, s=2, tol=1e-12, max_iter=60,
             k_init=None) -> SecularState:
    """One implicit Gauss collocation step (order 2s)."""
    new, _ = rkg_step_dense(state, dt, field, s=s, tol=tol,
                            max_iter=max_iter, k_init=k_init)
    return new


def rkg_step_dense(state: SecularState, dt, field, s=2, tol=1e-12,
                   max_iter=60, k_init=None):
    """Like rkg_step, also returns the Step with dense output."""
    c, A, _, _, _ = _TABLEAUX[s]
    Y0, t0, h = state.Y, state.t, float(dt)
    if k_init is not None and k_init.shape == (s, 4):
        K = k_init.copy()
    else:
        f0 = np.asarray(field(t0, Y0), dtype=float)
        K = np.tile(f0, (s, 1))
    for _ in range(max_iter):
        K_new = np.empty_like(K)
        for i in range(s):
            Yi = Y0 + h * (A[i] @ K)
            K_new[i] = field(t0 + c[i] * h, Yi)
        delta = np.max(np.abs(h * (K_new - K)))
        K = K_new
        if delta < tol:
            break
    else:
        raise StageNonConvergence(
            f"stage iteration did not reach {tol} in {max_iter} sweeps")
    step = Step(t0=t0, h=h, Y0=Y0.copy(), K=K, s=s)
    Y1 = step.y_at(t0 + h)
    return SecularState(Y=Y1, t=t0 + h, a=state.a), step


def detect_crossing(step: Step, field: SecularField, n_samples=9):
    """First sign change of any tracked signed minimum distance on the
    dense output.  Returns (t_c, planet, h) or None.  Raises StepUnderflow
    semantics by returning the string 'reject' when a minimum changes sign
    more than once in the step (caller halves the step)."""
    thetas = np.linspace(0.0, 1.0, n_samples)
    times = step.t0 + thetas * step.h
    start = field.signed_minima(times[0], step.y_at(times[0]))
    # only sample densely when some minimum is small enough to plausibly cross
    closest = min((abs(d) for vals in start.values() for _, d in vals),
                  default=np.inf)
    if closest > 0.05:
        end = field.signed_minima(times[-1], step.y_at(times[-1]))
        closest_end = min((abs(d) for vals in end.values() for _, d in vals),
                          default=np.inf)
        if closest_end > 0.05:
            return None
    series = {}
    for tk in times:
        Yk = step.y_at(tk)
        for name, vals in field.signed_minima(tk, Yk).items():
            for h, d in vals:
                series.setdefault((name, h), []).append(d)
    best = None
    for (name, h), ds in series.items():
        ds = np.asarray(ds)
        if len(ds) != n_samples:
            continue    # minima set changed mid-step; full refresh happened
        signs = np.sign(ds)
        flips = np.nonzero(signs[:-1] * signs[1:] < 0)[0]
        if len(flips) > 1:
            return "reject"
        if len(flips) == 0:
            continue
        i = flips[0]
        f = lambda t, name=name, h=h: field.dtilde(t, step.y_at(t), name, h)
        lo, hi = sorted((times[i], times[i + 1]))
        # disp=False: keep the best estimate even if the bracket shrinks
        # slower than usual (near-tangent roots); the polish below and the
        # caller's tangency guard handle those.
        t_c, _ = brentq(f, lo, hi, xtol=1e-11, rtol=8.9e-16,
                        full_output=True, disp=False)
        val = f(t_c)
        if abs(val) > CROSSING_TOL:
            # Newton polish on the dense output
            eps = max(abs(step.h) * 1e-6, 1e-8)
            slope = (f(t_c + eps) - f(t_c - eps)) / (2 * eps)
            if abs(slope) > 0:
                t_c -= val / slope
        if best is None or (t_c - step.t0) / step.h < (best[0] - step.t0) / step.h:
            best = (t_c, name, h)
    return best


def propagate_secular(Y0, t0, tf, a, provider, planets, dt=DAYS_PER_YEAR,
                      s=2, refine=1, trigger=EXTRACTION_TRIGGER,
                      max_events=100, field=None) -> GeneralizedTrajectory:
    """Generalized solution of the averaged equations on [t0, tf].

    Classical Gauss-collocation integration on each crossing-free
    interval; at a crossing the step is cut to land on the crossing time,
    the extension side is flipped, and a CrossingEvent is recorded with
    the closed-form one-sided derivative jump.
    """
    direction = 1.0 if tf >= t0 else -1.0
    if field is None:
        field = SecularField(a, provider, planets, refine=refine,
                             trigger=trigger)
    state = SecularState(Y=np.asarray(Y0, dtype=float), t=float(t0), a=float(a))
    # initialize locks if starting inside the trigger zone
    for name, vals in field.signed_minima(state.t, state.Y).items():
        for h, d in vals:
            if abs(d) < trigger:
                field.lock(name, h, 1 if d >= 0 else -1)
    segments, events = [], []
    steps = []
    k_warm = None
    h_step = direction * abs(dt)
    while (tf - state.t) * direction > 1e-9:
        h_try = direction * min(abs(h_step), abs(tf - state.t))
        trial, step = rkg_step_dense(state, h_try, field, s=s, k_init=k_warm)
        hit = detect_crossing(step, field, n_samples=9)
        if hit == "reject":
            if abs(h_try) < MIN_STEP:
                raise StepUnderflow("crossing separation below minimum step")
            h_step = h_try / 2.0
            k_warm = None
            continue
        if hit is None:
            steps.append(step)
            state = trial
            k_warm = step.K
            h_step = direction * abs(dt)
            # release locks once safely outside the trigger zone
            for name, vals in field.signed_minima(state.t, state.Y).items():
                for h, d in vals:
                    if abs(d) > 2.0 * trigger:
                        field.unlock(name, h)
            continue
        t_c, name, h = hit
        if events and events[-1].planet == name and events[-1].h == h \
                and abs(t_c - events[-1].t_c) < 10.0 * MIN_STEP:
            # numerical re-detection of the event just handled
            steps.append(step)
            state = trial
            k_warm = step.K
            h_step = direction * abs(dt)
            continue
        # tangency guard on the dense output
        eps = min(1.0, abs(step.h) / 10.0)
        slope = (field.dtilde(t_c + eps, step.y_at(t_c + eps), name, h)
                 - field.dtilde(t_c - eps, step.y_at(t_c - eps), name, h)) / (2 * eps)
        if abs(slope) < TANGENT_SLOPE:
            raise TangentCrossing(
                f"evolution tangent to the crossing set at t={t_c} "
                f"(|d(d_tilde)/dt| = {abs(slope):.2e} au/day)")
        if abs(t_c - state.t) > MIN_STEP:
            # land exactly on the crossing with the incoming-side field
            state, step_c = rkg_step_dense(state, t_c - state.t, field, s=s,
                                           k_init=None)
            steps.append(step_c)
        # sign of d_tilde on the incoming side, in absolute (d_tilde) terms
        side_before = int(direction) * (1 if slope < 0 else -1)
        side_after = -side_before
        cfg_c = field.config(t_c, state.Y, name)
        pts_c = field.trackers[name].get(cfg_c)
        point_c = next(p for p in pts_c if p.index == h)
        spec = next(p for p in field.planets if p.name == name)
        diff = field_jump(cfg_c, point_c, spec.mu)      # (grad)^- - (grad)^+
        delta_grad = -side_after * diff
        event = CrossingEvent(t_c=state.t, planet=name, h=h, config_c=cfg_c,
                              applied_jump=_jmap(delta_grad),
                              side_before=side_before, side_after=side_after)
        events.append(event)
        if len(events) > max_events:
            raise StepUnderflow(f"more than {max_events} crossing events")
        segments.append(Segment(steps=steps))
        steps = []
        field.lock(name, h, side_after)
        k_warm = None
        h_step = direction * abs(dt)
    if steps:
        segments.append(Segment(steps=steps))
    if not segments:
        # zero-length request: represent with an empty trivial segment
        raise ValueError("empty propagation interval")
    return GeneralizedTrajectory(
        a=float(a), segments=segments, events=events,
        provenance={"s": s, "dt": dt, "refine": refine, "trigger": trigger,
                    "planets": list(planets), "provider": provider,
                    "crossing_tol": CROSSING_TOL})


@dataclass
class DistanceSeries:
    times: np.ndarray
    branches: dict                  # (planet, h) -> signed series
    dmin_signed: np.ndarray         # signed distance of the closest branch
    exchanges: list                 # epochs where the closest branch switched


def secular_distance_series(traj: GeneralizedTrajectory, provider=None,
                            planets=None, samples_per_step=4) -> DistanceSeries:
    """Signed orbit-distance evolutions along a secular trajectory."""
    prov = provider or traj.provenance["provider"]
    specs = planets or traj.provenance["planets"]
    field = SecularField(traj.a, prov, specs)
    times = []
    for seg in traj.segments:
        for st in seg.steps:
            local = st.t0 + np.linspace(0, 1, samples_per_step, endpoint=False) * st.h
            times.extend(local.tolist())
    times.append(traj.t_end)
    times = np.asarray(times)
    branches = {}
    for tk in times:
        Yk = traj.y_at(tk)
        for name, vals in field.signed_minima(tk, Yk).items():
            for h, d in vals:
                branches.setdefault((name, h), {})[tk] = d
    keys = list(branches)
    mat = np.full((len(keys), len(times)), np.nan)
    for i, k in enumerate(keys):
        for j, tk in enumerate(times):
            mat[i, j] = branches[k].get(tk, np.nan)
    closest = np.nanargmin(np.abs(mat), axis=0)
    dmin_signed = mat[closest, np.arange(len(times))]
    exchanges = [float(times[j]) for j in range(1, len(times))
                 if closest[j] != closest[j - 1]]
    return DistanceSeries(times=times,
                          branches={k: mat[i] for i, k in enumerate(keys)},
                          dmin_signed=dmin_signed, exchanges=exchanges)
