"""Geodesic integration, exponential map, transport, and orbit diagnostics.

Two integrator lanes share one dense-output interface: an adaptive
Runge-Kutta (scipy's RK45/DOP853) for accuracy-targeted work and a fixed-step
classical RK4 with cubic Hermite interpolation for reproducible convergence
studies and for the shooting loops, where smooth dependence on initial data
matters more than an error controller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from .chartmetric import euclidean_gr
from .errors import DomainExit, NotPeriodic, StepFailure
from .numutil import GAUSS5_NODES, GAUSS5_WEIGHTS, wrap_delta

DEFAULT_TOL = 1e-10


class HermitePath:
    """Piecewise cubic Hermite interpolant of an ODE solution."""

    def __init__(self, ts, ys, fs):
        self.ts = np.asarray(ts, dtype=float)
        self.ys = np.asarray(ys, dtype=float)  # (N+1, dim)
        self.fs = np.asarray(fs, dtype=float)  # derivatives at nodes

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t)
        idx = np.clip(np.searchsorted(self.ts, tt, side="right") - 1, 0, len(self.ts) - 2)
        t0 = self.ts[idx]
        h = self.ts[idx + 1] - t0
        s = ((tt - t0) / h)[:, None]
        y0, y1 = self.ys[idx], self.ys[idx + 1]
        f0, f1 = self.fs[idx] * h[:, None], self.fs[idx + 1] * h[:, None]
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        out = h00 * y0 + h10 * f0 + h01 * y1 + h11 * f1
        return out[0] if scalar else out.T  # scipy OdeSolution convention: (dim, n)


def _rk4_integrate(rhs, y0, t_span, n_steps, stop_margin=None):
    """Classical RK4 with dense output; optional early stop on margin < 0."""
    t0, t1 = t_span
    ts = np.linspace(t0, t1, n_steps + 1)
    h = (t1 - t0) / n_steps
    ys = [np.asarray(y0, dtype=float)]
    fs = [rhs(t0, ys[0])]
    status = "completed"
    t_exit = None
    for i in range(n_steps):
        t, y = ts[i], ys[-1]
        k1 = fs[-1]
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y_next = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y_next)):
            raise StepFailure(f"non-finite state at t={t + h:.6g}")
        ys.append(y_next)
        fs.append(rhs(t + h, y_next))
        if stop_margin is not None and stop_margin(y_next) < 0.0:
            status = "domain_exit"
            t_exit = ts[i + 1]
            ts = ts[: i + 2]
            break
    ys = np.stack(ys)
    fs = np.stack(fs)
    return ts, ys, HermitePath(ts, ys, fs), status, t_exit


def _geodesic_rhs(metric):
    m = metric.dimension

    def rhs(t, y):
        x, v = y[:m], y[m:]
        gamma = metric.christoffel_array(x)
        acc = -np.einsum("kij,i,j->k", gamma, v, v)
        return np.concatenate([v, acc])

    return rhs


def shoot_endpoints_batch(metric, X0, V0, T=1.0, n_steps=300, boundary_margin=1e-9):
    """Endpoint states of a batch of geodesics by fixed-step RK4.

    Returns (X1, V1); rows whose trajectory leaves the chart come back NaN.
    One shared stepping loop amortizes per-step overhead across the batch,
    which is what the shooting Jacobians and the census need.
    """
    X = np.array(X0, dtype=float, copy=True)
    V = np.array(V0, dtype=float, copy=True)
    k, m = X.shape
    h = T / n_steps
    alive = np.ones(k, dtype=bool)
    has_boundary = any(
        (np.isfinite(metric.domain.lower[i]) or np.isfinite(metric.domain.upper[i]))
        and not metric.domain.periodic[i]
        for i in range(m)
    )

    def acc(Xb, Vb):
        gammas = metric.christoffel_batch(Xb)
        return -np.einsum("nkij,ni,nj->nk", gammas, Vb, Vb)

    for _ in range(n_steps):
        k1x, k1v = V, acc(X, V)
        X2, V2 = X + 0.5 * h * k1x, V + 0.5 * h * k1v
        k2x, k2v = V2, acc(X2, V2)
        X3, V3 = X + 0.5 * h * k2x, V + 0.5 * h * k2v
        k3x, k3v = V3, acc(X3, V3)
        X4, V4 = X + h * k3x, V + h * k3v
        k4x, k4v = V4, acc(X4, V4)
        X = X + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        V = V + (h / 6.0) * (k1v + 2 * k2v + 2 * k3v + k4v)
        bad = ~np.all(np.isfinite(X), axis=1) | ~np.all(np.isfinite(V), axis=1)
        if has_boundary:
            for i in range(m):
                if metric.domain.periodic[i]:
                    continue
                bad |= (X[:, i] < metric.domain.lower[i] + boundary_margin) | (
                    X[:, i] > metric.domain.upper[i] - boundary_margin
                )
        if np.any(bad & alive):
            alive &= ~bad
            X[~alive] = np.nan
            V[~alive] = np.nan
        if not np.any(alive):
            break
    return X, V


@dataclass
class GeodesicPath:
    """A time-gridded integrated geodesic with dense output.

    ``dense(t)`` evaluates the phase state; for arrays it returns shape
    (2m, n) following scipy's dense-output convention.
    """

    metric: object
    ts: np.ndarray
    states: np.ndarray  # (N+1, 2m)
    dense: object
    speed: float  # g(v, v) at t = 0, conserved along the path
    length_r: float
    energy_r: float
    energy_g: float
    status: str = "completed"
    t_exit: float | None = None
    g_R: object = None

    @property
    def T(self):
        return float(self.ts[-1])

    @property
    def dimension(self):
        return self.metric.dimension

    def state(self, t):
        out = self.dense(t)
        return np.asarray(out, dtype=float)

    def position(self, t):
        s = self.state(t)
        return s[: self.dimension] if s.ndim == 1 else s[: self.dimension, :]

    def velocity(self, t):
        s = self.state(t)
        return s[self.dimension:] if s.ndim == 1 else s[self.dimension:, :]

    def speeds_g(self, ts):
        """g(v, v) at the given times."""
        out = np.empty(len(ts))
        for i, t in enumerate(np.asarray(ts, dtype=float)):
            s = self.state(t)
            x, v = s[: self.dimension], s[self.dimension:]
            out[i] = v @ self.metric.components(x) @ v
        return out

    def conservation_error(self):
        vals = self.speeds_g(self.ts)
        return float(np.max(np.abs(vals - self.speed)))

    def node_positions(self):
        return self.states[:, : self.dimension]


def _quad_path(path, g_R, n_sub=1):
    """Quadrature of (|v|_gR, |v|^2_gR / 2, g(v,v) / 2) over the path grid."""
    metric = path.metric
    m = metric.dimension
    ts = path.ts
    L = Er = Eg = 0.0
    euclid = g_R.is_euclidean
    for i in range(len(ts) - 1):
        h = ts[i + 1] - ts[i]
        tq = ts[i] + h * GAUSS5_NODES
        states = path.state(tq)  # (2m, 5)
        for w, k in zip(GAUSS5_WEIGHTS, range(len(tq))):
            x, v = states[:m, k], states[m:, k]
            gr = v @ v if euclid else v @ g_R(x) @ v
            gg = v @ metric.components(x) @ v
            L += h * w * np.sqrt(max(gr, 0.0))
            Er += h * w * 0.5 * gr
            Eg += h * w * 0.5 * gg
    return float(L), float(Er), float(Eg)


def integrate_geodesic(
    metric,
    x0,
    v0,
    T,
    tol=DEFAULT_TOL,
    method="adaptive",
    n_steps=None,
    g_R=None,
    boundary_margin=1e-9,
):
    """Integrate the geodesic equation from (x0, v0) over [0, T].

    Domain exit is a terminal status on the returned path, not an error.
    ``method="rk4"`` selects the fixed-step reproducible lane (``n_steps``
    subdivisions, default 400).
    """
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    metric.check_point(x0)
    if g_R is None:
        g_R = euclidean_gr(metric.dimension)
    m = metric.dimension
    rhs = _geodesic_rhs(metric)
    y0 = np.concatenate([x0, v0])
    has_boundary = np.any(
        [
            (np.isfinite(metric.domain.lower[i]) or np.isfinite(metric.domain.upper[i]))
            and not metric.domain.periodic[i]
            for i in range(m)
        ]
    )

    if method == "rk4":
        n = n_steps or 400
        stop = (
            (lambda y: metric.domain.boundary_margin(y[:m]) - boundary_margin)
            if has_boundary
            else None
        )
        ts, ys, dense, status, t_exit = _rk4_integrate(rhs, y0, (0.0, T), n, stop)
    elif method == "adaptive":
        events = []
        if has_boundary:

            def exit_event(t, y):
                return metric.domain.boundary_margin(y[:m]) - boundary_margin

            exit_event.terminal = True
            exit_event.direction = -1
            events.append(exit_event)
        sol = solve_ivp(
            rhs,
            (0.0, T),
            y0,
            method="RK45",
            rtol=tol,
            atol=tol * 1e-2,
            dense_output=True,
            events=events or None,
        )
        if sol.status == -1:
            raise StepFailure(sol.message)
        status = "completed"
        t_exit = None
        if sol.status == 1:
            status = "domain_exit"
            t_exit = float(sol.t_events[0][0])
        ts, ys, dense = sol.t, sol.y.T, sol.sol
    else:
        raise ValueError(f"unknown integration method '{method}'")

    speed = float(v0 @ metric.components(x0) @ v0)
    path = GeodesicPath(
        metric=metric,
        ts=ts,
        states=ys,
        dense=dense,
        speed=speed,
        length_r=0.0,
        energy_r=0.0,
        energy_g=0.0,
        status=status,
        t_exit=t_exit,
        g_R=g_R,
    )
    path.length_r, path.energy_r, path.energy_g = _quad_path(path, g_R)
    return path


def exp_map(metric, x, v, tol=DEFAULT_TOL, method="adaptive", n_steps=None):
    """Endpoint of the unit-time geodesic with initial data (x, v)."""
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        metric.check_point(x)
        return np.asarray(x, dtype=float)
    path = integrate_geodesic(metric, x, v, 1.0, tol=tol, method=method, n_steps=n_steps)
    if path.status != "completed":
        raise DomainExit("geodesic left the chart before t=1", t_exit=path.t_exit)
    return path.position(1.0)


@dataclass
class TransportedField:
    """Parallel vector fields along a path; ``values`` holds per-node columns."""

    path: object
    ts: np.ndarray
    values: np.ndarray  # (N+1, m, k)
    dense: object
    k: int

    def __call__(self, t):
        out = self.dense(t)
        arr = np.asarray(out, dtype=float)
        if arr.ndim == 1:
            return arr.reshape(self.path.dimension, self.k)
        return arr.reshape(self.path.dimension, self.k, -1)


def parallel_transport(metric, path, w0, tol=DEFAULT_TOL, n_steps=None):
    """Parallel-transport w0 (one vector or columns) along the path."""
    m = metric.dimension
    w0 = np.asarray(w0, dtype=float)
    single = w0.ndim == 1
    W0 = w0[:, None] if single else w0
    k = W0.shape[1]

    def rhs(t, wflat):
        s = path.state(t)
        x, v = s[:m], s[m:]
        gamma = metric.christoffel_array(x)
        W = wflat.reshape(m, k)
        dW = -np.einsum("kij,i,jc->kc", gamma, v, W)
        return dW.ravel()

    n = n_steps or max(4 * (len(path.ts) - 1), 200)
    ts, ys, dense, status, _ = _rk4_integrate(rhs, W0.ravel(), (0.0, path.T), n)
    vals = ys.reshape(len(ts), m, k)
    field = TransportedField(path=path, ts=ts, values=vals, dense=dense, k=k)
    if single:
        field.final = vals[-1, :, 0]
    return field


def riem_length_energy(path, g_R=None):
    """(L_R, E_R, E_g) by quadrature on the dense output."""
    if g_R is None:
        g_R = path.g_R or euclidean_gr(path.dimension)
    return _quad_path(path, g_R)


@dataclass
class PeriodicityVerdict:
    periodic: bool
    omega: float | None = None
    k: int = 0
    residual: float = np.inf


def _state_distance(path, t, ref_state):
    s = path.state(t)
    m = path.dimension
    dx = path.metric.domain.wrap_delta(s[:m] - ref_state[:m])
    dv = s[m:] - ref_state[m:]
    return float(np.sqrt(dx @ dx + dv @ dv))


def _state_distances(path, ts, ref_state):
    states = path.state(np.asarray(ts, dtype=float))  # (2m, n)
    m = path.dimension
    dx = path.metric.domain.wrap_delta((states[:m, :] - ref_state[:m, None]).T)
    dv = (states[m:, :] - ref_state[m:, None]).T
    return np.sqrt(np.sum(dx**2, axis=1) + np.sum(dv**2, axis=1))


def detect_periodicity(path, tol=1e-8, n_samples=2048):
    """Detect phase-state returns to the initial state; report minimal period.

    Compares the full state (position wrapped on periodic axes, velocity),
    so geometric self-crossings with different velocities do not count.
    """
    T = path.T
    ref = path.state(0.0)
    scale = 1.0 + float(np.linalg.norm(ref))
    ts = np.linspace(0.0, T, n_samples + 1)
    d = _state_distances(path, ts, ref)
    t_min = 3.0 * T / n_samples
    coarse = tol * scale * 1e6  # candidates are refined before acceptance
    best = None
    for i in range(1, n_samples):
        if ts[i] < t_min:
            continue
        if d[i] <= min(d[i - 1], d[i + 1]) and d[i] < max(coarse, 1e-3 * scale):
            lo, hi = ts[i - 1], ts[i + 1]
            res = minimize_scalar(
                lambda t: _state_distance(path, t, ref),
                bounds=(lo, hi),
                method="bounded",
                options={"xatol": 1e-14},
            )
            if res.fun <= tol * scale:
                best = (float(res.x), float(res.fun))
                break
    # the endpoint is a candidate the local-minimum scan can miss
    if best is None and d[-1] <= tol * scale and T >= t_min:
        best = (T, float(d[-1]))
    if best is None:
        return PeriodicityVerdict(periodic=False)
    omega, residual = best
    k = int(np.floor(T / omega + 1e-9))
    return PeriodicityVerdict(periodic=True, omega=omega, k=max(k, 1), residual=residual)


@dataclass
class SelfIntersections:
    """Refined (t, s) crossing pairs; ``periodic_family`` flags an infinite set."""

    pairs: list
    periodic_family: PeriodicityVerdict | None = None


def self_intersections(path, tol=1e-8, n_samples=1024):
    """All parameter pairs t < s with gamma(t) = gamma(s) within tol.

    If the path is a proper portion of a periodic geodesic (omega < T) the
    family is infinite; it is flagged and deferred to detect_periodicity.
    """
    m = path.dimension
    T = path.T
    verdict = detect_periodicity(path, tol=max(tol, 1e-8))
    if verdict.periodic and verdict.omega < T * (1.0 - 1e-6):
        return SelfIntersections(pairs=[(0.0, verdict.omega)], periodic_family=verdict)

    ts = np.linspace(0.0, T, n_samples + 1)
    pts = path.position(ts).T  # (n, m)
    periods = path.metric.domain.periods
    # coarse pair scan on the sample grid
    sep = 5.0 * T / n_samples
    speed_scale = max(np.max(np.linalg.norm(path.states[:, m:], axis=1)), 1e-12)
    coarse_radius = max(2.0 * speed_scale * T / n_samples, 10.0 * tol)
    cand = []
    diff = pts[:, None, :] - pts[None, :, :]
    diff = wrap_delta(diff, periods)
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    ii, jj = np.where(dist <= coarse_radius)
    for a, b in zip(ii, jj):
        if ts[b] - ts[a] > sep:
            cand.append((ts[a], ts[b]))

    def refine(t, s):
        for _ in range(60):
            st, ss = path.state(t), path.state(s)
            F = wrap_delta(st[:m] - ss[:m], periods)
            J = np.stack([st[m:], -ss[m:]], axis=1)
            try:
                step, *_ = np.linalg.lstsq(J, -F, rcond=None)
            except np.linalg.LinAlgError:
                return None
            t = min(max(t + step[0], 0.0), T)
            s = min(max(s + step[1], 0.0), T)
            if np.linalg.norm(step) < 1e-14:
                break
        st, ss = path.state(t), path.state(s)
        F = wrap_delta(st[:m] - ss[:m], periods)
        if np.linalg.norm(F) <= tol * (1.0 + np.linalg.norm(st[:m])):
            return (t, s)
        return None

    found = []
    for t0, s0 in cand:
        r = refine(t0, s0)
        if r is None:
            continue
        t, s = sorted(r)
        if s - t <= sep:
            continue
        cluster = 10.0 * max(tol, 1e-9) + 1e-6 * T
        if any(abs(t - a) < cluster and abs(s - b) < cluster for a, b in found):
            continue
        found.append((t, s))
    found.sort()
    return SelfIntersections(pairs=found, periodic_family=None)


@dataclass
class TurningBound:
    lhs: float
    rhs: float
    c: float
    holds: bool


def turning_bound_check(metric, path, K_lower, K_upper, g_R=None, n_grid=5):
    """Check the tangent-turning inequality on a compact box K.

    lhs is the Euclidean-norm difference of the unit tangents at the ends;
    rhs is c * integral of |v| with c = 2 (max_K ||Gamma|| + 1), the constant
    from the underlying estimate (Frobenius norm upper-bounds the induced
    norm, which only slackens the certified inequality).
    """
    if g_R is None:
        g_R = path.g_R or euclidean_gr(metric.dimension)
    K_lower = np.asarray(K_lower, dtype=float)
    K_upper = np.asarray(K_upper, dtype=float)
    pos = path.node_positions()
    inside = np.all((pos >= K_lower - 1e-9) & (pos <= K_upper + 1e-9))
    if not inside:
        raise DomainExit("path image leaves the compact box K")
    axes = [np.linspace(K_lower[i], K_upper[i], n_grid) for i in range(metric.dimension)]
    grids = np.meshgrid(*axes, indexing="ij")
    samples = np.stack([g.ravel() for g in grids], axis=1)
    gmax = 0.0
    for x in samples:
        gmax = max(gmax, float(np.linalg.norm(metric.christoffel_array(x))))
    c = 2.0 * (gmax + 1.0)
    m = metric.dimension
    v0 = path.velocity(0.0)
    v1 = path.velocity(path.T)
    lhs = float(np.linalg.norm(v1 / np.linalg.norm(v1) - v0 / np.linalg.norm(v0)))

    def speed(tarr):
        states = path.state(np.asarray(tarr, dtype=float))
        return np.linalg.norm(states[m:, :], axis=0)

    from .numutil import quad_segments

    rhs = c * quad_segments(speed, path.ts)
    return TurningBound(lhs=lhs, rhs=rhs, c=c, holds=bool(lhs <= rhs + 1e-12))
