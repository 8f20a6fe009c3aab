"""Local metric perturbations that destroy degeneracy, and their diagnostics.

The construction follows the extension-lemma recipe: pick an interval I where
the degenerating Jacobi field (or the iterate-sum field of an iterate) is not
tangent, erect a transversal coordinate lambda off the curve along that
field, and set

    h(x) = chi_r(|x - gamma|/rho) * chi_t(t*) * lambda * profile(lambda/rho) * K(t*)

so that h vanishes on the curve, has exact compact support in the rho-tube,
and its derivative along the field equals K on the inner part of I. The mixed
second derivative of the energy then evaluates to (1/2) int_I K(gdot, gdot),
which is positive for K = g_R: one small conformal-free bump restores
nondegeneracy unless the geodesic is strongly degenerate, in which case every
such derivative vanishes identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chartmetric import MetricField, euclidean_gr
from .errors import (
    NewtonDiverged,
    NonPositiveFactor,
    NoValidInterval,
    SignatureBroken,
    StronglyDegenerateSuspected,
    TubeTooWide,
)
from .gec import pjacobi_shooting, solve_gp_geodesic
from .geodesic import detect_periodicity
from .numutil import GAUSS5_NODES, GAUSS5_WEIGHTS, wrap_delta


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (10.0 + u * (-15.0 + 6.0 * u))


def _bump_profile(s):
    """Even C^2 bump: (1 - s^2)^3 on |s| < 1, zero outside, flat at 0."""
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = (1.0 - s[inside] ** 2) ** 3
    return out


@dataclass
class PerturbScenario:
    """A GEC problem with a degenerate solution and its degenerating field."""

    metric: object
    gec: object
    solution: object  # GpSolution
    jacobi: object  # JacobiSolution spanning (part of) the kernel
    label: str = "scenario"

    @property
    def path(self):
        return self.solution.path


# -- interval selection ----------------------------------------------------------


@dataclass
class IntervalChoice:
    t0: float
    t1: float
    margin: float

    @property
    def length(self):
        return self.t1 - self.t0

    def contains(self, t):
        return self.t0 <= t <= self.t1


def _field_samples(field_value, ts):
    return np.stack([np.asarray(field_value(t), dtype=float) for t in ts])


def select_interval(
    path,
    field_value,
    rho,
    widths=(0.25, 0.2, 0.15, 0.1, 0.06),
    n_samples=256,
    margin_min=1e-6,
    preferred_center=None,
):
    """Interval where the field is non-tangent and the tube self-avoiding.

    ``field_value`` maps t to the candidate field (a Jacobi field or an
    iterate-sum field). Nearby passes of the curve are excluded by requiring
    a distance >= 2 rho between gamma(I) and the rest of the curve outside a
    short guard band. Raises NoValidInterval when the non-parallelism margin
    vanishes everywhere (tangent field or strongly degenerate situation).
    """
    T = path.T
    m = path.dimension
    ts = np.linspace(0.0, T, n_samples)
    states = path.state(ts)
    xs, vs = states[:m, :].T, states[m:, :].T
    W = _field_samples(field_value, ts)
    vhat = vs / np.linalg.norm(vs, axis=1, keepdims=True)
    Wpar = np.sum(W * vhat, axis=1, keepdims=True) * vhat
    Wperp = W - Wpar
    Wnorm = np.linalg.norm(W, axis=1)
    margins = np.where(
        Wnorm > 1e-14, np.linalg.norm(Wperp, axis=1) / np.maximum(Wnorm, 1e-300), 0.0
    )
    periods = path.metric.domain.periods
    diff = wrap_delta(xs[:, None, :] - xs[None, :, :], periods)
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    speed = np.linalg.norm(vs, axis=1)
    guard = 2.5 * rho / max(float(np.min(speed)), 1e-12)

    best = None
    for width in widths:
        w = width * T
        half = w / 2.0
        for ic, tc in enumerate(ts):
            if preferred_center is not None and abs(tc - preferred_center) > T * 0.5:
                continue
            t0, t1 = tc - half, tc + half
            if t0 < 0.0 or t1 > T:
                continue
            inside = (ts >= t0) & (ts <= t1)
            far = (ts < t0 - guard) | (ts > t1 + guard)
            if not np.any(inside):
                continue
            mmin = float(np.min(margins[inside]))
            if mmin <= margin_min:
                continue
            if np.any(far):
                d = float(np.min(dist[np.ix_(inside, far)]))
                if d < 2.0 * rho:
                    continue
            # tie-break equal direction margins by the absolute size of the
            # transverse component, so degenerate-field zeros are avoided
            size = float(np.min(np.linalg.norm(Wperp[inside], axis=1)))
            size_rel = size / max(float(np.max(np.linalg.norm(Wperp, axis=1))), 1e-300)
            score = mmin * (1.0 + 0.25 * size_rel)
            if preferred_center is not None:
                score -= 1e-9 * abs(tc - preferred_center)
            if best is None or score > best[0]:
                best = (score, IntervalChoice(t0=t0, t1=t1, margin=mmin))
        if best is not None:
            return best[1]
    raise NoValidInterval(
        "no interval with positive non-parallelism margin and a self-avoiding tube"
    )


# -- iterate-sum fields ------------------------------------------------------------


@dataclass
class SumField:
    """Effective field for the perturbation of (portions of) periodic geodesics."""

    value: object  # t -> vector, valid on [window[0], window[1]]
    window: tuple
    kind: str  # "prime" | "iterate-sum" | "parity-1" | "parity-2"


def iterate_sum_field(jacobi, path, periodicity=None, tol=1e-8):
    """The window-summed field W of the perturbation argument.

    Prime case: W = J itself. Closed k-iterates: W(t) = sum_i J(t + i omega)
    on one fundamental window. Portions of periodic geodesics with distinct
    endpoints: the two parity-trick windows, returning whichever is not
    everywhere tangent. Raises StronglyDegenerateSuspected when every
    candidate vanishes identically.
    """
    T = path.T
    if periodicity is None:
        periodicity = detect_periodicity(path)
    size = jacobi.max_norm()

    def sum_on(window, n_terms, omega):
        def val(t):
            out = np.zeros(path.dimension)
            for i in range(n_terms):
                J, _ = jacobi.at(t + i * omega)
                out += J
            return out

        return val

    if not periodicity.periodic or periodicity.omega >= T * (1.0 - 1e-9):
        return SumField(value=lambda t: jacobi.at(t)[0], window=(0.0, T), kind="prime")

    omega = periodicity.omega
    m = path.dimension
    periods = path.metric.domain.periods
    endpoints_equal = (
        np.linalg.norm(
            wrap_delta(path.position(T) - path.position(0.0), periods)
        )
        <= 1e-6 * (1.0 + np.linalg.norm(path.position(0.0)))
    )
    if endpoints_equal:
        k = max(1, int(round(T / omega)))
        val = sum_on((0.0, omega), k, omega)
        sup = max(
            np.linalg.norm(val(t)) for t in np.linspace(0.0, omega, 64)
        )
        if sup <= tol * max(size, 1e-300):
            raise StronglyDegenerateSuspected(
                "the iterate-sum field vanishes identically"
            )
        return SumField(value=val, window=(0.0, omega), kind="iterate-sum")

    # portion of a periodic geodesic with distinct endpoints: parity trick
    q = path.position(T)
    ts = np.linspace(0.0, omega, 512)
    dists = np.linalg.norm(
        wrap_delta(path.position(ts).T - q[None, :], periods), axis=1
    )
    t_star = float(ts[int(np.argmin(dists))])
    k_star = int(np.floor((T - 1e-12) / omega))
    w1 = SumField(
        value=sum_on((0.0, t_star), k_star + 1, omega),
        window=(0.0, t_star),
        kind="parity-1",
    )
    w2 = SumField(
        value=sum_on((t_star, omega), k_star, omega),
        window=(t_star, omega),
        kind="parity-2",
    )
    for cand in (w1, w2):
        sup = max(
            np.linalg.norm(cand.value(t))
            for t in np.linspace(cand.window[0], cand.window[1], 64)
        )
        if sup > tol * max(size, 1e-300):
            return cand
    raise StronglyDegenerateSuspected("both parity-window fields vanish")


# -- bump construction --------------------------------------------------------------


@dataclass
class PerturbationBump:
    """Symmetric bump tensor supported in a tube around gamma(I).

    Exact properties by construction: h = 0 outside the tube and h(gamma(t))
    identically zero; along the selected field W, the derivative of h equals
    K on the inner plateau of I. Residuals of the defining identities are
    computed on construction and stored.
    """

    path: object
    interval: IntervalChoice
    rho: float
    K_target: np.ndarray  # (m, m) or (n_f, m, m) along the window
    ts_f: np.ndarray
    xs_f: np.ndarray
    vs_f: np.ndarray
    Ws_f: np.ndarray
    normals_f: np.ndarray
    denoms_f: np.ndarray
    chi_t_f: np.ndarray
    on_curve_residual: float = np.nan
    gradient_residual: float = np.nan

    @property
    def dimension(self):
        return self.xs_f.shape[1]

    def _project(self, X):
        """Nearest window parameter per point, with Newton refinement.

        The curve and its velocity are interpolated from the bump's own fine
        samples; no dense-output calls in the hot loop.
        """
        periods = self.path.metric.domain.periods
        diff = wrap_delta(X[:, None, :] - self.xs_f[None, :, :], periods)
        d2 = np.sum(diff**2, axis=-1)
        idx = np.argmin(d2, axis=1)
        t = self.ts_f[idx]
        lo, hi = self.ts_f[0], self.ts_f[-1]
        for _ in range(4):
            gx = self._interp(self.xs_f, t)
            gv = self._interp(self.vs_f, t)
            dx = wrap_delta(X - gx, periods)
            denom = np.sum(gv * gv, axis=1)
            t = np.clip(t - np.sum(dx * gv, axis=1) / np.maximum(denom, 1e-300),
                        lo, hi)
        return t

    def _interp(self, arr, t):
        """Linear interpolation of per-sample data onto parameters t."""
        i = np.clip(
            np.searchsorted(self.ts_f, t, side="right") - 1, 0, len(self.ts_f) - 2
        )
        s = (t - self.ts_f[i]) / (self.ts_f[i + 1] - self.ts_f[i])
        if arr.ndim == 1:
            return (1 - s) * arr[i] + s * arr[i + 1]
        shape = (len(t),) + (1,) * (arr.ndim - 1)
        s = s.reshape(shape)
        return (1 - s) * arr[i] + s * arr[i + 1]

    def evaluate(self, X):
        """h at a batch of points (rows); returns (n, m, m)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n, m = X.shape
        out = np.zeros((n, m, m))
        t = self._project(X)
        gx = self._interp(self.xs_f, t)
        periods = self.path.metric.domain.periods
        dx = wrap_delta(X - gx, periods)
        r = np.linalg.norm(dx, axis=1)
        active = r < self.rho
        if not np.any(active):
            return out
        ta = t[active]
        normals = self._interp(self.normals_f, ta)
        denoms = self._interp(self.denoms_f, ta)
        chi_t = self._interp(self.chi_t_f, ta)
        lam = np.sum(dx[active] * normals, axis=1) / denoms
        chi_r = _bump_profile(r[active] / self.rho)
        prof = _bump_profile(lam / self.rho)
        if self.K_target.ndim == 2:
            Ks = np.broadcast_to(self.K_target, (len(ta), m, m))
        else:
            Ks = self._interp(self.K_target, ta)
        amp = chi_r * chi_t * lam * prof
        out[active] = amp[:, None, None] * Ks
        return out

    def __call__(self, x):
        return self.evaluate(np.asarray(x, dtype=float)[None, :])[0]

    def gradient_along(self, X, directions, step_scale=1e-3):
        """Directional derivative of h along given vectors (central FD)."""
        X = np.atleast_2d(X)
        directions = np.atleast_2d(directions)
        norms = np.linalg.norm(directions, axis=1)
        unit = directions / np.maximum(norms, 1e-300)[:, None]
        step = step_scale * self.rho
        diff = (self.evaluate(X + step * unit) - self.evaluate(X - step * unit)) / (
            2.0 * step
        )
        return diff * norms[:, None, None]

    def partials(self, X, step=1e-6):
        """Full coordinate gradient dh[n, i, j, k] = d h_ij / d x_k.

        The whole central-difference stencil goes through one batched
        evaluation, which keeps perturbed-metric Christoffels cheap.
        """
        X = np.atleast_2d(X)
        n, m = X.shape
        stencil = np.empty((2 * m, n, m))
        for k in range(m):
            e = np.zeros(m)
            e[k] = step
            stencil[2 * k] = X + e
            stencil[2 * k + 1] = X - e
        vals = self.evaluate(stencil.reshape(2 * m * n, m)).reshape(2 * m, n, m, m)
        out = np.empty((n, m, m, m))
        for k in range(m):
            out[:, :, :, k] = (vals[2 * k] - vals[2 * k + 1]) / (2 * step)
        return out


def build_bump(metric, path, field, interval, K_target=None, rho=0.1,
               n_fine=400, inner_fraction=0.8, check=True, normalize=True):
    """Construct the compact-support bump tensor for the given field/interval.

    ``field`` is a SumField (or any object with .value and .window compatible
    with the interval). K defaults to g_R along the curve (the identity in
    chart coordinates). The scale of the field is a free gauge of the kernel
    vector; by default it is normalized so its largest transverse component
    on I is one, which keeps the effective support of h as thick as the
    tube. Raises TubeTooWide if other passes of the curve enter the tube,
    NoValidInterval if the field is tangent somewhere on I.
    """
    m = metric.dimension
    t0, t1 = interval.t0, interval.t1
    ts_f = np.linspace(t0, t1, n_fine)
    states = path.state(ts_f)
    xs = states[:m, :].T
    vs = states[m:, :].T
    W = _field_samples(field.value if isinstance(field, SumField) else field, ts_f)
    vhat = vs / np.linalg.norm(vs, axis=1, keepdims=True)
    Wperp = W - np.sum(W * vhat, axis=1, keepdims=True) * vhat
    wn = np.linalg.norm(Wperp, axis=1)
    if np.min(wn) <= 1e-12 * max(float(np.max(np.linalg.norm(W, axis=1))), 1e-300):
        raise NoValidInterval("field is tangent to the curve inside the interval")
    if normalize:
        scale = float(np.max(wn))
        W = W / scale
        Wperp = Wperp / scale
        wn = wn / scale
    normals = Wperp / wn[:, None]
    denoms = np.sum(W * normals, axis=1)  # = |W_perp| > 0

    # plateau on the inner fraction, quintic ramps outside it
    ramp = 0.5 * (1.0 - inner_fraction) * (t1 - t0)
    up = _smoothstep((ts_f - t0) / ramp)
    down = _smoothstep((t1 - ts_f) / ramp)
    chi_t = np.minimum(up, down)

    if K_target is None:
        K_target = np.eye(m)
    K_target = np.asarray(K_target, dtype=float)

    bump = PerturbationBump(
        path=path, interval=interval, rho=rho, K_target=K_target,
        ts_f=ts_f, xs_f=xs, vs_f=vs, Ws_f=W, normals_f=normals,
        denoms_f=denoms, chi_t_f=chi_t,
    )

    if check:
        # other passes of the curve must stay out of the tube
        periods = metric.domain.periods
        all_ts = np.linspace(0.0, path.T, 512)
        outside = (all_ts < t0 - (t1 - t0)) | (all_ts > t1 + (t1 - t0))
        if np.any(outside):
            pos = path.position(all_ts[outside]).T
            diff = wrap_delta(pos[:, None, :] - xs[None, :, :], periods)
            dmin = float(np.min(np.sqrt(np.sum(diff**2, axis=-1))))
            if dmin < rho:
                raise TubeTooWide(
                    f"other passes come within {dmin:.3g} < rho = {rho:.3g}"
                )
        # defining identities
        hvals = bump.evaluate(xs)
        bump.on_curve_residual = float(np.max(np.linalg.norm(hvals, axis=(1, 2))))
        inner = chi_t > 1.0 - 1e-9
        if np.any(inner):
            Xi = xs[inner]
            Wi = W[inner]
            norms = np.linalg.norm(Wi, axis=1, keepdims=True)
            step = 1e-3 * rho
            Xp = Xi + step * Wi / norms
            Xm = Xi - step * Wi / norms
            dh = (bump.evaluate(Xp) - bump.evaluate(Xm)) / (2 * step) * norms[:, :, None]
            if K_target.ndim == 2:
                Ki = np.broadcast_to(K_target, dh.shape)
            else:
                Ki = bump._interp(K_target, ts_f[inner])
            bump.gradient_residual = float(
                np.max(np.linalg.norm(dh - Ki, axis=(1, 2)))
            )
    return bump


# -- mixed derivative ----------------------------------------------------------------


def mixed_derivative(metric, path, jacobi, bump, n_segments=240):
    """d^2 E / dg dgamma applied to (h, J):  int h(gdot, DJ) + (1/2) dh(J, gdot, gdot).

    The connection entering dh is the flat chart connection (the value is
    independent of the choice of symmetric connection). Quadrature is Gauss-5
    per segment with all bump evaluations batched.
    """
    m = metric.dimension
    T = path.T
    seg = np.linspace(0.0, T, n_segments + 1)
    h_el = np.diff(seg)
    tq = (seg[:-1, None] + h_el[:, None] * GAUSS5_NODES[None, :]).ravel()
    wq = (h_el[:, None] * GAUSS5_WEIGHTS[None, :]).ravel()

    states = path.state(tq)
    xs = states[:m, :].T
    vs = states[m:, :].T
    yj = np.asarray(jacobi.dense(tq), dtype=float)
    k = jacobi.k
    J = yj[: m * k].reshape(m, k, -1)[:, 0, :].T
    DJ = yj[m * k:].reshape(m, k, -1)[:, 0, :].T

    hvals = bump.evaluate(xs)
    # directional derivative of h along J (flat connection), batched
    normsJ = np.linalg.norm(J, axis=1, keepdims=True)
    unit = J / np.maximum(normsJ, 1e-300)
    step = 1e-3 * bump.rho
    dh = (bump.evaluate(xs + step * unit) - bump.evaluate(xs - step * unit)) / (
        2 * step
    ) * normsJ[:, :, None]

    term1 = np.einsum("nij,ni,nj->n", hvals, vs, DJ)
    term2 = 0.5 * np.einsum("nij,ni,nj->n", dh, vs, vs)
    return float(np.sum(wq * (term1 + term2)))


# -- applying perturbations ------------------------------------------------------------


def apply_bump(metric, bump, eps):
    """The metric g + eps * h as a MetricField (derivatives of h by FD)."""
    h_step = 1e-6

    def comps(x):
        return metric.components(x) + eps * bump(x)

    def comps_batch(X):
        return metric.components_batch(X) + eps * bump.evaluate(X)

    def d_comps(x):
        return metric.first_derivatives(x) + eps * bump.partials(
            np.asarray(x, dtype=float)[None, :], step=h_step
        )[0]

    def d_comps_batch(X):
        return metric.first_derivatives_batch(X) + eps * bump.partials(
            X, step=h_step
        )

    return MetricField(
        metric.domain,
        metric.index,
        comps,
        d_components=d_comps,
        fd_step=metric.fd_step,
        fd_step2=metric.fd_step2,
        name=f"{metric.name}+{eps:g}*bump",
        components_batch=comps_batch,
        d_components_batch=d_comps_batch,
    )


def check_signature(metric, points, index=None):
    """Raise SignatureBroken unless the metric keeps its index at the points."""
    index = metric.index if index is None else index
    w = np.linalg.eigvalsh(metric.components_batch(points))
    neg = np.sum(w < 0.0, axis=1)
    zero = np.min(np.abs(w), axis=1) <= 1e-12 * np.maximum(
        np.max(np.abs(w), axis=1), 1.0
    )
    if np.any(neg != index) or np.any(zero):
        raise SignatureBroken("perturbed metric lost its signature at a sample")


@dataclass
class RecheckResult:
    eps: float
    kind: str  # nondegenerate | degenerate | solver_failed
    kernel_dim: int | None
    kernel_gap: float | None
    residual: float | None


def apply_and_recheck(metric, bump, eps, scenario, tol=1e-8, n_steps=200,
                      n_signature=400, seed=123):
    """Re-solve the scenario's boundary problem under g + eps h and classify.

    The kernel gap is the smallest nonzero singular value of the shooting
    map, i.e. the margin by which the perturbed solution is nondegenerate.
    """
    pert = apply_bump(metric, bump, eps)
    rng = np.random.default_rng(seed)
    # sample the tube (where h lives) plus a box around the path
    m = metric.dimension
    base = bump.xs_f[rng.integers(0, len(bump.xs_f), n_signature // 2)]
    tube_pts = base + bump.rho * rng.uniform(-1, 1, size=(n_signature // 2, m))
    lo = np.min(bump.path.node_positions(), axis=0) - 0.5
    hi = np.max(bump.path.node_positions(), axis=0) + 0.5
    box_pts = lo + (hi - lo) * rng.random((n_signature - len(tube_pts), m))
    pts = np.concatenate([tube_pts, box_pts])
    pts = pts[[metric.domain.contains(p) for p in pts]]
    check_signature(pert, pts)

    guess = (scenario.solution.params, scenario.solution.v0)
    try:
        sol = solve_gp_geodesic(pert, scenario.gec, guess, tol=tol, n_steps=n_steps)
        shoot = pjacobi_shooting(
            pert, scenario.gec, sol.path, params=sol.params,
            method="rk4", n_steps=n_steps,
        )
    except (NewtonDiverged, Exception) as exc:
        if isinstance(exc, SignatureBroken):
            raise
        return RecheckResult(eps=eps, kind="solver_failed", kernel_dim=None,
                             kernel_gap=None, residual=None)
    svals = np.sort(shoot.singular_values)
    gap = float(svals[shoot.dim]) if shoot.dim < len(svals) else 0.0
    kind = "nondegenerate" if shoot.dim == 0 else "degenerate"
    return RecheckResult(eps=eps, kind=kind, kernel_dim=shoot.dim,
                         kernel_gap=gap, residual=sol.residual)


def conformal_perturb(metric, factor, grad_factor=None, n_check=200, seed=5):
    """The conformal metric f * g for a positive function f on the chart."""
    rng = np.random.default_rng(seed)
    pts = metric.domain.sample(rng, n_check)
    vals = np.array([float(factor(p)) for p in pts])
    if np.any(vals <= 0.0):
        raise NonPositiveFactor("conformal factor fails positivity on a sample")

    def comps(x):
        return float(factor(x)) * metric.components(x)

    d_comps = None
    if metric.analytic_first:
        fd = 1e-6

        def grad(x):
            if grad_factor is not None:
                return np.asarray(grad_factor(x), dtype=float)
            g = np.empty(metric.dimension)
            for i in range(metric.dimension):
                e = np.zeros(metric.dimension)
                e[i] = fd
                g[i] = (float(factor(x + e)) - float(factor(x - e))) / (2 * fd)
            return g

        def d_comps(x):
            f = float(factor(x))
            df = grad(x)
            return f * metric.first_derivatives(x) + np.einsum(
                "ij,k->ijk", metric.components(x), df
            )

    return MetricField(
        metric.domain,
        metric.index,
        comps,
        d_components=d_comps,
        fd_step=metric.fd_step,
        fd_step2=metric.fd_step2,
        name=f"conformal({metric.name})",
    )


# -- Monte Carlo genericity illustration ----------------------------------------------


@dataclass
class GenericityTrial:
    scenario_label: str
    eps: float
    seed: int
    n_trials: int
    outcomes: list
    fraction_nondegenerate: float

    def to_json(self):
        return {
            "scenario": self.scenario_label,
            "eps": self.eps,
            "seed": self.seed,
            "n_trials": self.n_trials,
            "fraction_nondegenerate": self.fraction_nondegenerate,
            "outcomes": self.outcomes,
        }


def genericity_montecarlo(scenario, n_trials=100, eps=1e-2, seed=0, rho=0.1,
                          n_steps=150):
    """Randomized bumps applied to a degenerate scenario; reports the
    fraction of trials whose rechecked solution is nondegenerate.

    Randomness is drawn from counter-based Philox streams keyed by
    (seed, trial), so outcomes are reproducible trial-by-trial regardless of
    execution order.
    """
    metric = scenario.metric
    path = scenario.path
    m = metric.dimension
    verdict = detect_periodicity(path)
    outcomes = []
    n_good = 0
    for trial in range(n_trials):
        rng = np.random.Generator(
            np.random.Philox(key=np.uint64(seed) << np.uint64(20) | np.uint64(trial))
        )
        try:
            W = iterate_sum_field(scenario.jacobi, path, periodicity=verdict)
            center = rng.uniform(0.1, 0.9) * path.T
            interval = select_interval(
                path, W.value, rho, widths=(rng.uniform(0.08, 0.2),),
                preferred_center=center,
            )
            A = rng.standard_normal((m, m))
            K = A.T @ A + 0.1 * np.eye(m)
            bump = build_bump(metric, path, W, interval, K_target=K, rho=rho,
                              n_fine=200, check=False)
            res = apply_and_recheck(metric, bump, eps, scenario,
                                    n_steps=n_steps, seed=seed + trial)
            outcome = {
                "trial": trial,
                "kind": res.kind,
                "kernel_gap": res.kernel_gap,
                "interval": [interval.t0, interval.t1],
            }
            if res.kind == "nondegenerate":
                n_good += 1
        except (NoValidInterval, StronglyDegenerateSuspected, SignatureBroken) as exc:
            outcome = {"trial": trial, "kind": "solver_failed",
                       "error": type(exc).__name__}
        outcomes.append(outcome)
    return GenericityTrial(
        scenario_label=scenario.label,
        eps=eps,
        seed=seed,
        n_trials=n_trials,
        outcomes=outcomes,
        fraction_nondegenerate=n_good / max(n_trials, 1),
    )
