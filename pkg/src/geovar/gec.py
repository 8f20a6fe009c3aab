"""General endpoints conditions on the doubled chart and their solvers.

A GEC is a submanifold P of M x M constraining the endpoint pair of a curve.
Every variant exposes one joint immersion psi: R^d -> R^2m (value, Jacobian,
Hessian), which makes boundary geometry, shooting, and the linearized
endpoint conditions uniform across variants:

* critical curves satisfy (v(0), v(1)) gbar-orthogonal to T P, with
  gbar = diag(g, -g) on the product chart;
* the kernel of the second variation consists of Jacobi fields J with
  (J(0), J(1)) in T P and the T P-components of (DJ(0), DJ(1)) +
  S^P_(v(0), v(1)) (J(0), J(1)) vanishing.

The shooting solver treats all variants identically: unknowns are the P
parameters plus the initial velocity; residuals are the endpoint miss and
the gbar-orthogonality rows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .chartmetric import euclidean_gr
from .errors import (
    DegenerateRestriction,
    DomainExit,
    NewtonDiverged,
    NotCritical,
)
from .geodesic import integrate_geodesic, shoot_endpoints_batch
from .jacobi import JacobiSolution, jacobi_basis, propagate_jacobi
from .numutil import kernel_count, wrap_delta

GRAM_TOL = 1e-8


# -- immersions -----------------------------------------------------------------


class Immersion:
    """Parametrized submanifold patch u -> R^n with derivative data.

    ``jacobian`` and ``hessian`` fall back to central finite differences of
    ``value`` when not supplied.
    """

    def __init__(self, value, dim_param, dim_ambient, jacobian=None, hessian=None,
                 box=None, fd_step=1e-6, label=""):
        self._value = value
        self.dim_param = dim_param
        self.dim_ambient = dim_ambient
        self._jacobian = jacobian
        self._hessian = hessian
        self.box = None if box is None else np.asarray(box, dtype=float)
        self.fd_step = fd_step
        self.label = label

    def value(self, u):
        return np.asarray(self._value(np.atleast_1d(np.asarray(u, dtype=float))),
                          dtype=float)

    def jacobian(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self._jacobian is not None:
            return np.asarray(self._jacobian(u), dtype=float)
        h = self.fd_step
        cols = []
        for a in range(self.dim_param):
            e = np.zeros(self.dim_param)
            e[a] = h
            cols.append((self.value(u + e) - self.value(u - e)) / (2 * h))
        return np.stack(cols, axis=1) if cols else np.zeros((self.dim_ambient, 0))

    def hessian(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if self._hessian is not None:
            return np.asarray(self._hessian(u), dtype=float)
        h = max(self.fd_step, 1e-5)
        d = self.dim_param
        H = np.zeros((self.dim_ambient, d, d))
        for a in range(d):
            ea = np.zeros(d)
            ea[a] = h
            H[:, a, a] = (self.value(u + ea) - 2 * self.value(u) + self.value(u - ea)) / h**2
            for b in range(a + 1, d):
                eb = np.zeros(d)
                eb[b] = h
                mixed = (
                    self.value(u + ea + eb)
                    - self.value(u + ea - eb)
                    - self.value(u - ea + eb)
                    + self.value(u - ea - eb)
                ) / (4 * h**2)
                H[:, a, b] = H[:, b, a] = mixed
        return H

    def grid(self, n_per_axis):
        if self.dim_param == 0:
            return [np.zeros(0)]
        box = self.box
        if box is None:
            raise ValueError("immersion has no parameter box to sample")
        axes = [np.linspace(box[i, 0], box[i, 1], n_per_axis) for i in range(self.dim_param)]
        return [np.array(c) for c in itertools.product(*axes)]


def point_immersion(p):
    p = np.asarray(p, dtype=float)
    return Immersion(lambda u: p, 0, p.size, box=np.zeros((0, 2)), label="point")


def circle_immersion(center, radius, ambient_pad=0):
    """Round circle in the plane (optionally embedded in higher dimension)."""
    c = np.asarray(center, dtype=float)
    n = c.size + ambient_pad

    def val(u):
        out = np.zeros(n)
        out[: c.size] = c
        out[0] += radius * np.cos(u[0])
        out[1] += radius * np.sin(u[0])
        return out

    def jac(u):
        out = np.zeros((n, 1))
        out[0, 0] = -radius * np.sin(u[0])
        out[1, 0] = radius * np.cos(u[0])
        return out

    def hess(u):
        out = np.zeros((n, 1, 1))
        out[0, 0, 0] = -radius * np.cos(u[0])
        out[1, 0, 0] = -radius * np.sin(u[0])
        return out

    return Immersion(val, 1, n, jacobian=jac, hessian=hess,
                     box=np.array([[0.0, 2 * np.pi]]), label=f"circle(r={radius})")


def expression_immersion(exprs, dim_param, box, params=None, label="expression"):
    """Immersion whose components are sympy expression strings in u1..ud."""
    import sympy as sp

    us = sp.symbols(f"u1:{dim_param + 1}")
    local = {f"u{i + 1}": us[i] for i in range(dim_param)}
    if params:
        local.update({k: sp.Float(v) for k, v in params.items()})
    comps = [sp.sympify(e, locals=local) for e in exprs]
    jac = [[sp.diff(c, us[a]) for a in range(dim_param)] for c in comps]
    hess = [[[sp.diff(c, us[a], us[b]) for b in range(dim_param)]
             for a in range(dim_param)] for c in comps]
    f_v = sp.lambdify(us, comps, "numpy")
    f_j = sp.lambdify(us, jac, "numpy")
    f_h = sp.lambdify(us, hess, "numpy")
    n = len(exprs)
    return Immersion(
        lambda u: np.asarray(f_v(*u), dtype=float),
        dim_param,
        n,
        jacobian=lambda u: np.asarray(f_j(*u), dtype=float).reshape(n, dim_param),
        hessian=lambda u: np.asarray(f_h(*u), dtype=float).reshape(n, dim_param, dim_param),
        box=box,
        label=label,
    )


# -- GEC variants ----------------------------------------------------------------


class Gec:
    """Base class; concrete variants fill in the joint immersion interface."""

    variant = "abstract"

    def __init__(self, dimension):
        self.dimension = dimension  # m of the underlying chart

    @property
    def param_dim(self):
        raise NotImplementedError

    def pair(self, u):
        raise NotImplementedError

    def tangent_basis(self, u):
        raise NotImplementedError

    def second_derivatives(self, u):
        raise NotImplementedError

    def param_grid(self, n_per_axis):
        raise NotImplementedError

    @property
    def is_compact(self):
        raise NotImplementedError

    # conveniences shared by all variants
    def start_point(self, u):
        return self.pair(u)[: self.dimension]

    def end_point(self, u):
        return self.pair(u)[self.dimension:]

    def membership_residual(self, pair, u):
        d = np.asarray(pair, dtype=float) - self.pair(u)
        return float(np.linalg.norm(d))

    def locate(self, pair, u0=None, n_grid=7, tol=1e-9):
        """Parameters of the nearest point of P to the given pair."""
        pair = np.asarray(pair, dtype=float)
        if self.param_dim == 0:
            return np.zeros(0)
        starts = [np.atleast_1d(u0)] if u0 is not None else self.param_grid(n_grid)
        best_u, best_r = None, np.inf
        for u in starts:
            u = np.asarray(u, dtype=float)
            for _ in range(50):
                F = self.pair(u) - pair
                J = self.tangent_basis(u)
                try:
                    step, *_ = np.linalg.lstsq(J, -F, rcond=None)
                except np.linalg.LinAlgError:
                    break
                u = u + step
                if np.linalg.norm(step) < 1e-13:
                    break
            r = self.membership_residual(pair, u)
            if r < best_r:
                best_u, best_r = u, r
        return best_u

    def transpose(self):
        return TransposedGec(self)


class FixedPoints(Gec):
    """P = {p} x {q}; the classical two-point boundary value problem."""

    variant = "fixed"

    def __init__(self, p, q):
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        super().__init__(p.size)
        self.p, self.q = p, q

    @property
    def param_dim(self):
        return 0

    def pair(self, u):
        return np.concatenate([self.p, self.q])

    def tangent_basis(self, u):
        return np.zeros((2 * self.dimension, 0))

    def second_derivatives(self, u):
        return np.zeros((2 * self.dimension, 0, 0))

    def param_grid(self, n_per_axis):
        return [np.zeros(0)]

    @property
    def is_compact(self):
        return True


class ProductSubmanifolds(Gec):
    """P = P x Q for two immersed submanifolds of M (points allowed)."""

    variant = "product"

    def __init__(self, psi_P, psi_Q):
        if psi_P.dim_ambient != psi_Q.dim_ambient:
            raise ValueError("factor immersions live in different charts")
        super().__init__(psi_P.dim_ambient)
        self.psi_P, self.psi_Q = psi_P, psi_Q

    @property
    def param_dim(self):
        return self.psi_P.dim_param + self.psi_Q.dim_param

    def _split(self, u):
        d1 = self.psi_P.dim_param
        return u[:d1], u[d1:]

    def pair(self, u):
        u1, u2 = self._split(np.atleast_1d(u))
        return np.concatenate([self.psi_P.value(u1), self.psi_Q.value(u2)])

    def tangent_basis(self, u):
        u1, u2 = self._split(np.atleast_1d(u))
        m = self.dimension
        d1, d2 = self.psi_P.dim_param, self.psi_Q.dim_param
        B = np.zeros((2 * m, d1 + d2))
        B[:m, :d1] = self.psi_P.jacobian(u1)
        B[m:, d1:] = self.psi_Q.jacobian(u2)
        return B

    def second_derivatives(self, u):
        u1, u2 = self._split(np.atleast_1d(u))
        m = self.dimension
        d1, d2 = self.psi_P.dim_param, self.psi_Q.dim_param
        H = np.zeros((2 * m, d1 + d2, d1 + d2))
        if d1:
            H[:m, :d1, :d1] = self.psi_P.hessian(u1)
        if d2:
            H[m:, d1:, d1:] = self.psi_Q.hessian(u2)
        return H

    def param_grid(self, n_per_axis):
        g1 = self.psi_P.grid(n_per_axis)
        g2 = self.psi_Q.grid(n_per_axis)
        return [np.concatenate([a, b]) for a in g1 for b in g2]

    @property
    def is_compact(self):
        def ok(psi):
            return psi.dim_param == 0 or (
                psi.box is not None and np.all(np.isfinite(psi.box))
            )

        return ok(self.psi_P) and ok(self.psi_Q)


class Diagonal(Gec):
    """P = Delta: periodic boundary conditions. gbar degenerates identically
    on T Delta, so this variant is special-cased wherever gbar-projections
    would be needed."""

    variant = "diagonal"

    def __init__(self, domain):
        super().__init__(domain.dimension)
        self.domain = domain

    @property
    def param_dim(self):
        return self.dimension

    def pair(self, u):
        u = np.atleast_1d(u)
        return np.concatenate([u, u])

    def tangent_basis(self, u):
        eye = np.eye(self.dimension)
        return np.concatenate([eye, eye], axis=0)

    def second_derivatives(self, u):
        m = self.dimension
        return np.zeros((2 * m, m, m))

    def param_grid(self, n_per_axis):
        lo = np.where(np.isfinite(self.domain.lower), self.domain.lower, -3.0)
        hi = np.where(np.isfinite(self.domain.upper), self.domain.upper, 3.0)
        axes = [np.linspace(lo[i], hi[i], n_per_axis) for i in range(self.dimension)]
        return [np.array(c) for c in itertools.product(*axes)]

    def locate(self, pair, u0=None, n_grid=7, tol=1e-9):
        # the nearest diagonal parameter is the start point; averaging would
        # be wrong for unwrapped angular coordinates
        return np.asarray(pair, dtype=float)[: self.dimension]

    @property
    def is_compact(self):
        return bool(
            np.all(
                [
                    self.domain.periodic[i]
                    or (np.isfinite(self.domain.lower[i]) and np.isfinite(self.domain.upper[i]))
                    for i in range(self.dimension)
                ]
            )
        )


class Parametrized(Gec):
    """General P subset M x M given by one immersion into the doubled chart."""

    variant = "parametrized"

    def __init__(self, psi):
        if psi.dim_ambient % 2 != 0:
            raise ValueError("parametrized GEC must land in the doubled chart")
        super().__init__(psi.dim_ambient // 2)
        self.psi = psi

    @property
    def param_dim(self):
        return self.psi.dim_param

    def pair(self, u):
        return self.psi.value(u)

    def tangent_basis(self, u):
        return self.psi.jacobian(u)

    def second_derivatives(self, u):
        return self.psi.hessian(u)

    def param_grid(self, n_per_axis):
        return self.psi.grid(n_per_axis)

    @property
    def is_compact(self):
        return self.psi.box is not None and bool(np.all(np.isfinite(self.psi.box)))


class TransposedGec(Gec):
    """P^t: the same condition with factors swapped (time-reversed curves)."""

    variant = "transposed"

    def __init__(self, base):
        super().__init__(base.dimension)
        self.base = base

    @property
    def param_dim(self):
        return self.base.param_dim

    def _swap(self, pair_like):
        m = self.dimension
        return np.concatenate([pair_like[m:], pair_like[:m]], axis=0)

    def pair(self, u):
        return self._swap(self.base.pair(u))

    def tangent_basis(self, u):
        return self._swap(self.base.tangent_basis(u))

    def second_derivatives(self, u):
        return self._swap(self.base.second_derivatives(u))

    def param_grid(self, n_per_axis):
        return self.base.param_grid(n_per_axis)

    @property
    def is_compact(self):
        return self.base.is_compact


# -- product-metric helpers -------------------------------------------------------


def gbar_matrix(metric, pair):
    m = metric.dimension
    G = np.zeros((2 * m, 2 * m))
    G[:m, :m] = metric.components(pair[:m])
    G[m:, m:] = -metric.components(pair[m:])
    return G


def gbar_christoffel_apply(metric, pair, V, W):
    """Gamma-bar of the product connection applied to two doubled vectors."""
    m = metric.dimension
    gp = metric.christoffel_array(pair[:m])
    gq = metric.christoffel_array(pair[m:])
    out = np.zeros(2 * m)
    out[:m] = np.einsum("kij,i,j->k", gp, V[:m], W[:m])
    out[m:] = np.einsum("kij,i,j->k", gq, V[m:], W[m:])
    return out


# -- boundary geometry -------------------------------------------------------------


@dataclass
class BoundaryGeometry:
    """Tangent/normal decomposition and second fundamental form of P at a point."""

    gec: object
    params: np.ndarray
    pair: np.ndarray
    tangent: np.ndarray  # (2m, d)
    gram: np.ndarray  # (d, d) restriction of gbar
    gram_condition: float
    nondegenerate: bool
    tangent_projector: np.ndarray | None
    normal_projector: np.ndarray | None
    _metric: object = None

    @property
    def dim(self):
        return self.tangent.shape[1]

    def sff(self, eta):
        """S^P_eta as a (d, d) bilinear form on the parameter tangent basis."""
        d = self.dim
        S = np.zeros((d, d))
        if d == 0:
            return S
        H = self.gec.second_derivatives(self.params)
        gbar = gbar_matrix(self._metric, self.pair)
        eta = np.asarray(eta, dtype=float)
        for a in range(d):
            for b in range(a, d):
                vec = H[:, a, b] + gbar_christoffel_apply(
                    self._metric, self.pair, self.tangent[:, a], self.tangent[:, b]
                )
                S[a, b] = S[b, a] = float(vec @ gbar @ eta)
        return S


def boundary_geometry(gec, metric, params, gram_tol=GRAM_TOL):
    """Boundary data of P at psi(params); flags a degenerate restriction."""
    params = np.atleast_1d(np.asarray(params, dtype=float))
    pair = gec.pair(params)
    B = gec.tangent_basis(params)
    d = B.shape[1]
    gbar = gbar_matrix(metric, pair)
    G = B.T @ gbar @ B
    G = 0.5 * (G + G.T)
    if d == 0:
        return BoundaryGeometry(
            gec=gec, params=params, pair=pair, tangent=B, gram=G,
            gram_condition=1.0, nondegenerate=True,
            tangent_projector=np.zeros((2 * gec.dimension,) * 2),
            normal_projector=np.eye(2 * gec.dimension), _metric=metric,
        )
    w = np.linalg.eigvalsh(G)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    nondeg = bool(np.min(np.abs(w)) > gram_tol * max(scale, 1.0))
    cond = float(scale / np.min(np.abs(w))) if np.min(np.abs(w)) > 0 else np.inf
    Pt = Pn = None
    if nondeg:
        Pt = B @ np.linalg.solve(G, B.T @ gbar)
        Pn = np.eye(2 * gec.dimension) - Pt
    return BoundaryGeometry(
        gec=gec, params=params, pair=pair, tangent=B, gram=G,
        gram_condition=cond, nondegenerate=nondeg,
        tangent_projector=Pt, normal_projector=Pn, _metric=metric,
    )


# -- shooting solver ---------------------------------------------------------------


@dataclass
class GpSolution:
    """A solved (g, P)-geodesic plus its residual certificate."""

    path: object
    gec: object
    params: np.ndarray
    v0: np.ndarray
    endpoint_residual: float
    orthogonality_residual: float
    jacobian_condition: float
    iterations: int
    geometry_start: BoundaryGeometry | None = None

    @property
    def residual(self):
        return max(self.endpoint_residual, self.orthogonality_residual)


def _orth_rows(metric, gec, u, path_end_pair_velocities):
    v0, v1, pair = path_end_pair_velocities
    B = gec.tangent_basis(u)
    if B.shape[1] == 0:
        return np.zeros(0)
    gbar = gbar_matrix(metric, pair)
    vel = np.concatenate([v0, v1])
    rows = B.T @ gbar @ vel
    return rows


def solve_gp_geodesic(
    metric,
    gec,
    guess,
    tol=1e-9,
    n_steps=None,
    max_iter=50,
    fd_step=1e-6,
    verify=True,
):
    """Newton-refined shooting for (g, P)-geodesics on [0, 1].

    ``guess`` is (u_params, v0) or (u_params, v0, T); a nonunit T rescales the
    velocity so the solve always runs on [0, 1]. Residuals: endpoint-on-P
    (chart-wrapped) and gbar-orthogonality of the endpoint velocities against
    a T P basis. Damped Gauss-Newton with a finite-difference Jacobian.
    """
    m = metric.dimension
    if len(guess) == 3:
        u0, v0, T = guess
        v0 = np.asarray(v0, dtype=float) * float(T)
    else:
        u0, v0 = guess
        v0 = np.asarray(v0, dtype=float)
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    du = gec.param_dim
    if u0.size != du:
        raise ValueError(f"guess has {u0.size} parameters, GEC needs {du}")
    n = n_steps or 300
    periods2 = metric.domain.periods
    nz = du + m

    speed_scale = max(1.0, float(np.linalg.norm(v0)))

    def residuals_batch(zs):
        """Residual vectors for several unknown vectors in one batched shot."""
        zs = np.atleast_2d(zs)
        X0 = np.stack([gec.start_point(z[:du]) for z in zs])
        V0 = zs[:, du:]
        X1, V1 = shoot_endpoints_batch(metric, X0, V0, n_steps=n)
        out = np.full((zs.shape[0], m + (gec.tangent_basis(zs[0][:du]).shape[1])), np.nan)
        for i, z in enumerate(zs):
            if not np.all(np.isfinite(X1[i])):
                continue
            u = z[:du]
            r_end = wrap_delta(X1[i] - gec.end_point(u), periods2)
            pair = np.concatenate([X0[i], X1[i]])
            r_orth = _orth_rows(metric, gec, u, (V0[i], V1[i], pair)) / speed_scale
            out[i] = np.concatenate([r_end, r_orth])
        return out

    z = np.concatenate([u0, v0])
    r = residuals_batch(z[None, :])[0]
    if not np.all(np.isfinite(r)):
        raise DomainExit("shooting trajectory left the chart")
    rnorm = np.linalg.norm(r)
    cond = np.inf
    lm_lambda = 1e-12
    it = 0
    for it in range(1, max_iter + 1):
        if rnorm <= tol:
            break
        steps = fd_step * np.maximum(1.0, np.abs(z))
        zs = [z]
        for j in range(nz):
            dz = np.zeros_like(z)
            dz[j] = steps[j]
            zs.append(z + dz)
            zs.append(z - dz)
        R = residuals_batch(np.stack(zs))
        if not np.all(np.isfinite(R[0])):
            raise DomainExit("shooting trajectory left the chart")
        r = R[0]
        rnorm = np.linalg.norm(r)
        if rnorm <= tol:
            break
        J = np.zeros((r.size, nz))
        for j in range(nz):
            rp, rm_ = R[1 + 2 * j], R[2 + 2 * j]
            if not (np.all(np.isfinite(rp)) and np.all(np.isfinite(rm_))):
                raise DomainExit("finite-difference trajectory left the chart")
            J[:, j] = (rp - rm_) / (2 * steps[j])
        svals = np.linalg.svd(J, compute_uv=False)
        cond = float(svals[0] / max(svals[-1], 1e-300))
        # Levenberg-Marquardt step: plain Gauss-Newton diverges along the
        # nearly-flat directions of almost-degenerate solution families
        JtJ = J.T @ J
        Jtr = J.T @ r
        smax2 = float(svals[0]) ** 2
        improved = False
        for _ in range(12):
            A = JtJ + lm_lambda * smax2 * np.eye(nz)
            try:
                step_vec = np.linalg.solve(A, -Jtr)
            except np.linalg.LinAlgError:
                lm_lambda = max(lm_lambda * 10.0, 1e-12)
                continue
            z_new = z + step_vec
            r_new = residuals_batch(z_new[None, :])[0]
            if np.all(np.isfinite(r_new)) and (
                np.linalg.norm(r_new) < rnorm or np.linalg.norm(r_new) <= tol
            ):
                z, r, rnorm = z_new, r_new, float(np.linalg.norm(r_new))
                lm_lambda = max(lm_lambda * 0.25, 1e-14)
                improved = True
                break
            lm_lambda = max(lm_lambda * 10.0, 1e-12)
        if not improved:
            break
    if rnorm > tol:
        raise NewtonDiverged(
            f"shooting residual {rnorm:.3e} above tolerance {tol:.1e} "
            f"after {it} iterations"
        )
    u, v = z[:du], z[du:]
    # certificate: the accepted path is re-integrated at a tighter budget and
    # carries dense output for downstream analysis
    x0 = gec.start_point(u)
    path = integrate_geodesic(
        metric, x0, v, 1.0, method="rk4", n_steps=(2 * n if verify else n)
    )
    if path.status != "completed":
        raise DomainExit("accepted trajectory left the chart", t_exit=path.t_exit)
    x1 = path.position(1.0)
    v1 = path.velocity(1.0)
    pair = np.concatenate([gec.start_point(u), x1])
    r_end = float(np.linalg.norm(wrap_delta(x1 - gec.end_point(u), periods2)))
    r_orth_vec = _orth_rows(metric, gec, u, (v, v1, pair)) / speed_scale
    r_orth = float(np.linalg.norm(r_orth_vec)) if r_orth_vec.size else 0.0
    geom = None
    if gec.variant not in ("diagonal",):
        geom = boundary_geometry(gec, metric, u)
    return GpSolution(
        path=path, gec=gec, params=u, v0=v, endpoint_residual=r_end,
        orthogonality_residual=r_orth, jacobian_condition=cond, iterations=it,
        geometry_start=geom,
    )


def check_critical(metric, gec, path, params=None, tol=1e-6):
    """Raise NotCritical unless the path is a (g, P)-geodesic within tol."""
    m = metric.dimension
    x0, x1 = path.position(0.0), path.position(path.T)
    v0, v1 = path.velocity(0.0), path.velocity(path.T)
    if params is None:
        params = gec.locate(np.concatenate([x0, x1]))
    params = np.atleast_1d(np.asarray(params, dtype=float))
    pairres = np.linalg.norm(
        wrap_delta(np.concatenate([x0, x1]) - gec.pair(params),
                   metric.domain.periods * 2)
    )
    scale = 1.0 + float(np.linalg.norm(v0))
    rows = _orth_rows(metric, gec, params, (v0, v1, np.concatenate([x0, x1])))
    orth = float(np.linalg.norm(rows)) / scale**2 if rows.size else 0.0
    if pairres > tol * scale or orth > tol:
        raise NotCritical(
            f"endpoint residual {pairres:.2e} / orthogonality {orth:.2e} "
            f"exceed tolerance {tol:.1e}"
        )
    return params


# -- linearized endpoint conditions -------------------------------------------------


@dataclass
class PjacobiResidual:
    membership: np.ndarray
    tangential: np.ndarray

    @property
    def norm(self):
        return float(
            np.sqrt(np.sum(self.membership**2) + np.sum(self.tangential**2))
        )


def pjacobi_boundary_residual(metric, gec, jacobi, params=None):
    """Residual of the linearized endpoints condition for a Jacobi field.

    Components: membership of (J(0), J(1)) in T P (coordinates in the
    Euclidean complement of T P) and, for each T P basis vector W,
    gbar((DJ(0), DJ(1)), W) + S^P_(v0, v1)(J, W). The zero vector
    characterizes P-Jacobi fields within tolerance.
    """
    path = jacobi.path
    m = metric.dimension
    if params is None:
        pair0 = np.concatenate([path.position(0.0), path.position(path.T)])
        params = gec.locate(pair0)
    params = np.atleast_1d(np.asarray(params, dtype=float))
    B = gec.tangent_basis(params)
    d = B.shape[1]
    J0, DJ0 = jacobi.at(0.0)
    J1, DJ1 = jacobi.at(path.T)
    Jpair = np.concatenate([J0, J1])
    DJpair = np.concatenate([DJ0, DJ1])
    # membership: coordinates in the orthogonal complement of span(B)
    if d > 0:
        U, s, _ = np.linalg.svd(B, full_matrices=True)
        comp = U[:, d:]
        membership = comp.T @ Jpair
        coeffs, *_ = np.linalg.lstsq(B, Jpair, rcond=None)
    else:
        membership = Jpair.copy()
        coeffs = np.zeros(0)
    if d == 0:
        return PjacobiResidual(membership=membership, tangential=np.zeros(0))
    pair = gec.pair(params)
    gbar = gbar_matrix(metric, pair)
    v0, v1 = path.velocity(0.0), path.velocity(path.T)
    eta = np.concatenate([v0, v1])
    H = gec.second_derivatives(params)
    speed = max(1.0, float(eta @ eta))
    tang = np.zeros(d)
    Hc = np.einsum("nab,a->nb", H, coeffs)
    Jt = B @ coeffs  # tangential representative of (J(0), J(1))
    for b in range(d):
        vec = Hc[:, b] + gbar_christoffel_apply(metric, pair, Jt, B[:, b])
        s_term = float(vec @ gbar @ eta)
        tang[b] = (float(B[:, b] @ gbar @ DJpair) + s_term) / speed
    return PjacobiResidual(membership=membership, tangential=tang)


@dataclass
class ShootingKernel:
    dim: int
    basis: list
    singular_values: np.ndarray
    threshold: float
    gec: object


def pjacobi_shooting(metric, gec, path, params=None, tol=1e-10, rel_floor=1e-6,
                     method="adaptive", n_steps=None):
    """Count and construct P-Jacobi fields by propagating the 2m-dim basis.

    Builds the linear map from Jacobi initial data to the full residual of
    the linearized endpoints condition and reads its kernel from singular
    values. Serves as the independent oracle for index-form kernels.
    """
    params = check_critical(metric, gec, path, params=params)
    m = metric.dimension
    basis = jacobi_basis(metric, path, tol=tol, method=method, n_steps=n_steps)
    cols = []
    for j in range(2 * m):
        res = pjacobi_boundary_residual(metric, gec, basis.column(j), params=params)
        cols.append(np.concatenate([res.membership, res.tangential]))
    Rmat = np.stack(cols, axis=1)  # (n_res, 2m)
    # Row normalization equalizes membership and derivative scales. Rows that
    # are zero up to noise carry no constraint and must not be amplified.
    norms = np.linalg.norm(Rmat, axis=1)
    row_scale = float(np.max(norms)) if norms.size else 0.0
    keep = norms > 1e-8 * max(row_scale, 1e-300)
    Rn = Rmat.copy()
    Rn[keep] /= norms[keep, None]
    Rn[~keep] = 0.0
    u, s, vt = np.linalg.svd(Rn)
    svals = np.zeros(2 * m)
    svals[: s.size] = s
    scale = max(float(np.max(svals)), 1e-300)
    dim, thr = kernel_count(svals, scale=scale, rel_floor=rel_floor, zone=1e-4)
    fields = []
    if dim > 0:
        kernel_vecs = vt[2 * m - dim:, :]
        for vec in kernel_vecs:
            fields.append(basis.combine(vec))
    return ShootingKernel(
        dim=int(dim), basis=fields, singular_values=svals, threshold=thr, gec=gec
    )


# -- admissibility -------------------------------------------------------------------


@dataclass
class AdmissibilityReport:
    compact: bool
    nondegenerate_restriction: bool
    worst_gram_condition: float
    transversal_to_diagonal: bool
    worst_transversality_margin: float
    diagonal_intersections: list
    length_lower_bound: float | None
    length_bound_note: str
    verdict: str
    rule: str


def _diagonal_intersections(gec, metric, n_grid=9, tol=1e-8):
    """Points of P meeting the diagonal, found by Gauss-Newton from a grid."""
    m = gec.dimension
    periods = metric.domain.periods
    found = []
    if gec.variant == "diagonal":
        return None  # everything intersects
    if gec.param_dim == 0:
        pair = gec.pair(np.zeros(0))
        gap = np.linalg.norm(wrap_delta(pair[:m] - pair[m:], periods))
        return [np.zeros(0)] if gap <= tol else []
    for u0 in gec.param_grid(n_grid):
        u = np.asarray(u0, dtype=float)
        ok = False
        for _ in range(60):
            pair = gec.pair(u)
            F = wrap_delta(pair[:m] - pair[m:], periods)
            if np.linalg.norm(F) <= tol:
                ok = True
                break
            B = gec.tangent_basis(u)
            Jmat = B[:m, :] - B[m:, :]
            try:
                step, *_ = np.linalg.lstsq(Jmat, -F, rcond=None)
            except np.linalg.LinAlgError:
                break
            if np.linalg.norm(step) > 10.0:
                break
            u = u + step
            if np.linalg.norm(step) < 1e-13:
                pair = gec.pair(u)
                ok = np.linalg.norm(wrap_delta(pair[:m] - pair[m:], periods)) <= tol
                break
        if ok and not any(np.linalg.norm(u - w) < 1e-6 for w in found):
            found.append(u)
    return found


def _transversality_margin(gec, u):
    """Relative smallest singular value of [T P basis | diagonal basis]."""
    m = gec.dimension
    B = gec.tangent_basis(u)
    D = np.concatenate([np.eye(m), np.eye(m)], axis=0) / np.sqrt(2.0)
    cols = [D]
    if B.shape[1]:
        cols.insert(0, B / np.maximum(np.linalg.norm(B, axis=0, keepdims=True), 1e-300))
    Mfull = np.concatenate(cols, axis=1)
    s = np.linalg.svd(Mfull, compute_uv=False)
    if Mfull.shape[1] < 2 * m:
        return 0.0
    return float(s[2 * m - 1])


def check_admissibility(gec, metric, n_grid=9, short_solve_seeds=6, tol=1e-8):
    """Admissibility verdict per the compactness / nondegenerate-restriction /
    transversality rules, with an estimated length lower bound as evidence."""
    m = gec.dimension
    compact = gec.is_compact
    # (ii) restriction nondegeneracy on a parameter sample
    worst_cond = 1.0
    nondeg = True
    if gec.variant == "diagonal":
        nondeg = False
        worst_cond = np.inf
    elif gec.param_dim > 0:
        for u in gec.param_grid(n_grid):
            geom = boundary_geometry(gec, metric, u)
            worst_cond = max(worst_cond, geom.gram_condition)
            if not geom.nondegenerate:
                nondeg = False
    inters = _diagonal_intersections(gec, metric, n_grid=n_grid)
    transversal = True
    worst_margin = np.inf
    if inters is None:  # diagonal variant
        transversal = False
        worst_margin = 0.0
        inters = []
    else:
        for u in inters:
            margin = _transversality_margin(gec, u)
            worst_margin = min(worst_margin, margin)
            if margin <= 1e-6:
                transversal = False
        if not inters:
            worst_margin = np.inf

    # length lower bound evidence (skipped when the verdict is already
    # negative: no admissible neighborhood exists to bound)
    a = None
    note = "unavailable"
    if gec.variant == "diagonal" or not nondeg:
        note = "skipped: restriction degenerate"
    elif gec.variant == "fixed":
        gap = np.linalg.norm(
            wrap_delta(gec.p - gec.q, metric.domain.periods)
        )
        a = float(gap)
        note = "exact for fixed endpoints (g_R distance)"
    elif not inters and gec.param_dim > 0:
        best = np.inf
        for u in gec.param_grid(max(n_grid, 13)):
            pair = gec.pair(u)
            best = min(
                best,
                float(np.linalg.norm(wrap_delta(pair[:m] - pair[m:],
                                                metric.domain.periods))),
            )
        a = best
        note = "sampled min g_R distance over P (P does not meet the diagonal)"
    elif inters:
        lengths = []
        rng = np.random.default_rng(7)
        for u_star in inters:
            for _ in range(short_solve_seeds):
                v0 = 0.5 * rng.standard_normal(m)
                du = gec.param_dim
                u_init = np.asarray(u_star, dtype=float) + 0.05 * rng.standard_normal(du)
                try:
                    solu = solve_gp_geodesic(
                        metric, gec, (u_init, v0), tol=1e-8, n_steps=120, max_iter=30
                    )
                except Exception:
                    continue
                if solu.path.length_r > 100 * tol:
                    lengths.append(solu.path.length_r)
        if lengths:
            a = 0.9 * min(lengths)
            note = "estimated: 0.9 x min length over solved short connectors"
        else:
            note = "estimated: no nonconstant short connectors found"

    if gec.variant == "diagonal":
        verdict, rule = "not_admissible", "diagonal-gec-degenerate"
    elif not nondeg:
        verdict, rule = "not_admissible", "degenerate-restriction"
    elif not compact:
        verdict, rule = "not_admissible", "noncompact-gec"
    elif gec.variant == "fixed":
        verdict, rule = "admissible", "fixed-endpoints"
    elif gec.variant == "product" and (
        gec.psi_P.dim_param == 0 or gec.psi_Q.dim_param == 0
    ):
        verdict, rule = "admissible", "point-factor"
    elif not inters:
        verdict, rule = "admissible", "disjoint-from-diagonal"
    elif transversal:
        verdict, rule = "admissible", "transversal-to-diagonal"
    else:
        verdict, rule = "undetermined", "nontransversal-intersection"
    return AdmissibilityReport(
        compact=compact,
        nondegenerate_restriction=nondeg,
        worst_gram_condition=worst_cond,
        transversal_to_diagonal=transversal,
        worst_transversality_margin=float(worst_margin),
        diagonal_intersections=[np.asarray(u) for u in inters],
        length_lower_bound=a,
        length_bound_note=note,
        verdict=verdict,
        rule=rule,
    )


# -- focality -----------------------------------------------------------------------


@dataclass
class FocalityVerdict:
    focal: bool
    solutions: list  # (GpSolution, kernel_dim)


def focality_report(metric, gec, seeds, tol=1e-8):
    """Focality of the factors of a product GEC: wraps shooting + kernel count.

    ``seeds`` is an iterable of (u_params, v0) or (u_params, v0, T) guesses;
    focal iff some solved connector carries a nontrivial kernel.
    """
    if gec.variant not in ("product", "fixed"):
        raise ValueError("focality_report expects a product-type GEC")
    sols = []
    for guess in seeds:
        try:
            sol = solve_gp_geodesic(metric, gec, guess, tol=tol)
        except (NewtonDiverged, DomainExit):
            continue
        # deduplicate by phase-space distance of initial data
        dup = False
        for prev, _ in sols:
            if (
                np.linalg.norm(prev.path.position(0.0) - sol.path.position(0.0)) < 1e-4
                and np.linalg.norm(prev.v0 - sol.v0) < 1e-4
            ):
                dup = True
                break
        if dup:
            continue
        ker = pjacobi_shooting(metric, gec, sol.path, params=sol.params)
        sols.append((sol, ker.dim))
    return FocalityVerdict(focal=any(k >= 1 for _, k in sols), solutions=sols)
