"""Semi-Riemannian metrics on a coordinate chart and their Levi-Civita data.

A metric is a field of symmetric nondegenerate bilinear forms of constant
index nu on an axis-aligned chart domain. Everything downstream (geodesics,
Jacobi fields, index forms) consumes the arrays produced here:

* ``christoffel_array(x)[k, i, j]`` is Gamma^k_ij,
* ``curvature_array(x)[a, b, c, d]`` is the a-component of R(e_b, e_c) e_d,
  with the sign convention R(X,Y)Z = [nabla_X, nabla_Y]Z - nabla_[X,Y]Z.

Derivatives of the components are analytic when the caller supplies them and
second-order central differences otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateAtPoint,
    OutOfDomain,
    ProjectorNotIdempotent,
    ZeroVector,
)
from .numutil import wrap_delta

SYMMETRY_TOL = 1e-12
DEGENERACY_TOL = 1e-10
LIGHTLIKE_TOL = 1e-9
FD_STEP_FIRST = 1e-5
FD_STEP_SECOND = 1e-4


@dataclass(frozen=True)
class ChartDomain:
    """Axis-aligned box in coordinate space; extended reals allowed.

    Periodic axes model angular coordinates: the ODE side works with
    unwrapped values, while comparisons wrap differences by the axis period
    (upper - lower). Periodic axes never trigger domain exits.
    """

    dimension: int
    lower: np.ndarray
    upper: np.ndarray
    periodic: tuple = ()
    label: str = ""

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if lo.shape != (self.dimension,) or hi.shape != (self.dimension,):
            raise ValueError("bounds must have one entry per axis")
        if not np.all(lo < hi):
            raise ValueError("each lower bound must be below the upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        per = tuple(self.periodic) if self.periodic else (False,) * self.dimension
        if len(per) != self.dimension:
            raise ValueError("periodic flags must have one entry per axis")
        object.__setattr__(self, "periodic", per)

    @property
    def periods(self):
        """Per-axis period (None on non-periodic axes)."""
        return tuple(
            (self.upper[i] - self.lower[i]) if self.periodic[i] else None
            for i in range(self.dimension)
        )

    def contains(self, x, margin=0.0):
        x = np.asarray(x, dtype=float)
        ok = True
        for i in range(self.dimension):
            if self.periodic[i]:
                continue
            ok = ok and (self.lower[i] + margin <= x[i] <= self.upper[i] - margin)
        return bool(ok)

    def boundary_margin(self, x):
        """Smallest distance to a non-periodic face; +inf if none."""
        x = np.asarray(x, dtype=float)
        m = np.inf
        for i in range(self.dimension):
            if self.periodic[i]:
                continue
            m = min(m, x[i] - self.lower[i], self.upper[i] - x[i])
        return m

    def wrap_delta(self, delta):
        return wrap_delta(delta, self.periods)

    def sample(self, rng, n, window=5.0):
        """Uniform random points, clipping infinite axes to [-window, window]."""
        lo = np.where(np.isfinite(self.lower), self.lower, -window)
        hi = np.where(np.isfinite(self.upper), self.upper, window)
        return lo + (hi - lo) * rng.random((n, self.dimension))


class AuxiliaryRiemannian:
    """Fixed positive-definite comparison metric g_R on the chart."""

    def __init__(self, dimension, components=None, label="euclidean"):
        self.dimension = dimension
        self._components = components
        self.label = label

    def __call__(self, x):
        if self._components is None:
            return np.eye(self.dimension)
        G = np.asarray(self._components(np.asarray(x, dtype=float)), dtype=float)
        return 0.5 * (G + G.T)

    def norm(self, x, v):
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(v @ self(x) @ v))

    @property
    def is_euclidean(self):
        return self._components is None


def euclidean_gr(dimension):
    return AuxiliaryRiemannian(dimension)


@dataclass
class ChristoffelValue:
    """Christoffel tensor at a point: gamma[k, i, j] = Gamma^k_ij."""

    x: np.ndarray
    gamma: np.ndarray

    def __call__(self, u, v):
        return np.einsum("kij,i,j->k", self.gamma, u, v)


@dataclass
class CurvatureValue:
    """Curvature data at a point.

    ``riemann[a, b, c, d]`` is the a-component of R(e_b, e_c) e_d; ``ricci``
    is the trace on the first/last slots and ``scalar`` its g-trace.
    """

    x: np.ndarray
    riemann: np.ndarray
    ricci: np.ndarray
    scalar: float

    def apply(self, X, Y, Z):
        return np.einsum("abcd,b,c,d->a", self.riemann, X, Y, Z)


class MetricField:
    """Coordinate-chart semi-Riemannian metric of prescribed index.

    Parameters
    ----------
    domain : ChartDomain
    index : int
        Number of negative eigenvalues of g at every point.
    components : callable
        x -> symmetric (m, m) array.
    d_components : callable, optional
        x -> (m, m, m) array with dg[i, j, k] = d g_ij / d x_k. Finite
        differences with step ``fd_step`` are used when absent.
    dd_components : callable, optional
        x -> (m, m, m, m) array with ddg[i, j, k, l] = d^2 g_ij / dx_k dx_l.
    """

    def __init__(
        self,
        domain,
        index,
        components,
        d_components=None,
        dd_components=None,
        fd_step=FD_STEP_FIRST,
        fd_step2=FD_STEP_SECOND,
        name="metric",
        constant=False,
        components_batch=None,
        d_components_batch=None,
    ):
        if not 0 <= index <= domain.dimension:
            raise ValueError("index must lie in [0, m]")
        self.domain = domain
        self.index = index
        self._components = components
        self._d_components = d_components
        self._dd_components = dd_components
        self._components_batch = components_batch
        self._d_components_batch = d_components_batch
        self.fd_step = fd_step
        self.fd_step2 = fd_step2
        self.name = name
        # constant-coefficient metrics short-circuit all derivative machinery
        self.constant = constant
        if constant:
            m = domain.dimension
            self._const_g = np.asarray(components(np.zeros(m)), dtype=float)
            self._const_zero3 = np.zeros((m, m, m))
            self._const_zero4 = np.zeros((m, m, m, m))

    # -- raw component access -------------------------------------------------

    @property
    def dimension(self):
        return self.domain.dimension

    @property
    def analytic_first(self):
        return self._d_components is not None

    @property
    def analytic_second(self):
        return self._dd_components is not None

    def components(self, x):
        if self.constant:
            return self._const_g
        return np.asarray(self._components(np.asarray(x, dtype=float)), dtype=float)

    def first_derivatives(self, x):
        if self.constant:
            return self._const_zero3
        x = np.asarray(x, dtype=float)
        if self._d_components is not None:
            return np.asarray(self._d_components(x), dtype=float)
        m = self.dimension
        h = self.fd_step
        dg = np.empty((m, m, m))
        for k in range(m):
            e = np.zeros(m)
            e[k] = h
            dg[:, :, k] = (self.components(x + e) - self.components(x - e)) / (2 * h)
        return dg

    def second_derivatives(self, x):
        if self.constant:
            return self._const_zero4
        x = np.asarray(x, dtype=float)
        if self._dd_components is not None:
            return np.asarray(self._dd_components(x), dtype=float)
        m = self.dimension
        h = self.fd_step2
        ddg = np.empty((m, m, m, m))
        for l in range(m):
            e = np.zeros(m)
            e[l] = h
            ddg[:, :, :, l] = (
                self.first_derivatives(x + e) - self.first_derivatives(x - e)
            ) / (2 * h)
        return ddg

    # -- Levi-Civita data ------------------------------------------------------

    def christoffel_array(self, x):
        """Gamma[k, i, j] from the Koszul formula in chart coordinates."""
        if self.constant:
            return self._const_zero3
        g = self.components(x)
        dg = self.first_derivatives(x)
        ginv = np.linalg.inv(g)
        # dg[i, j, k] = d_k g_ij, so with lower[k, i, j] = (d_i g_jk + d_j g_ik
        # - d_k g_ij) / 2 the pieces are dg[j,k,i], dg[i,k,j], dg[i,j,k].
        lower = 0.5 * (
            np.einsum("jki->kij", dg) + np.einsum("ikj->kij", dg) - np.einsum("ijk->kij", dg)
        )
        return np.einsum("lk,kij->lij", ginv, lower)

    def christoffel_derivatives(self, x):
        """dGamma[k, i, j, q] = d_q Gamma^k_ij (analytic route or FD of Gamma)."""
        x = np.asarray(x, dtype=float)
        m = self.dimension
        if self._dd_components is not None and self._d_components is not None:
            g = self.components(x)
            dg = self.first_derivatives(x)
            ddg = self.second_derivatives(x)
            ginv = np.linalg.inv(g)
            dginv = -np.einsum("la,abq,bk->lkq", ginv, dg, ginv)
            lower = 0.5 * (
                np.einsum("jki->kij", dg)
                + np.einsum("ikj->kij", dg)
                - np.einsum("ijk->kij", dg)
            )
            # d_q lower[k, i, j]
            dlower = 0.5 * (
                np.einsum("jkiq->kijq", ddg)
                + np.einsum("ikjq->kijq", ddg)
                - np.einsum("ijkq->kijq", ddg)
            )
            return np.einsum("lkq,kij->lijq", dginv, lower) + np.einsum(
                "lk,kijq->lijq", ginv, dlower
            )
        h = self.fd_step2
        if self._components_batch is not None or self._d_components_batch is not None:
            stencil = np.empty((2 * m, m))
            for q in range(m):
                e = np.zeros(m)
                e[q] = h
                stencil[2 * q] = x + e
                stencil[2 * q + 1] = x - e
            gam = self.christoffel_batch(stencil)
            dG = np.empty((m, m, m, m))
            for q in range(m):
                dG[:, :, :, q] = (gam[2 * q] - gam[2 * q + 1]) / (2 * h)
            return dG
        dG = np.empty((m, m, m, m))
        for q in range(m):
            e = np.zeros(m)
            e[q] = h
            dG[:, :, :, q] = (
                self.christoffel_array(x + e) - self.christoffel_array(x - e)
            ) / (2 * h)
        return dG

    def components_batch(self, X):
        X = np.asarray(X, dtype=float)
        if self.constant:
            return np.broadcast_to(self._const_g, (X.shape[0],) + self._const_g.shape)
        if self._components_batch is not None:
            return np.asarray(self._components_batch(X), dtype=float)
        return np.stack([self.components(x) for x in X])

    def first_derivatives_batch(self, X):
        X = np.asarray(X, dtype=float)
        if self.constant:
            return np.broadcast_to(
                self._const_zero3, (X.shape[0],) + self._const_zero3.shape
            )
        if self._d_components_batch is not None:
            return np.asarray(self._d_components_batch(X), dtype=float)
        if self._d_components is not None:
            return np.stack([self.first_derivatives(x) for x in X])
        m = self.dimension
        h = self.fd_step
        dg = np.empty((X.shape[0], m, m, m))
        for k in range(m):
            e = np.zeros(m)
            e[k] = h
            dg[:, :, :, k] = (
                self.components_batch(X + e) - self.components_batch(X - e)
            ) / (2 * h)
        return dg

    def christoffel_batch(self, X):
        """Gamma arrays for a batch of points (rows of X)."""
        X = np.asarray(X, dtype=float)
        if self.constant:
            return np.broadcast_to(self._const_zero3, (X.shape[0],) + self._const_zero3.shape)
        if self._components_batch is None and self._d_components_batch is None:
            return np.stack([self.christoffel_array(x) for x in X])
        g = self.components_batch(X)
        dg = self.first_derivatives_batch(X)
        ginv = np.linalg.inv(g)
        lower = 0.5 * (
            np.einsum("njki->nkij", dg)
            + np.einsum("nikj->nkij", dg)
            - np.einsum("nijk->nkij", dg)
        )
        return np.einsum("nlk,nkij->nlij", ginv, lower)

    def curvature_array(self, x):
        """R[a, b, c, d] = a-component of R(e_b, e_c) e_d."""
        if self.constant:
            return self._const_zero4
        gamma = self.christoffel_array(x)
        dG = self.christoffel_derivatives(x)
        # R^a_{d b c} = d_b Gamma^a_cd - d_c Gamma^a_bd
        #             + Gamma^a_bm Gamma^m_cd - Gamma^a_cm Gamma^m_bd
        R = (
            np.einsum("acdb->abcd", dG)
            - np.einsum("abdc->abcd", dG)
            + np.einsum("abm,mcd->abcd", gamma, gamma)
            - np.einsum("acm,mbd->abcd", gamma, gamma)
        )
        return R

    def metric_and_christoffel(self, x):
        return self.components(x), self.christoffel_array(x)

    def inner(self, x, u, v):
        return float(np.asarray(u) @ self.components(x) @ np.asarray(v))

    def signature_at(self, x):
        w = np.linalg.eigvalsh(self.components(x))
        neg = int(np.sum(w < 0.0))
        pos = int(np.sum(w > 0.0))
        return pos, neg, w

    def check_point(self, x, margin=0.0):
        if not self.domain.contains(x, margin=margin):
            raise OutOfDomain(f"point {np.asarray(x)} outside chart '{self.domain.label}'")


# -- module operations ---------------------------------------------------------


def eval_metric(metric, x, tol=DEGENERACY_TOL):
    """Evaluate g(x), checking domain membership, symmetry, and signature."""
    metric.check_point(x)
    g = metric.components(x)
    if np.max(np.abs(g - g.T)) > SYMMETRY_TOL:
        raise ValueError("metric components are not symmetric at this point")
    w = np.linalg.eigvalsh(g)
    scale = float(np.max(np.abs(w)))
    if np.min(np.abs(w)) <= tol * max(scale, 1.0):
        raise DegenerateAtPoint(f"metric nearly degenerate at {np.asarray(x)}")
    neg = int(np.sum(w < 0.0))
    if neg != metric.index:
        raise DegenerateAtPoint(
            f"signature mismatch at {np.asarray(x)}: {neg} negative directions, "
            f"expected {metric.index}"
        )
    return g


def christoffel(metric, x):
    """Christoffel tensor at x (symmetric in its two lower slots)."""
    metric.check_point(x, margin=0.0 if metric.analytic_first else metric.fd_step)
    gamma = metric.christoffel_array(x)
    return ChristoffelValue(x=np.asarray(x, dtype=float), gamma=gamma)


def curvature(metric, x):
    """Curvature tensor, Ricci tensor, and scalar curvature at x."""
    margin = 0.0
    if not metric.analytic_second:
        margin += metric.fd_step2
    if not metric.analytic_first:
        margin += metric.fd_step
    metric.check_point(x, margin=margin)
    R = metric.curvature_array(x)
    ricci = np.einsum("aabc->bc", R)
    ginv = np.linalg.inv(metric.components(x))
    scalar = float(np.einsum("ij,ij->", ginv, ricci))
    return CurvatureValue(
        x=np.asarray(x, dtype=float), riemann=R, ricci=ricci, scalar=scalar
    )


def product_metric(metric):
    """The product metric diag(g(x1), -g(x2)) on the doubled chart.

    Its index is m regardless of the index of g.
    """
    m = metric.dimension
    dom = metric.domain
    doubled = ChartDomain(
        dimension=2 * m,
        lower=np.concatenate([dom.lower, dom.lower]),
        upper=np.concatenate([dom.upper, dom.upper]),
        periodic=dom.periodic + dom.periodic,
        label=f"{dom.label}^2",
    )

    def comps(x):
        G = np.zeros((2 * m, 2 * m))
        G[:m, :m] = metric.components(x[:m])
        G[m:, m:] = -metric.components(x[m:])
        return G

    d_comps = None
    if metric.analytic_first:

        def d_comps(x):
            dG = np.zeros((2 * m, 2 * m, 2 * m))
            dG[:m, :m, :m] = metric.first_derivatives(x[:m])
            dG[m:, m:, m:] = -metric.first_derivatives(x[m:])
            return dG

    return MetricField(
        doubled,
        index=m,
        components=comps,
        d_components=d_comps,
        fd_step=metric.fd_step,
        fd_step2=metric.fd_step2,
        name=f"{metric.name} (+) -{metric.name}",
    )


@dataclass
class DistributionField:
    """Rank-nu distribution given by a projector field onto its fibers."""

    domain: ChartDomain
    rank: int
    projector: object
    tol: float = 1e-10

    def projector_at(self, x, validate=True):
        P = np.asarray(self.projector(np.asarray(x, dtype=float)), dtype=float)
        if validate:
            if np.max(np.abs(P @ P - P)) > self.tol:
                raise ProjectorNotIdempotent(f"projector not idempotent at {x}")
            if abs(np.trace(P) - self.rank) > 1e-8:
                raise ProjectorNotIdempotent(
                    f"projector trace {np.trace(P):.3g} != rank {self.rank}"
                )
        return P


def _gr_orthogonal_projector(P_raw, G_R):
    """g_R-orthogonal projector with the same range as the given projector."""
    rank = int(round(np.trace(P_raw)))
    if rank == 0:
        return np.zeros_like(P_raw)
    # g_R-orthonormal basis of range(P) via eigendecomposition of the range.
    u, s, _ = np.linalg.svd(P_raw)
    B = u[:, :rank]  # Euclidean basis of the range
    # Gram-Schmidt in the g_R inner product.
    Q = []
    for j in range(rank):
        v = B[:, j].copy()
        for q in Q:
            v -= (q @ G_R @ v) * q
        v /= np.sqrt(v @ G_R @ v)
        Q.append(v)
    Q = np.stack(Q, axis=1)
    return Q @ Q.T @ G_R


def metric_from_distribution(dist, g_R):
    """Metric of index rank(D): g_R on the g_R-orthocomplement, -g_R on D."""

    def comps(x):
        P_raw = dist.projector_at(x)
        G_R = g_R(x)
        P = _gr_orthogonal_projector(P_raw, G_R)
        Q = np.eye(dist.domain.dimension) - P
        G = Q.T @ G_R @ Q - P.T @ G_R @ P
        return 0.5 * (G + G.T)

    return MetricField(
        dist.domain,
        index=dist.rank,
        components=comps,
        name=f"from-distribution(rank {dist.rank})",
    )


def negative_eigenprojector(metric, g_R, x, tol=DEGENERACY_TOL):
    """g_R-orthogonal projector onto the negative eigenspaces of A = g_R^-1 g.

    Spectral decomposition stands in for the contour-integral construction;
    the two coincide for symmetric operators.
    """
    metric.check_point(x)
    import scipy.linalg

    g = metric.components(x)
    G_R = g_R(x)
    w, V = scipy.linalg.eigh(g, G_R)  # V^T G_R V = I
    scale = float(np.max(np.abs(w)))
    if np.min(np.abs(w)) <= tol * max(scale, 1.0):
        raise DegenerateAtPoint(f"metric nearly degenerate at {np.asarray(x)}")
    Vneg = V[:, w < 0.0]
    return Vneg @ Vneg.T @ G_R


def causal_character(metric, x, v, g_R=None, tol=LIGHTLIKE_TOL):
    """Classify v at x as 'timelike', 'lightlike', or 'spacelike'.

    The lightlike verdict uses the band |g(v,v)| <= tol * ||v||^2_gR.
    """
    metric.check_point(x)
    v = np.asarray(v, dtype=float)
    if g_R is None:
        g_R = euclidean_gr(metric.dimension)
    vnorm2 = float(v @ g_R(x) @ v)
    if vnorm2 <= 0.0 or not np.isfinite(vnorm2):
        raise ZeroVector("causal character of the zero vector is undefined")
    q = metric.inner(x, v, v)
    if abs(q) <= tol * vnorm2:
        return "lightlike"
    return "timelike" if q < 0.0 else "spacelike"
