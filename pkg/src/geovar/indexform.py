"""First variation and discretized index form of the energy on a GEC.

The variation space is discretized by piecewise-linear vector fields on a
uniform grid: every interior node carries m free coordinates, and the two
endpoint values are constrained to the linearized endpoint space T P through
boundary degrees of freedom, one per T P basis vector. The bilinear form

    I(v, w) = int g(Dv, Dw) - g(R(gdot, v) w, gdot) dt  -  S^P_gdot(v, w)

is assembled by Gauss quadrature per element; the endpoint term only touches
boundary-boundary entries. Eigenvalues are taken against the H^1-type Gram
matrix  <<v, w>> = g_R(v(0), w(0)) + int g_R(v', w') dt  (Euclidean g_R).

With linear elements the discrete eigenvalue of a true kernel field sits at
O(h^2), so kernel detection keys on the spectral gap inside an h^2-scaled
candidate zone rather than on a fixed relative cut.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConstraintViolated, DegenerateGec, RefinementDiverged
from .gec import (
    boundary_geometry,
    check_critical,
    gbar_matrix,
    pjacobi_boundary_residual,
)
from .jacobi import jacobi_basis
from .numutil import GAUSS3_NODES, GAUSS3_WEIGHTS, kernel_count


@dataclass
class PLField:
    """Piecewise-linear vector field along a path, given by nodal values."""

    ts: np.ndarray
    values: np.ndarray  # (N+1, m)

    def value(self, t):
        t = float(t)
        i = int(np.clip(np.searchsorted(self.ts, t, side="right") - 1, 0,
                        len(self.ts) - 2))
        h = self.ts[i + 1] - self.ts[i]
        s = (t - self.ts[i]) / h
        return (1 - s) * self.values[i] + s * self.values[i + 1]

    def derivative(self, t):
        t = float(t)
        i = int(np.clip(np.searchsorted(self.ts, t, side="right") - 1, 0,
                        len(self.ts) - 2))
        h = self.ts[i + 1] - self.ts[i]
        return (self.values[i + 1] - self.values[i]) / h

    def max_norm(self):
        return float(np.max(np.linalg.norm(self.values, axis=1)))


def _quad_point_data(metric, path, tq, need_curvature=True):
    s = path.state(tq)
    x, v = s[: metric.dimension], s[metric.dimension:]
    g = metric.components(x)
    gamma = metric.christoffel_array(x)
    Q = None
    if need_curvature:
        R = metric.curvature_array(x)
        # Q[a, b] = g(R(vdot, e_a) e_b, vdot), symmetrized so the assembled
        # form is exactly symmetric even with finite-difference curvature
        Q = np.einsum("pqab,q,pc,c->ab", R, v, g, v)
        Q = 0.5 * (Q + Q.T)
    return x, v, g, gamma, Q


def first_variation(metric, path, gec, field, tol=1e-6):
    """dE(path)[field] = int g(gdot, D field) dt for an admissible field.

    Raises ConstraintViolated unless the endpoint pair of the field lies in
    T P within tol (relative to the field size).
    """
    m = metric.dimension
    pair0 = np.concatenate([path.position(0.0), path.position(path.T)])
    params = gec.locate(pair0)
    B = gec.tangent_basis(params)
    vpair = np.concatenate([field.value(0.0), field.value(path.T)])
    if B.shape[1] > 0:
        coeffs, *_ = np.linalg.lstsq(B, vpair, rcond=None)
        miss = float(np.linalg.norm(vpair - B @ coeffs))
    else:
        miss = float(np.linalg.norm(vpair))
    scale = 1.0 + field.max_norm()
    if miss > tol * scale:
        raise ConstraintViolated(
            f"endpoint values miss T P by {miss:.2e} (tol {tol * scale:.1e})"
        )
    total = 0.0
    ts = field.ts
    for i in range(len(ts) - 1):
        h = ts[i + 1] - ts[i]
        for node, w in zip(GAUSS3_NODES, GAUSS3_WEIGHTS):
            t = ts[i] + h * node
            x, v, g, gamma, _ = _quad_point_data(metric, path, t, need_curvature=False)
            vv = field.value(t)
            dv = field.derivative(t) + np.einsum("kij,i,j->k", gamma, v, vv)
            total += h * w * float(v @ g @ dv)
    return total


@dataclass
class IndexFormOperator:
    """Assembled second variation on the PL variation space."""

    path: object
    gec: object
    n_basis: int
    nodes: np.ndarray
    H: np.ndarray
    M: np.ndarray
    boundary_basis: np.ndarray  # (2m, d)
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kernel_dim: int
    kernel_threshold: float
    morse_index: int

    @property
    def spectrum_head(self):
        return self.eigenvalues[:10]

    def _dof_to_nodal(self, vec):
        m = self.path.dimension
        n = self.n_basis
        d = self.boundary_basis.shape[1]
        vals = np.zeros((n + 2, m))
        vals[1:-1] = vec[: n * m].reshape(n, m)
        if d:
            c = vec[n * m:]
            vals[0] = self.boundary_basis[:m] @ c
            vals[-1] = self.boundary_basis[m:] @ c
        return vals

    def kernel_fields(self):
        idx = np.argsort(np.abs(self.eigenvalues))[: self.kernel_dim]
        out = []
        for i in idx:
            vals = self._dof_to_nodal(self.eigenvectors[:, i])
            out.append(PLField(ts=self.nodes, values=vals))
        return out

    def report(self):
        return {
            "n_basis": self.n_basis,
            "kernel_dim": self.kernel_dim,
            "kernel_threshold": self.kernel_threshold,
            "morse_index": self.morse_index,
            "spectrum_head": [float(v) for v in np.sort(self.eigenvalues)[:10]],
        }


def index_form(metric, path, gec, n_basis=64, critical_tol=1e-6,
               rel_floor=1e-6, gap_factor=100.0, h2_zone_factor=60.0):
    """Assemble the index form of the energy at a critical path.

    Raises NotCritical if the path is not a (g, P)-geodesic within tolerance,
    and DegenerateGec if the product metric degenerates on T P at the
    endpoint pair (the diagonal GEC is special-cased: its endpoint term
    vanishes identically and periodicity is handled by the boundary dofs).
    """
    m = metric.dimension
    params = check_critical(metric, gec, path, tol=critical_tol)
    diagonal = gec.variant == "diagonal"
    B = gec.tangent_basis(params)
    d = B.shape[1]
    S_end = np.zeros((d, d))
    if not diagonal and d > 0:
        geom = boundary_geometry(gec, metric, params)
        if not geom.nondegenerate:
            raise DegenerateGec(
                "product metric degenerates on T P at the endpoint pair "
                f"(condition number {geom.gram_condition:.3g})"
            )
        eta = np.concatenate([path.velocity(0.0), path.velocity(path.T)])
        S_end = geom.sff(eta)

    n = int(n_basis)
    T = path.T
    nodes = np.linspace(0.0, T, n + 2)
    ndof = n * m + d

    def nodal_matrix(j):
        """Columns of the (m x ndof) map dof -> field value at node j."""
        N = np.zeros((m, ndof))
        if 1 <= j <= n:
            N[:, (j - 1) * m: j * m] = np.eye(m)
        elif j == 0 and d:
            N[:, n * m:] = B[:m]
        elif j == n + 1 and d:
            N[:, n * m:] = B[m:]
        return N

    H = np.zeros((ndof, ndof))
    M = np.zeros((ndof, ndof))
    for e in range(n + 1):
        h = nodes[e + 1] - nodes[e]
        N0, N1 = nodal_matrix(e), nodal_matrix(e + 1)
        Ddofs = (N1 - N0) / h  # constant coordinate derivative per element
        M += h * Ddofs.T @ Ddofs
        for node, w in zip(GAUSS3_NODES, GAUSS3_WEIGHTS):
            t = nodes[e] + h * node
            x, v, g, gamma, Q = _quad_point_data(metric, path, t)
            Ncols = (1 - node) * N0 + node * N1
            Dv = Ddofs + np.einsum("kij,i,jc->kc", gamma, v, Ncols)
            H += h * w * (Dv.T @ g @ Dv - Ncols.T @ Q @ Ncols)
    if d:
        H[n * m:, n * m:] -= S_end
        M[n * m:, n * m:] += B[:m].T @ B[:m]
    H = 0.5 * (H + H.T)
    M = 0.5 * (M + M.T)

    evals, evecs = scipy.linalg.eigh(H, M)
    scale = float(np.max(np.abs(evals))) if evals.size else 0.0
    h_frac = 1.0 / (n + 1)
    zone = min(0.25, h2_zone_factor * h_frac**2)
    kdim, thr = kernel_count(
        evals, scale=scale, rel_floor=rel_floor, gap_factor=gap_factor, zone=zone
    )
    morse = int(np.sum(evals < -max(thr, rel_floor * scale)))
    return IndexFormOperator(
        path=path, gec=gec, n_basis=n, nodes=nodes, H=H, M=M,
        boundary_basis=B, eigenvalues=evals, eigenvectors=evecs,
        kernel_dim=int(kdim), kernel_threshold=float(thr), morse_index=morse,
    )


def kernel_refine(op, metric=None, tol=1e-5, fit_fraction=0.25):
    """Fit each discrete kernel vector to Jacobi initial data and re-propagate.

    The refined solutions are verified against the linearized endpoints
    condition; RefinementDiverged flags vectors that fail to reproduce a
    P-Jacobi field.
    """
    metric = metric or op.path.metric
    path = op.path
    m = path.dimension
    fields = op.kernel_fields()
    if not fields:
        return []
    basis = jacobi_basis(metric, path)
    n_fit = max(4, int(fit_fraction * len(op.nodes)))
    fit_nodes = op.nodes[:n_fit]
    rows = []
    for t in fit_nodes:
        J, _ = basis.at(t)  # (m, 2m)
        rows.append(J)
    A = np.concatenate(rows, axis=0)  # (n_fit * m, 2m)
    out = []
    for f in fields:
        b = np.concatenate([f.value(t) for t in fit_nodes])
        data, *_ = np.linalg.lstsq(A, b, rcond=None)
        sol = basis.combine(data)
        res = pjacobi_boundary_residual(metric, op.gec, sol)
        scale = 1.0 + sol.max_norm()
        if res.norm > tol * scale:
            raise RefinementDiverged(
                f"refined kernel vector has boundary residual {res.norm:.2e}"
            )
        out.append(sol)
    return out
