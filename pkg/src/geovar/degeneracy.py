"""Degeneracy classification, iterate energies, and the periodic census.

Periodic geodesics (the diagonal endpoints condition) are classified through
the monodromy of the full loop: a fixed space of dimension one (the tangent
direction) is S^1-nondegeneracy. Degenerate iterates are further screened for
strong degeneracy: a nonzero Jacobi field whose k-shift sum vanishes
identically. Since the shift sum of a Jacobi field is again a Jacobi field,
it vanishes iff its initial data does, so witnesses live exactly in
ker(sum_i Psi^i) with Psi the prime-period monodromy; the tangent-multiple
correction is automatically contained in that kernel.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .chartmetric import euclidean_gr
from .errors import NewtonDiverged, NotPeriodic, DomainExit
from .gec import Diagonal, check_critical, pjacobi_shooting, solve_gp_geodesic
from .geodesic import detect_periodicity, integrate_geodesic
from .indexform import index_form
from .jacobi import jacobi_basis, monodromy
from .numutil import kernel_count, wrap_delta


@dataclass
class DegeneracyReport:
    """Classification of a critical path with its evidence."""

    kind: str  # nondegenerate | degenerate | s1_nondegenerate |
    #            s1_degenerate | strongly_degenerate
    kernel_dim: int
    kernel_basis: list
    fixed_dim: int | None = None  # monodromy fixed-space dim (diagonal only)
    iterate_order: int = 1
    strong_witness: object = None
    index_form_dims: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    @property
    def s1_nondegenerate(self):
        return self.kind == "s1_nondegenerate"

    def to_json(self):
        return {
            "kind": self.kind,
            "kernel_dim": self.kernel_dim,
            "fixed_dim": self.fixed_dim,
            "iterate_order": self.iterate_order,
            "strongly_degenerate": self.strong_witness is not None,
            "index_form_dims": self.index_form_dims,
            "thresholds": self.thresholds,
            "residuals": self.residuals,
        }


@dataclass
class StrongWitness:
    k: int
    jacobi: object
    residual: float


def strongly_degenerate_check(metric, path, k, tol=1e-6, n_check=64):
    """Search for a Jacobi field with vanishing k-shift sum along an iterate.

    Returns a StrongWitness or None. The candidate space is ker(N) with
    N = sum of powers of the prime-period monodromy; each kernel vector is
    re-propagated and its shift-sum residual verified on a sample grid.
    """
    if k < 2:
        return None
    m = metric.dimension
    T = path.T
    omega = T / k
    mono = monodromy(metric, path, period=omega)
    Psi = mono.Phi
    N = np.zeros_like(Psi)
    P = np.eye(2 * m)
    for _ in range(k):
        N += P
        P = Psi @ P
    u, s, vt = np.linalg.svd(N)
    dim, _ = kernel_count(s, scale=max(float(np.max(s)), 1.0), zone=1e-5)
    if dim == 0:
        return None
    basis = jacobi_basis(metric, path)
    best = None
    check_ts = np.linspace(0.0, omega, n_check)
    for vec in vt[2 * m - dim:, :]:
        sol = basis.combine(vec)
        size = sol.max_norm()
        if size <= 1e-12:
            continue
        worst = 0.0
        for t in check_ts:
            total = np.zeros(m)
            for i in range(k):
                J, _ = sol.at(t + i * omega)
                total += J
            worst = max(worst, float(np.linalg.norm(total)))
        if worst <= tol * size and (best is None or worst < best.residual):
            best = StrongWitness(k=k, jacobi=sol, residual=worst / size)
    return best


def classify(metric, path, gec, n_basis=64, cross_check=True, tol=1e-6):
    """Degeneracy report for a critical path under the given GEC.

    Non-diagonal conditions: kernel dimension from the shooting oracle,
    cross-checked against the discretized index form. Diagonal condition:
    S^1 classification from the monodromy fixed space of the loop, then a
    strong-degeneracy search on iterates.
    """
    params = check_critical(metric, gec, path, tol=tol)
    if gec.variant == "diagonal":
        verdict = detect_periodicity(path)
        if not verdict.periodic:
            raise NotPeriodic("diagonal classification requires a closed orbit")
        k = max(1, int(round(path.T / verdict.omega)))
        mono = monodromy(metric, path, period=path.T)
        basis = jacobi_basis(metric, path)
        kernel = [basis.combine(mono.fixed_basis[:, j])
                  for j in range(mono.fixed_dim)]
        report = DegeneracyReport(
            kind="s1_nondegenerate" if mono.fixed_dim == 1 else "s1_degenerate",
            kernel_dim=mono.fixed_dim,
            kernel_basis=kernel,
            fixed_dim=mono.fixed_dim,
            iterate_order=k,
            thresholds={"monodromy": mono.threshold},
            residuals={"periodicity": verdict.residual},
        )
        if mono.fixed_dim > 1 and k >= 2:
            witness = strongly_degenerate_check(metric, path, k, tol=tol)
            if witness is not None:
                report.kind = "strongly_degenerate"
                report.strong_witness = witness
                report.residuals["shift_sum"] = witness.residual
        if cross_check:
            op = index_form(metric, path, gec, n_basis=n_basis)
            report.index_form_dims[n_basis] = op.kernel_dim
        return report

    shoot = pjacobi_shooting(metric, gec, path, params=params)
    report = DegeneracyReport(
        kind="nondegenerate" if shoot.dim == 0 else "degenerate",
        kernel_dim=shoot.dim,
        kernel_basis=shoot.basis,
        thresholds={"shooting": shoot.threshold},
    )
    if cross_check:
        op = index_form(metric, path, gec, n_basis=n_basis)
        report.index_form_dims[n_basis] = op.kernel_dim
    return report


@dataclass
class EnergyPair:
    """Total and minimal auxiliary-Riemannian energies of a closed curve."""

    total: float  # energy of the loop reparameterized to [0, 1]
    minimal: float
    iterate_order: int

    def to_json(self):
        return {"total": self.total, "minimal": self.minimal,
                "iterate_order": self.iterate_order}


def energies(path, g_R=None, periodicity=None):
    """EnergyPair of a path: total = E_R of the [0,1] reparameterization,
    minimal = total / k^2 with k the detected iterate order."""
    if g_R is None:
        g_R = path.g_R or euclidean_gr(path.dimension)
    from .geodesic import riem_length_energy

    _, e_r, _ = riem_length_energy(path, g_R)
    total = path.T * e_r  # affine reparameterization to [0, 1]
    if periodicity is None:
        periodicity = detect_periodicity(path)
    k = periodicity.k if periodicity.periodic else 1
    k = max(k, 1)
    return EnergyPair(total=float(total), minimal=float(total / k**2),
                      iterate_order=k)


def iterate(path, n, tol=1e-10, method="adaptive", n_steps=None):
    """The n-fold iterate of a periodic path, re-integrated on [0, nT]."""
    verdict = detect_periodicity(path)
    if not verdict.periodic:
        raise NotPeriodic("iterate requires a periodic path")
    if n < 1:
        raise ValueError("n must be a positive integer")
    if n == 1:
        return path
    x0 = path.position(0.0)
    v0 = path.velocity(0.0)
    if n_steps is not None:
        n_steps = n * n_steps
    return integrate_geodesic(
        path.metric, x0, v0, n * path.T, tol=tol, method=method, n_steps=n_steps,
        g_R=path.g_R,
    )


@dataclass
class CensusOrbit:
    path: object
    x0: np.ndarray
    v0: np.ndarray
    omega: float
    iterate_order: int
    energy: EnergyPair
    report: DegeneracyReport

    def to_json(self):
        return {
            "x0": [float(v) for v in self.x0],
            "v0": [float(v) for v in self.v0],
            "omega": self.omega,
            "iterate_order": self.iterate_order,
            "energy": self.energy.to_json(),
            "classification": self.report.to_json(),
        }


@dataclass
class CensusResult:
    K_lower: np.ndarray
    K_upper: np.ndarray
    a: float
    b: float
    orbits: list
    member: bool
    n_seeds: int
    seeds_converged: int
    wall_clock: float

    def to_json(self):
        return {
            "K": [[float(v) for v in self.K_lower], [float(v) for v in self.K_upper]],
            "a": self.a,
            "b": self.b,
            "orbits": [o.to_json() for o in self.orbits],
            "member": self.member,
            "n_seeds": self.n_seeds,
            "seeds_converged": self.seeds_converged,
            "wall_clock": self.wall_clock,
            "note": (
                "membership is relative to the declared seed density; a census "
                "can only falsify membership or support it up to coverage"
            ),
        }


def _image_in_box(path, K_lower, K_upper, margin=1e-6):
    pos = path.node_positions().copy()
    dom = path.metric.domain
    for i in range(path.dimension):
        if dom.periodic[i]:
            L = dom.upper[i] - dom.lower[i]
            pos[:, i] = dom.lower[i] + np.mod(pos[:, i] - dom.lower[i], L)
    return bool(
        np.all(pos >= K_lower - margin) and np.all(pos <= K_upper + margin)
    )


def _orbit_image(path, n=128):
    ts = np.linspace(0.0, path.T, n)
    return path.position(ts).T


def _distance_to_path(points, path, n_coarse=256):
    """Max over the points of the (wrapped) distance to the path's image.

    Coarse nearest-sample search plus a few Newton steps of the projection
    equation on the dense output, so identical curves with different
    samplings compare at roundoff rather than at sampling resolution.
    """
    m = path.dimension
    periods = path.metric.domain.periods
    ts = np.linspace(0.0, path.T, n_coarse)
    samples = path.position(ts).T  # (n_coarse, m)
    worst = 0.0
    for p in points:
        diff = wrap_delta(samples - p[None, :], periods)
        d2 = np.sum(diff**2, axis=1)
        i = int(np.argmin(d2))
        t = ts[i]
        for _ in range(4):
            s = path.state(t)
            x, v = s[:m], s[m:]
            dx = wrap_delta(x - p, periods)
            denom = float(v @ v)
            if denom <= 0.0:
                break
            t = float(np.clip(t - (dx @ v) / denom, 0.0, path.T))
        x = path.position(t)
        d = float(np.linalg.norm(wrap_delta(x - p, periods)))
        worst = max(worst, min(d, float(np.sqrt(d2[i]))))
    return worst


def _same_image(path_a, img_a, path_b, img_b, radius):
    return (
        _distance_to_path(img_a, path_b) < radius
        and _distance_to_path(img_b, path_a) < radius
    )


def _directions(m, n_dir, rng):
    if m == 2:
        angles = np.linspace(0.0, 2 * np.pi, n_dir, endpoint=False)
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    dirs = rng.standard_normal((n_dir, m))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def periodic_census(
    metric,
    K_lower,
    K_upper,
    a,
    b,
    n_pos=3,
    n_dir=4,
    n_speed=3,
    threads=1,
    tol=1e-8,
    seed=0,
    n_basis=64,
    dedup_radius=1e-4,
    solver_steps=200,
):
    """Multi-start census of periodic geodesics with image in K.

    Orbits are filtered by total energy <= b and minimal energy <= a,
    deduplicated geometrically per iterate order, and classified; membership
    in the family M_K(a, b) holds when every listed orbit is
    S^1-nondegenerate. Deterministic for fixed seeds across thread counts.
    """
    t_start = time.perf_counter()
    m = metric.dimension
    K_lower = np.asarray(K_lower, dtype=float)
    K_upper = np.asarray(K_upper, dtype=float)
    rng = np.random.default_rng(seed)
    gec = Diagonal(metric.domain)

    axes = [
        np.linspace(K_lower[i], K_upper[i], n_pos + 2)[1:-1] for i in range(m)
    ]
    grids = np.meshgrid(*axes, indexing="ij")
    positions = np.stack([g.ravel() for g in grids], axis=1)
    dirs = _directions(m, n_dir, rng)
    s_max = np.sqrt(2.0 * b)
    s_min = max(1e-7, 0.25 * np.sqrt(2.0 * min(a, b)))
    speeds = np.geomspace(s_min, s_max, n_speed) if n_speed > 1 else np.array([s_max])

    seeds = [
        (x, s * d)
        for x in positions
        for d in dirs
        for s in speeds
    ]

    def try_seed(sd):
        x0, v0 = sd
        try:
            sol = solve_gp_geodesic(
                metric, gec, (x0, v0), tol=tol, n_steps=solver_steps, max_iter=18
            )
        except (NewtonDiverged, DomainExit, Exception):
            return None
        path = sol.path
        if float(np.linalg.norm(sol.v0)) < 10 * tol:
            return None  # constant curve
        return sol

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            raw = list(ex.map(try_seed, seeds))
    else:
        raw = [try_seed(sd) for sd in seeds]

    candidates = []
    for sol in raw:
        if sol is None:
            continue
        path = sol.path
        verdict = detect_periodicity(path, tol=max(100 * tol, 1e-7))
        if not verdict.periodic:
            continue
        if not _image_in_box(path, K_lower, K_upper):
            continue
        pair = energies(path, periodicity=verdict)
        if pair.total > b + 1e-9 or pair.minimal > a + 1e-9:
            continue
        candidates.append((sol, verdict, pair))

    # canonical order (energy, iterate order, initial data) before dedup so the
    # orbit list does not depend on seed scheduling
    def key(item):
        sol, verdict, pair = item
        return (
            round(pair.total, 9),
            verdict.k,
            tuple(np.round(sol.path.position(0.0), 6)),
            tuple(np.round(sol.v0, 6)),
        )

    candidates.sort(key=key)
    orbits = []
    for sol, verdict, pair in candidates:
        img = _orbit_image(sol.path)
        dup = False
        for o in orbits:
            if o.iterate_order == verdict.k and _same_image(
                sol.path, img, o.path, o._image, dedup_radius
            ):
                dup = True
                break
        if dup:
            continue
        report = classify(metric, sol.path, gec, n_basis=n_basis,
                          cross_check=False)
        orbit = CensusOrbit(
            path=sol.path,
            x0=sol.path.position(0.0),
            v0=sol.v0,
            omega=verdict.omega,
            iterate_order=verdict.k,
            energy=pair,
            report=report,
        )
        orbit._image = img
        orbits.append(orbit)

    member = all(o.report.s1_nondegenerate for o in orbits)
    return CensusResult(
        K_lower=K_lower,
        K_upper=K_upper,
        a=float(a),
        b=float(b),
        orbits=orbits,
        member=member,
        n_seeds=len(seeds),
        seeds_converged=sum(1 for r in raw if r is not None),
        wall_clock=time.perf_counter() - t_start,
    )
