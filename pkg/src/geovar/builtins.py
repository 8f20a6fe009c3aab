"""Builtin metric library plus expression-string metrics for the config format.

All builtins carry hand-coded analytic first and second component derivatives;
pass ``derivative_mode="fd"`` to drop them and exercise the finite-difference
path instead.
"""

from __future__ import annotations

import numpy as np

from .chartmetric import ChartDomain, MetricField

INF = np.inf


def _maybe(mode, d, dd):
    if mode == "fd":
        return None, None
    return d, dd


def euclidean(m=2, derivative_mode="analytic"):
    """Flat metric delta_ij on R^m."""
    dom = ChartDomain(m, -INF * np.ones(m), INF * np.ones(m), label=f"R^{m}")
    eye = np.eye(m)
    zero3 = np.zeros((m, m, m))
    zero4 = np.zeros((m, m, m, m))
    d, dd = _maybe(derivative_mode, lambda x: zero3, lambda x: zero4)
    return MetricField(dom, 0, lambda x: eye, d, dd, name=f"euclidean({m})",
                       constant=derivative_mode != "fd")


def minkowski(derivative_mode="analytic"):
    """diag(-1, 1, 1, 1) on R^4 in coordinates (t, x, y, z)."""
    dom = ChartDomain(4, -INF * np.ones(4), INF * np.ones(4), label="minkowski")
    eta = np.diag([-1.0, 1.0, 1.0, 1.0])
    zero3 = np.zeros((4, 4, 4))
    zero4 = np.zeros((4, 4, 4, 4))
    d, dd = _maybe(derivative_mode, lambda x: zero3, lambda x: zero4)
    return MetricField(dom, 1, lambda x: eta, d, dd, name="minkowski",
                       constant=derivative_mode != "fd")


def sphere(radius=1.0, eps=1e-3, derivative_mode="analytic"):
    """Round sphere chart (theta, phi), g = diag(r^2, r^2 sin^2 theta).

    theta in (eps, pi - eps); phi is a periodic angle.
    """
    r2 = radius * radius
    dom = ChartDomain(
        2,
        np.array([eps, 0.0]),
        np.array([np.pi - eps, 2 * np.pi]),
        periodic=(False, True),
        label=f"sphere(r={radius})",
    )

    def comps(x):
        return np.diag([r2, r2 * np.sin(x[0]) ** 2])

    def d_comps(x):
        dg = np.zeros((2, 2, 2))
        dg[1, 1, 0] = r2 * np.sin(2 * x[0])
        return dg

    def dd_comps(x):
        ddg = np.zeros((2, 2, 2, 2))
        ddg[1, 1, 0, 0] = 2 * r2 * np.cos(2 * x[0])
        return ddg

    def comps_b(X):
        n = X.shape[0]
        G = np.zeros((n, 2, 2))
        G[:, 0, 0] = r2
        G[:, 1, 1] = r2 * np.sin(X[:, 0]) ** 2
        return G

    def d_comps_b(X):
        n = X.shape[0]
        dg = np.zeros((n, 2, 2, 2))
        dg[:, 1, 1, 0] = r2 * np.sin(2 * X[:, 0])
        return dg

    d, dd = _maybe(derivative_mode, d_comps, dd_comps)
    cb, dcb = (comps_b, d_comps_b) if derivative_mode != "fd" else (None, None)
    return MetricField(dom, 0, comps, d, dd, name=f"sphere(r={radius})",
                       components_batch=cb, d_components_batch=dcb)


def flat_torus(lengths=(2 * np.pi, 2 * np.pi), derivative_mode="analytic"):
    """Flat torus chart: identity metric, both axes periodic."""
    L = np.asarray(lengths, dtype=float)
    m = L.size
    dom = ChartDomain(
        m, np.zeros(m), L, periodic=(True,) * m, label=f"torus{tuple(L)}"
    )
    eye = np.eye(m)
    zero3 = np.zeros((m, m, m))
    zero4 = np.zeros((m, m, m, m))
    d, dd = _maybe(derivative_mode, lambda x: zero3, lambda x: zero4)
    return MetricField(dom, 0, lambda x: eye, d, dd, name="flat_torus",
                       constant=derivative_mode != "fd")


def football(eps=1e-3, derivative_mode="analytic"):
    """Spindle surface chart (theta, z), g = diag(cos^2(z/2), 1).

    Constant curvature 1/4 with cone points at z = +-pi; the waist z = 0 is a
    closed geodesic of length 2*pi whose normal Jacobi equation has a half
    period mismatch with the orbit, which makes it the standard example for
    degenerate iterates.
    """
    dom = ChartDomain(
        2,
        np.array([0.0, -np.pi + eps]),
        np.array([2 * np.pi, np.pi - eps]),
        periodic=(True, False),
        label="football",
    )

    def comps(x):
        return np.diag([np.cos(x[1] / 2) ** 2, 1.0])

    def d_comps(x):
        dg = np.zeros((2, 2, 2))
        dg[0, 0, 1] = -0.5 * np.sin(x[1])  # d/dz cos^2(z/2) = -sin(z)/2
        return dg

    def dd_comps(x):
        ddg = np.zeros((2, 2, 2, 2))
        ddg[0, 0, 1, 1] = -0.5 * np.cos(x[1])
        return ddg

    def comps_b(X):
        n = X.shape[0]
        G = np.zeros((n, 2, 2))
        G[:, 0, 0] = np.cos(X[:, 1] / 2) ** 2
        G[:, 1, 1] = 1.0
        return G

    def d_comps_b(X):
        n = X.shape[0]
        dg = np.zeros((n, 2, 2, 2))
        dg[:, 0, 0, 1] = -0.5 * np.sin(X[:, 1])
        return dg

    d, dd = _maybe(derivative_mode, d_comps, dd_comps)
    cb, dcb = (comps_b, d_comps_b) if derivative_mode != "fd" else (None, None)
    return MetricField(dom, 0, comps, d, dd, name="football",
                       components_batch=cb, d_components_batch=dcb)


def schwarzschild(mass=1.0, eps=1e-3, r_margin=0.5, derivative_mode="analytic"):
    """Schwarzschild exterior in (t, r, theta, phi), mass in geometric units.

    g = diag(-(1 - 2m/r), (1 - 2m/r)^-1, r^2, r^2 sin^2 theta) on
    r > 2m + r_margin, theta in (eps, pi - eps).
    """
    M = float(mass)
    dom = ChartDomain(
        4,
        np.array([-INF, 2 * M + r_margin, eps, 0.0]),
        np.array([INF, INF, np.pi - eps, 2 * np.pi]),
        periodic=(False, False, False, True),
        label=f"schwarzschild(m={M})",
    )

    def comps(x):
        r, th = x[1], x[2]
        f = 1.0 - 2.0 * M / r
        return np.diag([-f, 1.0 / f, r * r, r * r * np.sin(th) ** 2])

    def d_comps(x):
        r, th = x[1], x[2]
        f = 1.0 - 2.0 * M / r
        fp = 2.0 * M / r**2
        dg = np.zeros((4, 4, 4))
        dg[0, 0, 1] = -fp
        dg[1, 1, 1] = -fp / f**2
        dg[2, 2, 1] = 2.0 * r
        dg[3, 3, 1] = 2.0 * r * np.sin(th) ** 2
        dg[3, 3, 2] = r * r * np.sin(2 * th)
        return dg

    def dd_comps(x):
        r, th = x[1], x[2]
        f = 1.0 - 2.0 * M / r
        fp = 2.0 * M / r**2
        fpp = -4.0 * M / r**3
        ddg = np.zeros((4, 4, 4, 4))
        ddg[0, 0, 1, 1] = -fpp
        ddg[1, 1, 1, 1] = (-fpp * f + 2.0 * fp**2) / f**3
        ddg[2, 2, 1, 1] = 2.0
        ddg[3, 3, 1, 1] = 2.0 * np.sin(th) ** 2
        s2 = np.sin(2 * th)
        ddg[3, 3, 1, 2] = ddg[3, 3, 2, 1] = 2.0 * r * s2
        ddg[3, 3, 2, 2] = 2.0 * r * r * np.cos(2 * th)
        return ddg

    d, dd = _maybe(derivative_mode, d_comps, dd_comps)
    return MetricField(dom, 1, comps, d, dd, name=f"schwarzschild(m={M})")


def expression_metric(entries, dim, index, domain_bounds, periodic=None, params=None,
                      name="expression"):
    """Metric whose components are sympy expression strings in x1..xm.

    ``entries`` maps "i,j" (1-based) to an expression string; unspecified
    entries are zero, and only the upper triangle needs to be given.
    Analytic first and second derivatives come from symbolic differentiation.
    """
    import sympy as sp

    xs = sp.symbols(f"x1:{dim + 1}")
    local = {f"x{i + 1}": xs[i] for i in range(dim)}
    if params:
        local.update({k: sp.Float(v) for k, v in params.items()})
    G = sp.zeros(dim, dim)
    for key, expr in entries.items():
        i, j = (int(s) - 1 for s in key.split(","))
        e = sp.sympify(expr, locals=local)
        G[i, j] = e
        G[j, i] = e
    dG = [[[sp.diff(G[i, j], xs[k]) for k in range(dim)] for j in range(dim)]
          for i in range(dim)]
    ddG = [[[[sp.diff(G[i, j], xs[k], xs[l]) for l in range(dim)]
             for k in range(dim)] for j in range(dim)] for i in range(dim)]
    f_g = sp.lambdify(xs, G, "numpy")
    f_dg = sp.lambdify(xs, dG, "numpy")
    f_ddg = sp.lambdify(xs, ddG, "numpy")

    lo = np.array([b[0] for b in domain_bounds], dtype=float)
    hi = np.array([b[1] for b in domain_bounds], dtype=float)
    per = tuple(periodic) if periodic is not None else (False,) * dim
    dom = ChartDomain(dim, lo, hi, periodic=per, label=name)

    def comps(x):
        return np.asarray(f_g(*x), dtype=float)

    def d_comps(x):
        return np.asarray(f_dg(*x), dtype=float)

    def dd_comps(x):
        return np.asarray(f_ddg(*x), dtype=float)

    return MetricField(dom, index, comps, d_comps, dd_comps, name=name)


BUILTIN_METRICS = {
    "euclidean": euclidean,
    "minkowski": minkowski,
    "sphere": sphere,
    "flat_torus": flat_torus,
    "football": football,
    "schwarzschild": schwarzschild,
}


def make_builtin(name, params=None, derivative_mode="analytic"):
    if name not in BUILTIN_METRICS:
        raise KeyError(f"unknown builtin metric '{name}'")
    kwargs = dict(params or {})
    kwargs["derivative_mode"] = derivative_mode
    return BUILTIN_METRICS[name](**kwargs)
