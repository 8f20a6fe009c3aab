"""Shared numerical helpers: near-kernel detection, quadrature, wrapping."""

from __future__ import annotations

import numpy as np

# 5-point Gauss-Legendre nodes/weights on [0, 1].
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
GAUSS5_NODES = 0.5 * (_GL_X + 1.0)
GAUSS5_WEIGHTS = 0.5 * _GL_W

_GL3_X, _GL3_W = np.polynomial.legendre.leggauss(3)
GAUSS3_NODES = 0.5 * (_GL3_X + 1.0)
GAUSS3_WEIGHTS = 0.5 * _GL3_W


def kernel_count(values, scale=None, rel_floor=1e-6, gap_factor=100.0, zone=1e-4):
    """Count the near-zero group in a set of magnitudes.

    ``values`` are singular values or |eigenvalues|. Entries below
    ``zone * scale`` are kernel candidates; the kernel is cut at the last
    multiplicative gap >= ``gap_factor`` found inside the candidate window
    (including the jump to the first rejected entry). Without such a gap only
    entries below ``rel_floor * scale`` count. Returns
    ``(count, threshold_used)``.
    """
    vals = np.sort(np.abs(np.asarray(values, dtype=float)))
    if vals.size == 0:
        return 0, 0.0
    if scale is None:
        scale = vals[-1]
    if scale <= 0.0:
        # Everything is zero: the whole set is kernel.
        return vals.size, 0.0
    floor = rel_floor * scale
    n_zone = int(np.searchsorted(vals, zone * scale, side="right"))
    if n_zone == 0:
        return 0, floor
    if n_zone == vals.size:
        # No rejected entry to gap against; accept the zone.
        return n_zone, zone * scale
    tiny = np.finfo(float).tiny
    for k in range(n_zone, 0, -1):
        if vals[k] >= gap_factor * max(vals[k - 1], tiny):
            return k, vals[k - 1]
    n_floor = int(np.searchsorted(vals, floor, side="right"))
    return n_floor, floor


def wrap_delta(delta, periods):
    """Wrap coordinate differences into [-L/2, L/2] on periodic axes.

    ``periods`` has one entry per axis; non-periodic axes carry ``None`` (or 0).
    Works on arrays whose last axis is the coordinate axis.
    """
    delta = np.array(delta, dtype=float, copy=True)
    for i, L in enumerate(periods):
        if L:
            delta[..., i] -= L * np.round(delta[..., i] / L)
    return delta


def quad_segments(fun, ts, order=5):
    """Integrate ``fun(t)`` (vectorized over t) over the grid ``ts`` piecewise.

    Gauss-Legendre of the given order per segment; returns the total.
    """
    ts = np.asarray(ts, dtype=float)
    if order == 5:
        nodes, weights = GAUSS5_NODES, GAUSS5_WEIGHTS
    else:
        nodes, weights = GAUSS3_NODES, GAUSS3_WEIGHTS
    h = np.diff(ts)
    # quadrature points per segment, flattened
    pts = ts[:-1, None] + h[:, None] * nodes[None, :]
    vals = fun(pts.ravel()).reshape(pts.shape)
    return float(np.sum(h[:, None] * weights[None, :] * vals))


def hausdorff(a, b, periods=None):
    """Symmetric Hausdorff distance between two point clouds (rows = points)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = a[:, None, :] - b[None, :, :]
    if periods is not None:
        diff = wrap_delta(diff, periods)
    d = np.sqrt(np.sum(diff**2, axis=-1))
    return max(float(np.max(np.min(d, axis=1))), float(np.max(np.min(d, axis=0))))


def format_float(x):
    """Deterministic 17-significant-digit float formatting for reports."""
    return f"{float(x):.17g}"
