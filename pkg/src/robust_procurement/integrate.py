"""Exact integrals of piecewise-linear schedules against the cost distribution.

A schedule is the linear interpolant of its grid values.  After splitting each
cell where the schedule crosses a quantity breakpoint of the demand curve (or a
knot of the cost density) every integrand is a polynomial of degree <= 2 in
the normalised cost ``t``, so integrals reduce to closed-form moments.
"""

from __future__ import annotations

import numpy as np

from .model import CostModel, PiecewiseLinearCurve


def level_crossings(grid: np.ndarray, values: np.ndarray, levels) -> np.ndarray:
    """Costs strictly inside grid cells where the interpolant crosses a level."""
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0:
        return np.empty(0)
    q0 = values[:-1, None]
    q1 = values[1:, None]
    lo = np.minimum(q0, q1)
    hi = np.maximum(q0, q1)
    cell, lev = np.nonzero((lo < levels) & (levels < hi))
    if cell.size == 0:
        return np.empty(0)
    frac = (levels[lev] - values[cell]) / (values[cell + 1] - values[cell])
    return grid[cell] + frac * (grid[cell + 1] - grid[cell])


def refine(grid, values, levels=(), thetas=()) -> tuple[np.ndarray, np.ndarray]:
    """Add crossing points and extra costs to a schedule's grid.

    Returns the refined costs and the interpolated quantities there; the
    interpolant is unchanged.
    """
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    extra = [level_crossings(grid, values, levels)]
    thetas = np.asarray(thetas, dtype=float)
    if thetas.size:
        extra.append(thetas[(thetas > grid[0]) & (thetas < grid[-1])])
    extra = np.concatenate(extra)
    if extra.size == 0:
        return grid, values
    th = np.union1d(grid, extra)
    return th, np.interp(th, grid, values)


def curve_crossings(grid, values, curve: PiecewiseLinearCurve) -> np.ndarray:
    """Costs where the schedule ``q(theta)`` crosses the demand ``D(theta)``."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    knots = curve.prices
    th = np.union1d(grid, knots[(knots > grid[0]) & (knots < grid[-1])])
    diff = np.interp(th, grid, values) - curve.demand(th)
    d0, d1 = diff[:-1], diff[1:]
    flip = d0 * d1 < 0
    frac = d0[flip] / (d0[flip] - d1[flip])
    return th[:-1][flip] + frac * (th[1:][flip] - th[:-1][flip])


def tail_integrals(grid, values) -> np.ndarray:
    """``integral of q from grid[i] to grid[-1]`` for each node (exact trapezoid)."""
    grid = np.asarray(grid, dtype=float)
    values = np.asarray(values, dtype=float)
    cells = np.diff(grid) * (values[:-1] + values[1:]) / 2
    return np.concatenate([np.cumsum(cells[::-1])[::-1], [0.0]])


def compose(curve: PiecewiseLinearCurve, grid, prices) -> tuple[np.ndarray, np.ndarray]:
    """Exact piecewise-linear representation of ``theta -> D(p(theta))``.

    ``p`` is the interpolant of ``prices`` on ``grid``; the returned grid adds
    every cost at which ``p`` crosses a price knot of the curve.
    """
    th, p = refine(grid, prices, curve.prices)
    return th, curve.demand(p)


def _polys(cost: CostModel, curve: PiecewiseLinearCurve, grid, values):
    th, q = refine(grid, values, curve.quantity_breakpoints(), cost.breakpoints())
    t = cost.to_t(th)
    t0, t1 = t[:-1], t[1:]
    keep = t1 > t0
    t0, t1 = t0[keep], t1[keep]
    q0, q1 = q[:-1][keep], q[1:][keep]
    b = (q1 - q0) / (t1 - t0)
    a = q0 - b * t0
    pieces = curve.inverse_pieces(copy=False)
    k = curve.piece_index((q0 + q1) / 2)
    return {
        "t": t, "t0": t0, "t1": t1, "a": a, "b": b, "keep": keep, "theta": th,
        "qlo": pieces["qlo"][k], "plo": pieces["plo"][k],
        "slope": pieces["slope"][k], "vlo": pieces["vlo"][k],
    }


def virtual_surplus(cost: CostModel, curve: PiecewiseLinearCurve, grid, values) -> float:
    """``integral of [V(q) - z q] dF`` for the interpolated schedule, in closed form."""
    return surplus_and_gradient(cost, curve, grid, values, gradient=False)[0]


def virtual_surplus_gradient(cost: CostModel, curve: PiecewiseLinearCurve, grid, values) -> np.ndarray:
    """Exact gradient of :func:`virtual_surplus` with respect to the grid values.

    Component ``i`` is ``integral of (P(q) - z) phi_i dF`` with ``phi_i`` the
    hat function of node ``i``.
    """
    return surplus_and_gradient(cost, curve, grid, values)[1]


def surplus_and_gradient(cost: CostModel, curve: PiecewiseLinearCurve, grid, values, gradient: bool = True):
    """Virtual surplus and (optionally) its gradient from one refinement pass."""
    grid = np.asarray(grid, dtype=float)
    P = _polys(cost, curve, grid, values)
    t0, t1, a, b = P["t0"], P["t1"], P["a"], P["b"]
    M = cost.moments(t0, t1, 2)
    K = cost.cdf_moments(t0, t1, 1)
    d0 = a - P["qlo"]
    s, plo = P["slope"], P["plo"]
    lo, w = cost.low, cost.width
    gross = (P["vlo"] + plo * d0 + 0.5 * s * d0 * d0) * M[:, 0] + (plo * b + s * d0 * b) * M[:, 1] + 0.5 * s * b * b * M[:, 2]
    cost_term = lo * a * M[:, 0] + (lo * b + w * a) * M[:, 1] + w * b * M[:, 2]
    rent_term = a * K[:, 0] + b * K[:, 1]
    value = float(np.sum(gross - cost_term - rent_term))
    if not gradient:
        return value, None
    # marginal value minus cost, linear in t: alpha + beta t
    alpha = plo + s * d0 - lo
    beta = s * b - w
    T = cost.to_t(grid)
    cell = np.clip(np.searchsorted(T, (t0 + t1) / 2) - 1, 0, len(grid) - 2)
    D = T[cell + 1] - T[cell]
    n = len(grid)
    grad = np.zeros(n)
    for c0, c1, node in ((T[cell + 1] / D, -1.0 / D, cell), (-T[cell] / D, 1.0 / D, cell + 1)):
        part = (alpha * c0) * M[:, 0] + (alpha * c1 + beta * c0) * M[:, 1] + beta * c1 * M[:, 2]
        part -= c0 * K[:, 0] + c1 * K[:, 1]
        grad += np.bincount(node, weights=part, minlength=n)
    return value, grad


def virtual_surplus_hessian(cost: CostModel, curve: PiecewiseLinearCurve, grid, values) -> tuple[np.ndarray, np.ndarray]:
    """Tridiagonal Hessian of :func:`virtual_surplus`: ``(diagonal, superdiagonal)``.

    Entry ``(i, j)`` is ``integral of P'(q) phi_i phi_j dF``; jumps of ``P``
    (flat demand segments) contribute nothing.
    """
    grid = np.asarray(grid, dtype=float)
    P = _polys(cost, curve, grid, values)
    t0, t1 = P["t0"], P["t1"]
    M = cost.moments(t0, t1, 2)
    s = P["slope"]
    T = cost.to_t(grid)
    cell = np.clip(np.searchsorted(T, (t0 + t1) / 2) - 1, 0, len(grid) - 2)
    D = T[cell + 1] - T[cell]
    left = (T[cell + 1] / D, -1.0 / D)
    right = (-T[cell] / D, 1.0 / D)

    def inner(u, v):
        return s * (u[0] * v[0] * M[:, 0] + (u[0] * v[1] + u[1] * v[0]) * M[:, 1] + u[1] * v[1] * M[:, 2])

    n = len(grid)
    diag = np.bincount(cell, weights=inner(left, left), minlength=n)
    diag += np.bincount(cell + 1, weights=inner(right, right), minlength=n)
    off = np.bincount(cell, weights=inner(left, right), minlength=n - 1)
    return diag, off
