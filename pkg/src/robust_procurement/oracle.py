"""Brute-force adversary, random test populations, and numerical probes.

Everything here is computed from first principles (enumeration, direct
welfare sums, finite differences) so that it can cross-check the analytic
routines elsewhere in the package.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .integrate import refine, surplus_and_gradient, tail_integrals, virtual_surplus
from .isotonic import decreasing_projection
from .mechanism import (
    DEFAULT_GRID_POINTS,
    PriceRegulation,
    QuantityMechanism,
    QuantitySchedule,
    cost_weights,
    price_ex_post_welfare,
)
from .model import (
    CostModel,
    Environment,
    PiecewiseLinearCurve,
    efficient_floor,
    validate_environment,
)
from .report import VerificationReport

SIMPLEX_STEP = 0.25
STARVATION_DRAWS = 1_000_000
STARVATION_RATE = 1e-3
FEASIBILITY_TOL = 1e-9
SCHEDULE_VARIANTS = ("knots", "steps", "blend")


class SamplerStarvationError(RuntimeError):
    """Rejection sampling accepted too few draws."""


@dataclass(frozen=True)
class AdversaryGrid:
    """Nature's search space: cost atoms, stored demands, and mixture size."""

    cost_atoms: tuple[float, ...]
    demand_indices: tuple[int, ...] = (0,)
    mixture_depth: int = 1
    step: float = SIMPLEX_STEP

    def __post_init__(self):
        atoms = tuple(float(t) for t in np.unique(np.asarray(self.cost_atoms, dtype=float)))
        if not atoms:
            raise ValueError("at least one cost atom is required")
        if self.mixture_depth < 1:
            raise ValueError("mixture_depth must be at least 1")
        object.__setattr__(self, "cost_atoms", atoms)
        object.__setattr__(self, "demand_indices", tuple(int(k) for k in self.demand_indices))

    @classmethod
    def full(cls, env: Environment, atoms, mixture_depth: int = 1) -> "AdversaryGrid":
        """Every stored demand on the given atoms."""
        return cls(tuple(atoms), tuple(range(len(env.demands))), mixture_depth)

    def check(self, env: Environment) -> None:
        atoms = np.asarray(self.cost_atoms)
        if atoms.min() < env.theta_low - 1e-12 or atoms.max() > env.theta_high + 1e-12:
            raise ValueError("cost atoms must lie inside the cost support")
        if any(not 0 <= k < len(env.demands) for k in self.demand_indices):
            raise ValueError("demand index out of range")


def _simplex_weights(depth: int, step: float) -> np.ndarray:
    """Weight vectors with ``depth`` strictly positive entries on a lattice."""
    units = int(round(1.0 / step))
    rows = [c for c in itertools.product(range(1, units + 1), repeat=depth) if sum(c) == units]
    return np.array(rows, dtype=float) / units


def _atom_welfare(grid, values, top_rent, demand: PiecewiseLinearCurve, atoms) -> np.ndarray:
    """Ex-post welfare ``V(q) - theta q - u`` at arbitrary costs, from its definition."""
    th, q = refine(grid, values, thetas=atoms)
    rents = top_rent + tail_integrals(th, q)
    idx = np.searchsorted(th, atoms)
    qa = q[idx]
    return demand.gross_value(qa) - atoms * qa - rents[idx]


def _enumerate(welfare_by_demand: dict[int, np.ndarray], grid: AdversaryGrid):
    """Minimum of expected welfare over demands and mixtures of atoms."""
    atoms = np.asarray(grid.cost_atoms)
    best = (np.inf, None, None)
    for k, w in welfare_by_demand.items():
        for depth in range(1, min(grid.mixture_depth, atoms.size) + 1):
            weights = _simplex_weights(depth, grid.step)
            for combo in itertools.combinations(range(atoms.size), depth):
                vals = weights @ w[list(combo)]
                j = int(np.argmin(vals))
                if vals[j] < best[0]:
                    best = (float(vals[j]), k, {float(atoms[c]): float(p) for c, p in zip(combo, weights[j])})
    return best


def brute_force_guarantee(mech: QuantityMechanism, env: Environment, grid: AdversaryGrid, full: bool = False):
    """Worst expected welfare of a quantity mechanism over Nature's search space.

    Returns the value, or with ``full=True`` a tuple ``(value, demand_index,
    distribution)`` where the distribution maps atoms to probabilities.
    """
    grid.check(env)
    atoms = np.asarray(grid.cost_atoms)
    by_demand = {
        k: _atom_welfare(mech.grid, mech.quantities, mech.top_rent, env.demands[k], atoms)
        for k in grid.demand_indices
    }
    best = _enumerate(by_demand, grid)
    return best if full else best[0]


def brute_force_price_guarantee(reg: PriceRegulation, env: Environment, grid: AdversaryGrid | None = None, full: bool = False):
    """Worst expected welfare of a price regulation; atoms must be grid costs."""
    if grid is None:
        grid = AdversaryGrid.full(env, reg.grid)
    grid.check(env)
    atoms = np.asarray(grid.cost_atoms)
    idx = np.searchsorted(reg.grid, atoms)
    if np.any(idx >= reg.grid.size) or np.any(reg.grid[np.minimum(idx, reg.grid.size - 1)] != atoms):
        raise ValueError("price regulations are only defined on their grid")
    by_demand = {k: price_ex_post_welfare(reg, env, k)[idx] for k in grid.demand_indices}
    best = _enumerate(by_demand, grid)
    return best if full else best[0]


# --------------------------------------------------------------------------
# random populations
# --------------------------------------------------------------------------

def _random_shape(rng: np.random.Generator, grid: np.ndarray, variant: str) -> np.ndarray:
    """Weakly decreasing shape on the grid with values in ``[0, 1]`` and zero at the top."""
    t = (grid - grid[0]) / (grid[-1] - grid[0])
    k = int(rng.integers(1, 7))
    if variant == "knots":
        xs = np.concatenate([[0.0], np.sort(rng.uniform(0, 1, k)), [1.0]])
        ys = np.concatenate([np.sort(rng.uniform(0, 1, k + 1))[::-1], [0.0]])
        return np.interp(t, xs, ys)
    if variant == "steps":
        cuts = np.sort(rng.uniform(0, 1, k))
        levels = np.concatenate([np.sort(rng.uniform(0, 1, k))[::-1], [0.0]])
        return levels[np.searchsorted(cuts, t, side="right")]
    raise ValueError(f"unknown variant {variant!r}")


def _draw(rng: np.random.Generator, env: Environment, grid: np.ndarray, anchors: list[np.ndarray]) -> np.ndarray:
    ql = efficient_floor(env)
    variant = SCHEDULE_VARIANTS[int(rng.integers(len(SCHEDULE_VARIANTS)))]
    if variant == "blend":
        target = anchors[int(rng.integers(len(anchors)))]
        lam = rng.uniform(0, 1)
        noise = 0.05 * rng.uniform(0, 1) * _random_shape(rng, grid, "knots")
        q = ql + lam * (target - ql) + noise * rng.choice([-1.0, 1.0])
    else:
        top = max(env.lowest_demand.demand(grid[0]), env.conjectured_demand.demand(grid[0])) - ql
        q = ql + rng.uniform(0, 1.2) * top * _random_shape(rng, grid, variant)
    q = decreasing_projection(q, None, ql, env.quantity_cap)
    q[-1] = ql
    return q


def _anchors(env: Environment, grid: np.ndarray) -> list[np.ndarray]:
    ql = efficient_floor(env)
    z = env.cost.virtual_cost(grid)
    bm = np.clip(env.conjectured_demand.demand(z), ql, env.quantity_cap)
    low = np.clip(env.lowest_demand.demand(grid), ql, env.quantity_cap)
    return [bm, np.minimum(bm, low), low]


def random_schedules(env: Environment, n: int, seed: int = 0, grid_points: int = DEFAULT_GRID_POINTS) -> list[QuantitySchedule]:
    """Weakly decreasing schedules ending on the floor; robustness not enforced."""
    rng = np.random.default_rng(seed)
    grid = env.grid(grid_points)
    anchors = _anchors(env, grid)
    return [QuantitySchedule(grid, _draw(rng, env, grid, anchors)) for _ in range(n)]


def sorted_uniform_schedules(env: Environment, n: int, seed: int = 0, grid_points: int = DEFAULT_GRID_POINTS) -> list[QuantitySchedule]:
    """Independent uniform draws on ``[q_l / 2, D*(theta_low)]`` at each grid point, sorted decreasing."""
    rng = np.random.default_rng(seed)
    grid = env.grid(grid_points)
    lo = 0.5 * efficient_floor(env)
    hi = float(env.conjectured_demand.demand(env.theta_low))
    draws = np.sort(rng.uniform(lo, hi, (n, grid.size)), axis=1)[:, ::-1]
    return [QuantitySchedule(grid, q) for q in draws]


def robust_feasible(env: Environment, grid: np.ndarray, values: np.ndarray, tol: float = FEASIBILITY_TOL) -> np.ndarray:
    """Row-wise test of the robustness constraints at every grid cost.

    ``values`` may be a single schedule or a stack of schedules (one per row).
    """
    q = np.atleast_2d(values)
    cells = np.diff(grid) * (q[:, :-1] + q[:, 1:]) / 2
    tails = np.concatenate([np.cumsum(cells[:, ::-1], axis=1)[:, ::-1], np.zeros((q.shape[0], 1))], axis=1)
    low = env.lowest_demand
    ql = efficient_floor(env)
    g_star = low.gross_value(ql) - env.theta_high * ql
    slack = low.gross_value(q) - grid * q - tails - g_star
    return slack.min(axis=1) >= -tol


def random_feasible_schedules(
    env: Environment, n: int, seed: int = 0, grid_points: int = DEFAULT_GRID_POINTS, batch: int = 1000
) -> list[QuantitySchedule]:
    """Rejection-sample schedules that satisfy every short-list constraint.

    Raises :class:`SamplerStarvationError` when the acceptance rate is below
    0.1% after a million draws.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    grid = env.grid(grid_points)
    anchors = _anchors(env, grid)
    accepted: list[np.ndarray] = []
    draws = 0
    while len(accepted) < n:
        block = np.array([_draw(rng, env, grid, anchors) for _ in range(batch)])
        draws += batch
        ok = robust_feasible(env, grid, block)
        accepted.extend(block[ok][: n - len(accepted)])
        if draws >= STARVATION_DRAWS and len(accepted) < n and len(accepted) < STARVATION_RATE * draws:
            raise SamplerStarvationError(
                f"accepted {len(accepted)} of {draws} draws (rate below {STARVATION_RATE:.1%})")
    return [QuantitySchedule(grid, q) for q in accepted]


def _random_curve(rng: np.random.Generator, start: float, choke: float, kinks: int) -> PiecewiseLinearCurve:
    xs = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, kinks)) * choke, [choke]])
    ys = np.concatenate([[start], np.sort(rng.uniform(0, start, kinks))[::-1], [0.0]])
    return PiecewiseLinearCurve(tuple(zip(xs, ys)))


def _add(a: PiecewiseLinearCurve, b: PiecewiseLinearCurve) -> PiecewiseLinearCurve:
    xs = np.union1d(a.prices, b.prices)
    ys = a.demand(xs) + b.demand(xs)
    ys[-1] = 0.0
    return PiecewiseLinearCurve(tuple(zip(xs, ys)))


def random_cost(rng: np.random.Generator) -> CostModel:
    low = float(rng.uniform(0.5, 2.0))
    high = low + float(rng.uniform(0.5, 1.5))
    family = ("uniform", "power", "piecewise-linear-density")[int(rng.integers(3))]
    if family == "power":
        return CostModel("power", low, high, {"exponent": float(rng.uniform(0.5, 3.0))})
    if family == "piecewise-linear-density":
        # nondecreasing densities keep the virtual cost increasing
        xs = [low, low + rng.uniform(0.2, 0.8) * (high - low), high]
        ys = np.sort(rng.uniform(0.5, 2.0, 3))
        return CostModel("piecewise-linear-density", low, high, {"knots": [[x, y] for x, y in zip(xs, ys)]})
    return CostModel("uniform", low, high, {})


def random_environment(seed: int, max_tries: int = 1000) -> Environment:
    """A random environment that passes validation; deterministic in ``seed``.

    The lowest demand is piecewise linear with a few kinks and positive demand
    at the top cost; the conjectured demand adds a nonnegative decreasing
    piecewise-linear term.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        cost = random_cost(rng)
        high = cost.high
        low_curve = _random_curve(rng, float(rng.uniform(1.0, 4.0)), high * float(rng.uniform(1.2, 3.0)), int(rng.integers(0, 3)))
        if rng.uniform() < 0.25:
            conj = low_curve
        else:
            bump = _random_curve(rng, float(rng.uniform(0.1, 2.0)), high * float(rng.uniform(0.3, 3.0)), int(rng.integers(0, 3)))
            conj = _add(low_curve, bump)
        env = Environment(cost, conj, low_curve, quantity_cap=10.0)
        if validate_environment(env, grid_points=501).passed:
            return env
    raise RuntimeError("could not draw a valid environment")


# --------------------------------------------------------------------------
# probes
# --------------------------------------------------------------------------

def monotonicity_probe(schedule: QuantitySchedule, env: Environment, tol: float = 1e-10) -> VerificationReport:
    """Monotonicity of worst-case welfare on the intervals fixed by ``q`` vs the lowest demand.

    Costs are split where the schedule crosses the lowest demand and at the
    demand's kinks.  Worst-case welfare must weakly fall along stretches where
    the schedule is at or below the lowest demand and weakly rise where it is
    at or above.
    """
    low = env.lowest_demand
    grid, values = schedule.grid, schedule.values
    cross = np.empty(0)
    knots = low.prices
    th = np.union1d(grid, knots[(knots > grid[0]) & (knots < grid[-1])])
    diff = np.interp(th, grid, values) - low.demand(th)
    flip = diff[:-1] * diff[1:] < 0
    if np.any(flip):
        frac = diff[:-1][flip] / (diff[:-1][flip] - diff[1:][flip])
        cross = th[:-1][flip] + frac * (th[1:][flip] - th[:-1][flip])
    th = np.union1d(th, cross)
    q = np.interp(th, grid, values)
    gap = q - low.demand(th)
    scale = max(1.0, float(np.abs(values).max()))
    gap[np.abs(gap) <= 1e-12 * scale] = 0.0
    w = low.gross_value(q) - th * q - tail_integrals(th, q)

    # sign of each refined cell: -1 below, +1 above, 0 on the curve
    mid = 0.5 * (gap[:-1] + gap[1:])
    sign = np.sign(mid)
    dw = np.diff(w)
    bad = ((sign <= 0) & (dw > tol)) | ((sign >= 0) & (dw < -tol))
    intervals = []
    start = 0
    for i in range(1, sign.size + 1):
        if i == sign.size or sign[i] != sign[start]:
            kind = {-1.0: "decreasing", 1.0: "increasing", 0.0: "flat"}[float(sign[start])]
            intervals.append((float(th[start]), float(th[i]), kind))
            start = i
    worst = float(-np.max(np.where(sign <= 0, dw, -dw))) if dw.size else 0.0
    return VerificationReport(
        "monotonicity", not bool(np.any(bad)), worst,
        binding=[float(t) for t in th[:-1][bad]],
        details={"intervals": intervals})


def finite_difference_welfare_check(
    mech: QuantityMechanism, env: Environment, direction, h: float = 1e-5, tol: float = 1e-4
) -> VerificationReport:
    """Analytic directional derivative of conjectured welfare against central differences.

    The error is measured relative to the largest of the two derivatives and
    the natural scale of the direction (its cost-weighted size), so a zero
    gradient at an unconstrained optimum compares cleanly.
    """
    grid, q = mech.grid, mech.quantities
    d = np.asarray(direction, dtype=float)
    if d.shape != q.shape:
        raise ValueError("direction must match the grid")
    cost, demand = env.cost, env.conjectured_demand
    _, grad = surplus_and_gradient(cost, demand, grid, q)
    analytic = float(grad @ d)
    fd = (virtual_surplus(cost, demand, grid, q + h * d) - virtual_surplus(cost, demand, grid, q - h * d)) / (2 * h)
    mass = cost_weights(cost, grid)
    scale = max(abs(analytic), abs(fd), float(mass @ np.abs(d)))
    err = abs(fd - analytic) / scale if scale > 0 else 0.0
    return VerificationReport(
        "finite_difference", err < tol, tol - err,
        details={"analytic": analytic, "finite_difference": fd, "relative_error": err, "h": h})


__all__ = [
    "AdversaryGrid",
    "SamplerStarvationError",
    "brute_force_guarantee",
    "brute_force_price_guarantee",
    "random_schedules",
    "random_feasible_schedules",
    "sorted_uniform_schedules",
    "robust_feasible",
    "random_environment",
    "random_cost",
    "monotonicity_probe",
    "finite_difference_welfare_check",
]
