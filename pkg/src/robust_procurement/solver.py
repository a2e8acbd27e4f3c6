"""Baron-Myerson schedules, the quantity floor, and the robust optimisation program.

The program maximises conjectured welfare over weakly decreasing schedules
that end on the floor and keep worst-case welfare at the maximal guarantee at
every grid cost.  When the floor mechanism already satisfies the robustness
constraints it is the answer; otherwise a primal-dual interior-point method
solves the (convex) discretised program.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .guarantee import (
    CLOSED_FORM_TOL,
    SOLVER_TOL,
    majorization_slacks,
    max_guarantee,
    worst_case_profile,
)
from .integrate import surplus_and_gradient, tail_integrals, virtual_surplus_hessian
from .isotonic import decreasing_projection
from .mechanism import (
    DEFAULT_GRID_POINTS,
    QuantityMechanism,
    QuantitySchedule,
    conjectured_welfare,
)
from .model import Environment, efficient_floor
from .report import VerificationReport

log = logging.getLogger(__name__)

STRUCTURE_TOL = 1e-5
DUAL_TOL = 1e-10
STALL_WINDOW = 50


class ConvergenceError(RuntimeError):
    """The constrained solver hit its iteration budget."""

    def __init__(self, message: str, stats: dict):
        super().__init__(message)
        self.stats = stats


class RegularityError(ValueError):
    """The virtual cost is not increasing on the grid."""


@dataclass(frozen=True)
class SolverOptions:
    grid_points: int = DEFAULT_GRID_POINTS
    tol_constraint: float = 1e-8
    tol_objective: float = 1e-10
    max_iters: int = 100_000
    seed: int = 0
    force_numeric: bool = False

    def replace(self, **changes) -> "SolverOptions":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class RoptSolution:
    mechanism: QuantityMechanism
    objective: float
    theta_star: float
    theta_m: float
    floor_optimal: bool
    stats: dict = field(default_factory=dict)

    @property
    def schedule(self) -> QuantitySchedule:
        return self.mechanism.schedule


# --------------------------------------------------------------------------
# closed-form pieces
# --------------------------------------------------------------------------

def _virtual_costs(env: Environment, grid: np.ndarray) -> np.ndarray:
    z = np.asarray(env.cost.virtual_cost(grid))
    if np.any(np.diff(z) <= 0):
        raise RegularityError("virtual cost is not increasing on the grid; ironing is not supported")
    return z


def baron_myerson(env: Environment, grid_points: int = DEFAULT_GRID_POINTS) -> QuantitySchedule:
    """``q_BM(theta) = D*(z(theta))`` clamped to ``[0, quantity_cap]``."""
    grid = env.grid(grid_points)
    z = _virtual_costs(env, grid)
    q = np.clip(env.conjectured_demand.demand(z), 0.0, env.quantity_cap)
    return QuantitySchedule(grid, q)


def bm_with_floor(env: Environment, grid_points: int = DEFAULT_GRID_POINTS) -> QuantityMechanism:
    """Baron-Myerson schedule raised to the floor ``q_l``, no rent at the top."""
    bm = baron_myerson(env, grid_points)
    return QuantityMechanism(bm.with_values(np.maximum(bm.values, efficient_floor(env))), 0.0)


def check_floor_optimal(env: Environment, grid_points: int = DEFAULT_GRID_POINTS, tol: float = CLOSED_FORM_TOL) -> VerificationReport:
    """Whether the floor mechanism satisfies every robustness constraint.

    Two conditions: the deadweight-loss corrected majorization at the lowest
    cost, and plain majorization at every cost.
    """
    mech = bm_with_floor(env, grid_points)
    th, dwl = majorization_slacks(mech.schedule, env, "dwl")
    _, plain = majorization_slacks(mech.schedule, env, "pointwise")
    bottom = VerificationReport(
        "bottom_dwl", bool(dwl[0] >= -tol), float(dwl[0]),
        details={"lhs": float(tail_integrals(th, mech.schedule(th))[0]),
                 "rhs": float(tail_integrals(th, mech.schedule(th))[0] + dwl[0])})
    everywhere = VerificationReport(
        "majorization", bool(plain.min() >= -tol), float(plain.min()),
        binding=[float(t) for t in th[plain <= tol]], slack=plain)
    return VerificationReport.combine("floor_optimal", [bottom, everywhere])


def theta_star(env: Environment, tol: float = 1e-10) -> float:
    """Cost at which the Baron-Myerson schedule reaches the floor."""
    ql = efficient_floor(env)
    D = env.conjectured_demand

    def qbm(theta):
        return D.demand(env.cost.virtual_cost(theta))

    lo, hi = env.theta_low, env.theta_high
    if qbm(hi) >= ql:
        return hi
    if qbm(lo) <= ql:
        return lo
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if qbm(mid) > ql:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def theta_m(env: Environment, grid_points: int = DEFAULT_GRID_POINTS) -> float:
    """Largest grid cost minimising worst-case welfare of the floor mechanism."""
    return worst_case_profile(bm_with_floor(env, grid_points), env).argmin_max


# --------------------------------------------------------------------------
# constrained solver
# --------------------------------------------------------------------------

class _Program:
    """Discretised program in the free coordinates ``x = q[:-1]``.

    Constraints ``g(x) >= 0`` are stacked as: monotonicity gaps, the floor at
    the last free point, the quantity cap at the first point, then one
    robustness constraint per free grid point.
    """

    def __init__(self, env: Environment, grid: np.ndarray):
        self.env = env
        self.grid = grid
        self.n = grid.size - 1
        self.h = np.diff(grid)
        self.ql = efficient_floor(env)
        self.g_star = max_guarantee(env)
        self.low = env.lowest_demand
        self.conj = env.conjectured_demand
        n = self.n
        # d u_j / d x_k for k >= j (trapezoid rents); constant in x
        T = np.triu(np.broadcast_to(0.5 * (self.h + np.concatenate([[0.0], self.h[:-1]])), (n, n)), 1)
        T[np.diag_indices(n)] = 0.5 * self.h
        self.T = T
        self.m_lin = n + 1

    def full(self, x):
        return np.append(x, self.ql)

    def objective(self, x):
        """Negated welfare and its gradient."""
        val, grad = surplus_and_gradient(self.env.cost, self.conj, self.grid, self.full(x))
        return -val, -grad[:-1]

    def objective_hessian(self, x) -> np.ndarray:
        diag, off = virtual_surplus_hessian(self.env.cost, self.conj, self.grid, self.full(x))
        H = np.diag(-diag[:-1])
        i = np.arange(self.n - 1)
        H[i, i + 1] = H[i + 1, i] = -off[: self.n - 1]
        return H

    def robustness(self, x):
        q = self.full(x)
        u = tail_integrals(self.grid, q)
        return (self.low.gross_value(q) - self.grid * q - u - self.g_star)[:-1]

    def constraints(self, x):
        lin = np.concatenate([x[:-1] - x[1:], [x[-1] - self.ql, self.env.quantity_cap - x[0]]])
        return np.concatenate([lin, self.robustness(x)])

    def _direct(self, x):
        return self.low.inverse(x) - self.grid[:-1]

    def jac_t(self, x, v):
        """``J(x)^T v`` for the stacked constraints."""
        n = self.n
        out = np.zeros(n)
        mono = v[: n - 1]
        out[:-1] += mono
        out[1:] -= mono
        out[-1] += v[n - 1]
        out[0] -= v[n]
        vc = v[self.m_lin:]
        S = np.cumsum(vc)
        rent = 0.5 * self.h * S
        rent[1:] += 0.5 * self.h[:-1] * S[:-1]
        return out + self._direct(x) * vc - rent

    def jac(self, x, dx):
        """``J(x) dx``."""
        lin = np.concatenate([dx[:-1] - dx[1:], [dx[-1], -dx[0]]])
        rob = self._direct(x) * dx - self.T @ dx
        return np.concatenate([lin, rob])

    def normal_matrix(self, x, w, zc):
        """``H_L + J^T diag(w) J`` with ``w = z / s``."""
        n = self.n
        K = self.objective_hessian(x)
        # curvature of the concave robustness constraints
        K[np.diag_indices(n)] += zc * np.abs(self.low.inverse_slope(x))
        wm, wf, wc, wr = w[: n - 1], w[n - 1], w[n], w[self.m_lin:]
        idx = np.arange(n - 1)
        K[idx, idx] += wm
        K[idx + 1, idx + 1] += wm
        K[idx, idx + 1] -= wm
        K[idx + 1, idx] -= wm
        K[n - 1, n - 1] += wf
        K[0, 0] += wc
        a = self._direct(x)
        B = self.T * np.sqrt(wr)[:, None]
        K += B.T @ B
        cross = (a * wr)[:, None] * self.T
        K -= cross + cross.T
        K[np.diag_indices(n)] += a * a * wr
        return K


def _max_step(v, dv, frac):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, frac * np.min(-v[neg] / dv[neg])))


def _interior_point(prob: _Program, x0: np.ndarray, opts: SolverOptions):
    """Primal-dual interior point with Mehrotra predictor-corrector steps."""
    x = x0.copy()
    g = prob.constraints(x)
    m = g.size
    s = np.maximum(g, 1e-2)
    z = np.full(m, 1e-2) / s
    f, grad = prob.objective(x)
    history = []
    for it in range(1, opts.max_iters + 1):
        r_d = grad - prob.jac_t(x, z)
        r_p = g - s
        mu = float(np.dot(s, z)) / m
        viol = float(max(0.0, -g.min()))
        scale = max(1.0, abs(f))
        history.append(f)
        log.debug("ipm %d: f %.14f mu %.2e viol %.2e dual %.2e", it, -f, mu, viol, np.abs(r_d).max())
        feasible = viol < opts.tol_constraint and np.abs(r_p).max() < opts.tol_constraint
        optimal = mu * m < opts.tol_objective * scale and np.abs(r_d).max() < DUAL_TOL * scale
        # fallback: the objective has stopped moving over a full window
        stalled = len(history) > STALL_WINDOW and abs(history[-1 - STALL_WINDOW] - f) <= opts.tol_objective * scale
        if feasible and (optimal or stalled):
            return x, {"iterations": it, "violation": viol, "gap": float(np.dot(s, z)),
                       "dual_residual": float(np.abs(r_d).max()), "multipliers": z[prob.m_lin:]}
        w = z / s
        K = prob.normal_matrix(x, w, z[prob.m_lin:])
        reg = 0.0
        while True:
            try:
                factor = cho_factor(K + reg * np.eye(prob.n), lower=True, check_finite=False)
                break
            except np.linalg.LinAlgError:
                reg = max(1e-12, 10 * reg)

        def direction(r_c):
            rhs = -r_d - prob.jac_t(x, (r_c + z * r_p) / s)
            dx = cho_solve(factor, rhs, check_finite=False)
            ds = prob.jac(x, dx) + r_p
            dz = -(r_c + z * ds) / s
            return dx, ds, dz

        # predictor
        dx, ds, dz = direction(s * z)
        a_p = _max_step(s, ds, 1.0)
        a_d = _max_step(z, dz, 1.0)
        mu_aff = float(np.dot(s + a_p * ds, z + a_d * dz)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        # corrector
        dx, ds, dz = direction(s * z + ds * dz - sigma * mu)
        a_p = _max_step(s, ds, 0.995)
        a_d = _max_step(z, dz, 0.995)
        x = x + a_p * dx
        s = s + a_p * ds
        z = z + a_d * dz
        g = prob.constraints(x)
        f, grad = prob.objective(x)
    raise ConvergenceError(
        f"no convergence after {opts.max_iters} iterations",
        {"iterations": opts.max_iters, "violation": float(max(0.0, -g.min())), "gap": float(np.dot(s, z))},
    )


def solve_ropt(
    env: Environment,
    options: SolverOptions | None = None,
    initial: QuantitySchedule | np.ndarray | None = None,
) -> RoptSolution:
    """Robustly optimal quantity mechanism for the environment.

    Returns the floor mechanism when it already satisfies the robustness
    constraints (unless ``force_numeric`` is set or a starting schedule is
    given); otherwise solves the discretised program numerically starting from
    the floor mechanism or ``initial``.
    """
    opts = options or SolverOptions()
    floor = bm_with_floor(env, opts.grid_points)
    gate = check_floor_optimal(env, opts.grid_points)
    t_star = theta_star(env)
    t_m = theta_m(env, opts.grid_points)
    if gate.passed and not opts.force_numeric and initial is None:
        return RoptSolution(
            floor, conjectured_welfare(floor, env), t_star, t_m, True,
            stats={"iterations": 0, "violation": 0.0, "gap": 0.0, "binding": _binding(floor, env)},
        )

    prob = _Program(env, floor.grid)
    start = floor.quantities if initial is None else (
        initial.values if isinstance(initial, QuantitySchedule) else np.asarray(initial, dtype=float))
    x0 = decreasing_projection(np.asarray(start, dtype=float)[:-1], None, prob.ql, env.quantity_cap)
    x, stats = _interior_point(prob, x0, opts)
    # remove round-off excursions outside the monotone cone
    q = np.append(decreasing_projection(x, None, prob.ql, env.quantity_cap), prob.ql)
    mech = QuantityMechanism(floor.schedule.with_values(q), 0.0)
    stats["binding"] = _binding(mech, env)
    stats["violation"] = float(max(0.0, -prob.robustness(q[:-1]).min()))
    return RoptSolution(mech, conjectured_welfare(mech, env), t_star, t_m, gate.passed, stats)


def _binding(mech: QuantityMechanism, env: Environment) -> list[float]:
    profile = worst_case_profile(mech, env)
    slack = profile.values - max_guarantee(env)
    return [float(t) for t in profile.grid[slack <= SOLVER_TOL]]


def verify_prop2_structure(sol: RoptSolution, env: Environment, tol: float = STRUCTURE_TOL) -> VerificationReport:
    """Shape of a robust solution when the floor mechanism is not optimal.

    (a) the floor binds from the cutoff cost up; (b) below the cutoff the
    schedule lies weakly under Baron-Myerson, strictly somewhere between the
    profile minimiser and the cutoff; (c) below the profile minimiser it equals
    Baron-Myerson.  The lowest grid point is ignored.
    """
    if sol.floor_optimal:
        return VerificationReport("structure", True, message="skipped: floor mechanism is robustly optimal",
                                  details={"skipped": True})
    grid = sol.mechanism.grid
    q = sol.mechanism.quantities
    bm = baron_myerson(env, grid.size).values
    ql = efficient_floor(env)
    t_star, t_m = sol.theta_star, sol.theta_m
    interior = np.arange(grid.size) > 0

    top = grid >= t_star
    a_gap = np.abs(q[top] - ql)
    a = VerificationReport("floor_above_cutoff", bool(a_gap.size == 0 or a_gap.max() <= tol),
                           -float(a_gap.max()) if a_gap.size else 0.0)

    mid = interior & (grid < t_star)
    excess = q[mid] - bm[mid]
    under = excess.size == 0 or excess.max() <= tol
    strict_zone = (grid >= t_m) & (grid < t_star) & interior
    strict = bool(np.any(q[strict_zone] < bm[strict_zone] - tol))
    b = VerificationReport(
        "below_baron_myerson", bool(under and strict),
        -float(excess.max()) if excess.size else 0.0,
        message="" if strict else "no strict downward distortion between the profile minimiser and the cutoff",
        details={"strict": strict})

    low_zone = interior & (grid < t_m)
    c_gap = np.abs(q[low_zone] - bm[low_zone])
    c = VerificationReport("equals_baron_myerson_below_minimiser", bool(c_gap.size == 0 or c_gap.max() <= tol),
                           -float(c_gap.max()) if c_gap.size else 0.0,
                           message="vacuous" if c_gap.size == 0 else "")
    return VerificationReport.combine("structure", [a, b, c])
