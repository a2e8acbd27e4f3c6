"""Worst-case welfare guarantees and the robustness constraints.

Nature's worst case is the lowest demand together with a point mass on a
single cost, so the guarantee of a mechanism is the minimum over costs of the
profile ``V_low(q) - theta q - u``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integrate import curve_crossings, tail_integrals
from .mechanism import QuantityMechanism, QuantitySchedule, rent_schedule
from .model import Environment, deadweight_loss, efficient_floor
from .report import VerificationReport

CLOSED_FORM_TOL = 1e-9
SOLVER_TOL = 1e-7
TIE_TOL = 1e-9

MAJORIZATION_FORMS = ("pointwise", "dwl", "endpoint", "robustness")


@dataclass(frozen=True, eq=False)
class GuaranteeProfile:
    """Worst-case welfare ``W_low(theta, q)`` at the evaluated costs."""

    grid: np.ndarray
    values: np.ndarray
    minimum: float
    argmin_max: float

    @classmethod
    def from_values(cls, grid, values, tie_tol: float = TIE_TOL) -> "GuaranteeProfile":
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        m = float(values.min())
        ties = np.nonzero(values <= m + tie_tol)[0]
        return cls(grid, values, m, float(grid[ties[-1]]))


def max_guarantee(env: Environment) -> float:
    """``G* = V_low(q_l) - theta_high q_l``."""
    ql = efficient_floor(env)
    return float(env.lowest_demand.gross_value(ql) - env.theta_high * ql)


def _profile_values(mech: QuantityMechanism, env: Environment) -> np.ndarray:
    q = mech.quantities
    return env.lowest_demand.gross_value(q) - mech.grid * q - rent_schedule(mech)


def _candidate_nodes(mech: QuantityMechanism, env: Environment) -> np.ndarray:
    """Grid points that can hold the (largest) minimiser of the profile.

    Along a cell where the schedule stays weakly below the lowest demand the
    profile is weakly decreasing, so the left node of such a cell can be
    skipped: the right node is no larger and has a larger cost.  On cells where
    the schedule stays strictly above the lowest demand and strictly falls the
    profile is increasing, so their right node can be skipped.
    """
    grid, q = mech.grid, mech.quantities
    low = env.lowest_demand
    gap = q - low.demand(grid)
    knots = low.prices
    # cells containing a demand kink may change sign inside; never certify them
    kinked = np.zeros(grid.size - 1, dtype=bool)
    inner = knots[(knots > grid[0]) & (knots < grid[-1])]
    if inner.size:
        cells = np.searchsorted(grid, inner) - 1
        on_node = np.isin(inner, grid)
        kinked[cells[~on_node]] = True
    below = (gap[:-1] <= 0) & (gap[1:] <= 0) & ~kinked
    above = (gap[:-1] > 0) & (gap[1:] > 0) & ~kinked & (q[:-1] > q[1:])
    keep = np.ones(grid.size, dtype=bool)
    keep[:-1] &= ~below
    keep[1:] &= ~above
    keep[0] = keep[-1] = True
    return np.nonzero(keep)[0]


def worst_case_profile(mech: QuantityMechanism, env: Environment, fast: bool = False) -> GuaranteeProfile:
    """Profile of worst-case welfare over the grid.

    With ``fast=True`` only candidate minimisers are evaluated; the minimum and
    its largest minimiser agree with the full scan.
    """
    values = _profile_values(mech, env)
    if fast:
        idx = _candidate_nodes(mech, env)
        prof = GuaranteeProfile.from_values(mech.grid[idx], values[idx])
        # a skipped node can tie with the minimum up to round-off; resolve ties on every node
        ties = np.nonzero(values <= prof.minimum + TIE_TOL)[0]
        return GuaranteeProfile(prof.grid, prof.values, prof.minimum, float(mech.grid[ties[-1]]))
    return GuaranteeProfile.from_values(mech.grid, values)


def guarantee(mech: QuantityMechanism, env: Environment) -> float:
    return worst_case_profile(mech, env).minimum


def shortlist_check(
    mech: QuantityMechanism, env: Environment, tol: float = CLOSED_FORM_TOL, binding_tol: float = SOLVER_TOL
) -> VerificationReport:
    """Whether the mechanism attains the maximal guarantee."""
    g_star = max_guarantee(env)
    profile = worst_case_profile(mech, env)
    slack = profile.values - g_star
    top = VerificationReport(
        "zero_top_rent", mech.top_rent <= 0.0, -mech.top_rent,
        message="" if mech.top_rent <= 0 else "the highest cost must earn no rent")
    robust = VerificationReport(
        "robustness", bool(slack.min() >= -tol), float(slack.min()),
        binding=[float(t) for t in profile.grid[np.abs(slack) <= binding_tol]],
        slack=slack,
        details={"argmin": float(profile.grid[int(np.argmin(slack))])})
    return VerificationReport.combine(
        "shortlist", [top, robust], details={"guarantee": profile.minimum, "max_guarantee": g_star})


def evaluation_points(schedule: QuantitySchedule, env: Environment) -> tuple[np.ndarray, np.ndarray]:
    """The grid plus every cost where the schedule crosses the lowest demand.

    Robustness slacks are extremal on this set, so checks on it are exact for
    the interpolated schedule.
    """
    cross = curve_crossings(schedule.grid, schedule.values, env.lowest_demand)
    if cross.size == 0:
        return schedule.grid, schedule.values
    th = np.union1d(schedule.grid, cross)
    return th, schedule(th)


def majorization_slacks(schedule: QuantitySchedule, env: Environment, form: str) -> tuple[np.ndarray, np.ndarray]:
    """Slack of the requested robustness formulation at the evaluation points."""
    if form not in MAJORIZATION_FORMS:
        raise ValueError(f"unknown form {form!r}; expected one of {MAJORIZATION_FORMS}")
    th, q = evaluation_points(schedule, env)
    low = env.lowest_demand
    tail_q = tail_integrals(th, q)
    if form == "robustness":
        return th, low.gross_value(q) - th * q - tail_q - max_guarantee(env)
    pointwise = low.integral(th, env.theta_high) - tail_q
    if form == "pointwise":
        return th, pointwise
    dwl = pointwise - deadweight_loss(env, th, q)
    if form == "dwl":
        return th, dwl
    out = pointwise.copy()
    out[[0, -1]] = dwl[[0, -1]]
    return th, out


def majorization_check(
    schedule: QuantitySchedule, env: Environment, form: str = "dwl", tol: float = CLOSED_FORM_TOL
) -> VerificationReport:
    """Integral (majorization) form of the robustness constraints.

    ``pointwise``: integral of q up to the top cost is at most that of the
    lowest demand, at every cost.  ``dwl``: the same with the deadweight-loss
    correction.  ``endpoint``: the corrected form at the two extreme costs and
    the plain form in between.  ``robustness``: the profile form.
    """
    th, slack = majorization_slacks(schedule, env, form)
    worst = float(slack.min())
    return VerificationReport(
        f"majorization[{form}]",
        worst >= -tol,
        worst,
        binding=[float(t) for t in th[slack <= tol]],
        slack=slack,
        details={"worst_theta": float(th[int(np.argmin(slack))])},
    )


def quantity_bound_check(schedule: QuantitySchedule, env: Environment, tol: float = CLOSED_FORM_TOL) -> VerificationReport:
    """Short-list schedules never fall below the floor and end exactly on it."""
    ql = efficient_floor(env)
    above = schedule.values - ql
    top_gap = abs(float(schedule.values[-1]) - ql)
    worst = min(float(above.min()), -top_gap)
    ok = above.min() >= -tol and top_gap <= tol
    msg = ""
    if above.min() < -tol:
        msg = f"schedule drops below the floor {ql:g}"
    elif top_gap > tol:
        msg = f"quantity at the top cost differs from the floor {ql:g}"
    return VerificationReport(
        "quantity_bound", bool(ok), worst,
        binding=[float(t) for t in schedule.grid[above < -tol]],
        slack=above, message=msg)
