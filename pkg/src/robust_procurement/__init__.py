"""Robust procurement regulation.

A buyer regulates a monopolist with private costs while unsure about demand.
This package computes worst-case welfare guarantees, the robustly optimal
quantity schedule, the robustly optimal price cap, and the ranking of the two
instruments under a conjectured model.
"""

from .guarantee import (
    guarantee,
    majorization_check,
    max_guarantee,
    quantity_bound_check,
    shortlist_check,
    worst_case_profile,
)
from .mechanism import (
    PriceRegulation,
    QuantityMechanism,
    QuantitySchedule,
    conjectured_welfare,
    constant_mechanism,
    price_conjectured_welfare,
    welfare,
)
from .model import (
    CostModel,
    Environment,
    PiecewiseLinearCurve,
    efficient_floor,
    load_fixture,
    validate_environment,
)
from .regulation import (
    ComparisonReport,
    bm_with_price_cap,
    compare_regulation,
    corollary6_conditions,
    price_shortlist_check,
    rent_band,
)
from .report import VerificationReport
from .solver import (
    ConvergenceError,
    RoptSolution,
    SolverOptions,
    baron_myerson,
    bm_with_floor,
    check_floor_optimal,
    solve_ropt,
    theta_m,
    theta_star,
    verify_prop2_structure,
)

__version__ = "0.1.0"
