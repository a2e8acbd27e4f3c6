"""
The floor mechanism and its worst-case guarantee
=================================================

Build an environment by hand, procure with the Baron-Myerson schedule raised
to the quantity floor, and look at the welfare the buyer can count on.
"""

from robust_procurement import (
    CostModel,
    Environment,
    PiecewiseLinearCurve,
    bm_with_floor,
    check_floor_optimal,
    conjectured_welfare,
    max_guarantee,
    worst_case_profile,
)

# Costs uniform on [1, 2]; the buyer expects demand 3 - p but only trusts
# that demand is at least min(3 - p, 3.5 - 1.5 p).
cost = CostModel("uniform", 1.0, 2.0)
expected = PiecewiseLinearCurve(((0.0, 3.0), (3.0, 0.0)))
lowest = PiecewiseLinearCurve(((0.0, 3.0), (1.0, 2.0), (7 / 3, 0.0)))
env = Environment(cost, expected, lowest)

# Nobody can promise more than this, whatever the true demand and costs.
print("best possible guarantee:", max_guarantee(env))

# The floor mechanism: the usual screening schedule, but never below the
# quantity the lowest demand buys at the highest cost.
mech = bm_with_floor(env, 11)
for theta, q in zip(mech.grid, mech.quantities):
    print(f"  theta {theta:.1f}  q {q:.3f}")

# Worst-case welfare at each cost; its minimum is the mechanism's guarantee.
profile = worst_case_profile(mech, env)
print("guarantee:", profile.minimum, "reached at cost", profile.argmin_max)

# Is anything better under the expected model while keeping the guarantee?
gate = check_floor_optimal(env)
print(gate.summary())
print("expected welfare:", conjectured_welfare(bm_with_floor(env), env), "=", 21 / 32)

# Shrinking the lowest demand further makes the floor mechanism too greedy.
tight = env.replace(lowest_demand=PiecewiseLinearCurve(((0.0, 1.4), (2.0, 1.0), (3.0, 0.0))))
print("with a flatter lowest demand:", "passes" if check_floor_optimal(tight) else "fails",
      "| guarantee", round(worst_case_profile(bm_with_floor(tight), tight).minimum, 6),
      "vs", max_guarantee(tight))
