"""
Price caps against quantity regulation
======================================

Both regulations secure the same guarantee.  Which one does better when the
buyer's estimates are right depends on how demand uncertainty is shaped.
"""

from robust_procurement import bm_with_price_cap, compare_regulation, load_fixture, solve_ropt
from robust_procurement.mechanism import PiecewiseLinearCurve

# The capped price schedule depends on the cost distribution only.
env = load_fixture("S1")
reg = bm_with_price_cap(env, 11)
print("prices:", [round(float(p), 2) for p in reg.prices])

for name in ("S1", "S2", "S3"):
    env = load_fixture(name)
    rep = compare_regulation(env, solve_ropt(env))
    print(f"\n{name}")
    print(rep.table())

# Move the lowest demand of S2 toward the expected demand: the advantage of
# quantity regulation fades and vanishes when there is no uncertainty left.
base = load_fixture("S2")
print("\nmix  quantity    price       winner")
for t in (0.0, 0.25, 0.5, 0.75, 1.0):
    xs = sorted(set(base.lowest_demand.prices) | set(base.conjectured_demand.prices))
    ys = [(1 - t) * base.lowest_demand.demand(x) + t * base.conjectured_demand.demand(x) for x in xs]
    ys[-1] = 0.0
    env = base.replace(lowest_demand=PiecewiseLinearCurve(tuple(zip(xs, ys))))
    rep = compare_regulation(env, solve_ropt(env))
    print(f"{t:4.2f}  {rep.quantity_welfare:.6f}  {rep.price_welfare:.6f}  {rep.winner}")
