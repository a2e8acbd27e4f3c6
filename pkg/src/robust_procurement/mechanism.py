"""Quantity mechanisms, price regulations, rents and welfare.

Schedules live on an ordered cost grid and are interpolated linearly between
grid points.  Rents follow from the envelope formula and transfers from
rents, so neither is stored.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .integrate import compose, tail_integrals, virtual_surplus
from .model import CONJECTURED, LOWEST, CostModel, Environment, PiecewiseLinearCurve, efficient_floor

DEFAULT_GRID_POINTS = 1001
MONOTONE_TOL = 1e-12
WEIGHT_TOL = 1e-9


def _frozen_array(x) -> np.ndarray:
    a = np.array(x, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuantitySchedule:
    """Weakly decreasing quantities ``q(theta_i)`` on an increasing cost grid."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = _frozen_array(self.grid)
        values = _frozen_array(self.values)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be a 1-d array with at least 2 points")
        if values.shape != grid.shape:
            raise ValueError("values must match the grid")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("quantities must be finite and nonnegative")
        if np.any(np.diff(values) > MONOTONE_TOL):
            raise ValueError("quantities must be weakly decreasing in cost")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.grid.size

    def __call__(self, theta):
        return np.interp(theta, self.grid, self.values)

    def tail_integrals(self) -> np.ndarray:
        """``integral of q from theta_i to the top cost`` at every grid point."""
        return tail_integrals(self.grid, self.values)

    def with_values(self, values) -> "QuantitySchedule":
        return QuantitySchedule(self.grid, values)


@dataclass(frozen=True, eq=False)
class QuantityMechanism:
    """A quantity schedule together with the rent left to the highest cost."""

    schedule: QuantitySchedule
    top_rent: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "top_rent", float(self.top_rent))
        if not self.top_rent >= 0:
            raise ValueError("top_rent must be nonnegative")

    @classmethod
    def from_values(cls, grid, values, top_rent: float = 0.0) -> "QuantityMechanism":
        return cls(QuantitySchedule(grid, values), top_rent)

    @property
    def grid(self) -> np.ndarray:
        return self.schedule.grid

    @property
    def quantities(self) -> np.ndarray:
        return self.schedule.values

    @property
    def rents(self) -> np.ndarray:
        return rent_schedule(self)

    @property
    def transfers(self) -> np.ndarray:
        return transfers(self)


def rent_schedule(mech: QuantityMechanism) -> np.ndarray:
    """Envelope rents ``u(theta_i) = u(top) + integral of q over [theta_i, top]``."""
    return mech.top_rent + mech.schedule.tail_integrals()


def transfers(mech: QuantityMechanism) -> np.ndarray:
    return rent_schedule(mech) + mech.grid * mech.quantities


def ic_violation(mech: QuantityMechanism) -> float:
    """Largest gain from misreporting on the grid (nonpositive for IC mechanisms)."""
    u = rent_schedule(mech)
    th = mech.grid
    q = mech.quantities
    # gain for type i from reporting j: u_j + (theta_j - theta_i) q_j - u_i
    gain = u[None, :] + (th[None, :] - th[:, None]) * q[None, :] - u[:, None]
    return float(gain.max())


# --------------------------------------------------------------------------
# cost weights
# --------------------------------------------------------------------------

def cost_weights(cost: CostModel, grid) -> np.ndarray:
    """Probability of the cost cell around each grid point (midpoint cells)."""
    grid = np.asarray(grid, dtype=float)
    edges = np.concatenate([[grid[0]], (grid[:-1] + grid[1:]) / 2, [grid[-1]]])
    F = np.asarray(cost.cdf(edges))
    return np.diff(F)


def dirac_weights(grid, theta: float) -> np.ndarray:
    """One-hot weights at the grid point closest to ``theta``."""
    grid = np.asarray(grid, dtype=float)
    w = np.zeros(grid.size)
    w[int(np.argmin(np.abs(grid - theta)))] = 1.0
    return w


def _check_weights(weights, n: int) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if w.shape != (n,):
        raise ValueError("weights must have one entry per grid point")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if abs(w.sum() - 1.0) > WEIGHT_TOL:
        raise ValueError(f"weights sum to {w.sum():.12g}, not 1")
    return w


# --------------------------------------------------------------------------
# welfare of quantity mechanisms
# --------------------------------------------------------------------------

def ex_post_welfare(mech: QuantityMechanism, demand: PiecewiseLinearCurve) -> np.ndarray:
    """Buyer's welfare at each grid cost: ``V(q) - theta q - u``."""
    q = mech.quantities
    return demand.gross_value(q) - mech.grid * q - rent_schedule(mech)


def welfare(mech: QuantityMechanism, demand: PiecewiseLinearCurve, cost_grid_weights) -> float:
    """Expected welfare under a demand and a discrete cost distribution on the grid."""
    w = _check_weights(cost_grid_weights, len(mech.schedule))
    return float(np.dot(w, ex_post_welfare(mech, demand)))


def conjectured_welfare(mech: QuantityMechanism, env: Environment) -> float:
    """Expected welfare under the conjectured demand and cost distribution.

    Integrated exactly against the continuous cost distribution, treating the
    schedule as its piecewise-linear interpolant.
    """
    return virtual_surplus(env.cost, env.conjectured_demand, mech.grid, mech.quantities) - mech.top_rent


def constant_mechanism(env: Environment, grid_points: int = DEFAULT_GRID_POINTS) -> QuantityMechanism:
    """Procure the floor quantity at every cost and pay ``theta_high * q_l``."""
    grid = env.grid(grid_points)
    return QuantityMechanism.from_values(grid, np.full(grid.size, efficient_floor(env)))


# --------------------------------------------------------------------------
# price regulations
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PriceRegulation:
    """Cost-contingent prices plus, per demand index, the rent at the top cost.

    Demand indices refer to ``Environment.demands``; missing entries mean a
    top rent of zero.  Prices are not required to be monotone here so that a
    candidate regulation can be checked and rejected explicitly.
    """

    grid: np.ndarray
    prices: np.ndarray
    top_rents: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        grid = _frozen_array(self.grid)
        prices = _frozen_array(self.prices)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing with at least 2 points")
        if prices.shape != grid.shape:
            raise ValueError("prices must match the grid")
        if np.any(prices < 0) or not np.all(np.isfinite(prices)):
            raise ValueError("prices must be finite and nonnegative")
        rents = {int(k): float(v) for k, v in dict(self.top_rents).items()}
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "top_rents", rents)

    def top_rent(self, demand_index: int) -> float:
        return self.top_rents.get(int(demand_index), 0.0)

    def with_top_rents(self, top_rents: Mapping[int, float]) -> "PriceRegulation":
        merged = dict(self.top_rents)
        merged.update(top_rents)
        return PriceRegulation(self.grid, self.prices, merged)


def price_quantities(reg: PriceRegulation, env: Environment, demand_index: int) -> np.ndarray:
    return env.demands[demand_index].demand(reg.prices)


def price_rents(reg: PriceRegulation, env: Environment, demand_index: int) -> np.ndarray:
    """``u(theta_i, D) = u(top, D) + integral of D(p(y)) over [theta_i, top]``."""
    th, q = compose(env.demands[demand_index], reg.grid, reg.prices)
    tails = tail_integrals(th, q)
    idx = np.searchsorted(th, reg.grid)
    return reg.top_rent(demand_index) + tails[idx]


def price_ex_post_welfare(reg: PriceRegulation, env: Environment, demand_index: int) -> np.ndarray:
    demand = env.demands[demand_index]
    q = demand.demand(reg.prices)
    return demand.gross_value(q) - reg.grid * q - price_rents(reg, env, demand_index)


def price_welfare(reg: PriceRegulation, env: Environment, demand_index: int, cost_grid_weights) -> float:
    """Expected consumer welfare for one demand and a discrete cost distribution."""
    w = _check_weights(cost_grid_weights, reg.grid.size)
    return float(np.dot(w, price_ex_post_welfare(reg, env, demand_index)))


def price_conjectured_welfare(reg: PriceRegulation, env: Environment) -> float:
    """Welfare under the conjectured demand and costs, integrated exactly."""
    th, q = compose(env.conjectured_demand, reg.grid, reg.prices)
    return virtual_surplus(env.cost, env.conjectured_demand, th, q) - reg.top_rent(CONJECTURED)


def price_ic_violation(reg: PriceRegulation, env: Environment, demand_index: int) -> float:
    """Largest ex-post gain from misreporting under one demand."""
    u = price_rents(reg, env, demand_index)
    q = price_quantities(reg, env, demand_index)
    th = reg.grid
    gain = u[None, :] + (th[None, :] - th[:, None]) * q[None, :] - u[:, None]
    return float(gain.max())


# --------------------------------------------------------------------------
# serialization
# --------------------------------------------------------------------------

def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def write_csv(columns: Mapping[str, np.ndarray], stream=None) -> str:
    """Comma-separated table with a header row, LF line endings, 17 significant digits."""
    names = list(columns)
    data = [np.asarray(columns[k], dtype=float) for k in names]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for row in zip(*data):
        writer.writerow([format_float(x) for x in row])
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def read_csv(text: str) -> dict[str, np.ndarray]:
    rows = list(csv.reader(io.StringIO(text)))
    names = rows[0]
    body = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(names))
    return {name: body[:, j] for j, name in enumerate(names)}


def mechanism_to_csv(mech: QuantityMechanism, stream=None) -> str:
    return write_csv({
        "theta": mech.grid,
        "quantity": mech.quantities,
        "rent": rent_schedule(mech),
        "transfer": transfers(mech),
    }, stream)


def mechanism_from_csv(text: str) -> QuantityMechanism:
    cols = read_csv(text)
    top = float(cols["rent"][-1])
    return QuantityMechanism.from_values(cols["theta"], cols["quantity"], top)


def mechanism_to_dict(mech: QuantityMechanism) -> dict:
    return {
        "grid": [float(x) for x in mech.grid],
        "quantities": [float(x) for x in mech.quantities],
        "top_rent": mech.top_rent,
    }


def mechanism_from_dict(data: dict) -> QuantityMechanism:
    return QuantityMechanism.from_values(data["grid"], data["quantities"], data.get("top_rent", 0.0))


def regulation_to_dict(reg: PriceRegulation) -> dict:
    return {
        "grid": [float(x) for x in reg.grid],
        "prices": [float(x) for x in reg.prices],
        "top_rents": {str(k): v for k, v in sorted(reg.top_rents.items())},
    }


def regulation_from_dict(data: dict) -> PriceRegulation:
    return PriceRegulation(data["grid"], data["prices"], {int(k): v for k, v in data.get("top_rents", {}).items()})


__all__ = [
    "LOWEST",
    "CONJECTURED",
    "QuantitySchedule",
    "QuantityMechanism",
    "PriceRegulation",
    "rent_schedule",
    "transfers",
    "ic_violation",
    "cost_weights",
    "dirac_weights",
    "ex_post_welfare",
    "welfare",
    "conjectured_welfare",
    "constant_mechanism",
    "price_quantities",
    "price_rents",
    "price_ex_post_welfare",
    "price_welfare",
    "price_conjectured_welfare",
    "price_ic_violation",
    "write_csv",
    "read_csv",
    "mechanism_to_csv",
    "mechanism_from_csv",
    "mechanism_to_dict",
    "mechanism_from_dict",
    "regulation_to_dict",
    "regulation_from_dict",
]
