"""Primitive objects: demand curves, cost distributions and environments.

Demands are piecewise-linear knot curves in (price, quantity) space.  Gross
value ``V(q)`` is the integral of the inverse demand, which for these curves
is piecewise quadratic and is evaluated in closed form.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Sequence

import numpy as np

from .report import VerificationReport

REGULARITY_GRID_POINTS = 2001


class UndefinedDensityError(ValueError):
    """Raised when the virtual cost is requested where the density vanishes."""


@dataclass(frozen=True)
class PiecewiseLinearCurve:
    """A weakly decreasing demand curve ``D(p)`` given by knots ``(p, q)``.

    The curve is extended to the left of the first knot by its first value and
    must reach zero at its last knot; beyond that it is identically zero.
    """

    knots: tuple[tuple[float, float], ...]
    _x: np.ndarray = field(init=False, repr=False, compare=False)
    _y: np.ndarray = field(init=False, repr=False, compare=False)
    _cum: np.ndarray = field(init=False, repr=False, compare=False)
    _inv: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        knots = tuple((float(x), float(y)) for x, y in self.knots)
        if len(knots) < 2:
            raise ValueError("a curve needs at least 2 knots")
        x = np.array([k[0] for k in knots])
        y = np.array([k[1] for k in knots])
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError("knots must be finite")
        if x[0] < 0 or np.any(y < 0):
            raise ValueError("knots must be nonnegative")
        if np.any(np.diff(x) <= 0):
            raise ValueError("knot prices must be strictly increasing")
        if np.any(np.diff(y) > 0):
            raise ValueError("knot quantities must be weakly decreasing")
        if y[-1] != 0.0:
            raise ValueError("the last knot must have zero quantity")
        object.__setattr__(self, "knots", knots)
        if x[0] > 0:
            x = np.concatenate([[0.0], x])
            y = np.concatenate([[y[0]], y])
        object.__setattr__(self, "_x", x)
        object.__setattr__(self, "_y", y)
        # cumulative integral of D over price at every knot
        cum = np.concatenate([[0.0], np.cumsum(np.diff(x) * (y[:-1] + y[1:]) / 2)])
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "_inv", _inverse_pieces(x, y))

    @classmethod
    def linear(cls, intercept: float, slope: float) -> "PiecewiseLinearCurve":
        """``D(p) = intercept - slope * p`` truncated at zero."""
        return cls(((0.0, intercept), (intercept / slope, 0.0)))

    # --- direct demand -------------------------------------------------
    @property
    def prices(self) -> np.ndarray:
        return self._x.copy()

    @property
    def quantities(self) -> np.ndarray:
        return self._y.copy()

    @property
    def saturation(self) -> float:
        """Quantity demanded at price zero, ``D(0)``."""
        return float(self._y[0])

    @property
    def choke_price(self) -> float:
        """Smallest price at which demand reaches zero (``P(0+)``)."""
        return float(self._x[np.argmax(self._y == 0.0)])

    def demand(self, p):
        return np.interp(p, self._x, self._y)

    def integral(self, a, b):
        """Signed integral of ``D`` over prices from ``a`` to ``b``."""
        return self._antiderivative(b) - self._antiderivative(a)

    def _antiderivative(self, p):
        p = np.asarray(p, dtype=float)
        k = np.clip(np.searchsorted(self._x, p, side="right") - 1, 0, len(self._x) - 1)
        xk = self._x[k]
        yk = self._y[k]
        inside = p <= self._x[-1]
        partial = self._cum[k] + (p - xk) * (yk + self.demand(p)) / 2
        out = np.where(inside, partial, self._cum[-1])
        return out if out.ndim else float(out)

    # --- inverse demand and gross value ---------------------------------
    def _piece(self, q):
        inv = self._inv
        q = np.asarray(q, dtype=float)
        k = np.searchsorted(inv["qhi"], q, side="left")
        return q, np.clip(k, 0, len(inv["qhi"]) - 1)

    def piece_index(self, q):
        """Index into :meth:`inverse_pieces` of the piece containing ``q``."""
        return self._piece(q)[1]

    def inverse(self, q):
        """Inverse demand ``P(q) = sup{p : D(p) >= q}``; zero once ``q >= D(0)``."""
        inv = self._inv
        q, k = self._piece(q)
        out = inv["plo"][k] + inv["slope"][k] * (q - inv["qlo"][k])
        return out if out.ndim else float(out)

    def inverse_slope(self, q):
        q, k = self._piece(q)
        out = self._inv["slope"][k]
        return out if out.ndim else float(out)

    def gross_value(self, q):
        """``V(q)``: integral of the inverse demand from 0 to ``q`` (exact)."""
        inv = self._inv
        q, k = self._piece(q)
        d = q - inv["qlo"][k]
        out = inv["vlo"][k] + inv["plo"][k] * d + 0.5 * inv["slope"][k] * d * d
        return out if out.ndim else float(out)

    def inverse_pieces(self, copy: bool = True) -> dict[str, np.ndarray]:
        """Quantity pieces ``[qlo, qhi]`` on which ``P`` is linear (plus the zero tail)."""
        if not copy:
            return self._inv
        return {k: v.copy() for k, v in self._inv.items()}

    def quantity_breakpoints(self) -> np.ndarray:
        """Quantities at which ``P`` changes slope or jumps."""
        return self._inv["qlo"][1:].copy()

    def has_flat_segments(self) -> bool:
        """True when ``D`` is constant over a positive price range before reaching zero."""
        dy = np.diff(self._y)
        flat = (dy == 0) & (self._y[1:] > 0)
        return bool(np.any(flat))

    def to_knots(self) -> list[list[float]]:
        return [[x, y] for x, y in self.knots]


def _inverse_pieces(x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    qlo, qhi, plo, slope = [], [], [], []
    # walk from the zero end of the curve towards price 0 so quantities increase
    for j in range(len(x) - 2, -1, -1):
        with np.errstate(over="ignore", divide="ignore"):
            s = (x[j] - x[j + 1]) / (y[j] - y[j + 1]) if y[j] > y[j + 1] else -np.inf
        # a drop too steep to represent is treated as a jump in the inverse
        if np.isfinite(s):
            qlo.append(y[j + 1])
            qhi.append(y[j])
            plo.append(x[j + 1])
            slope.append(s)
    qlo = np.array(qlo)
    qhi = np.array(qhi)
    plo = np.array(plo)
    slope = np.array(slope)
    vlo = np.concatenate([[0.0], np.cumsum((qhi - qlo) * (2 * plo + slope * (qhi - qlo)) / 2)])
    # zero-price tail beyond saturation
    return {
        "qlo": np.append(qlo, qhi[-1]),
        "qhi": np.append(qhi, np.inf),
        "plo": np.append(plo, 0.0),
        "slope": np.append(slope, 0.0),
        "vlo": vlo,
    }


# --------------------------------------------------------------------------
# cost distributions
# --------------------------------------------------------------------------

COST_FAMILIES = ("uniform", "power", "piecewise-linear-density")


@dataclass(frozen=True)
class CostModel:
    """Conjectured cost distribution ``F*`` on ``[low, high]``.

    Families:

    * ``uniform``
    * ``power``: ``F(theta) = ((theta - low) / (high - low)) ** exponent``
    * ``piecewise-linear-density``: density linear between ``knots``
      ``[[theta, f], ...]`` spanning the support; it is normalised to unit mass.

    Integrals against ``F`` are computed in the normalised coordinate
    ``t = (theta - low) / (high - low)``.
    """

    family: str
    low: float
    high: float
    params: dict = field(default_factory=dict)
    _pl: dict | None = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.family not in COST_FAMILIES:
            raise ValueError(f"unknown cost family {self.family!r}; expected one of {COST_FAMILIES}")
        object.__setattr__(self, "low", float(self.low))
        object.__setattr__(self, "high", float(self.high))
        if not self.high > self.low:
            raise ValueError("cost support must satisfy high > low")
        params = dict(self.params)
        object.__setattr__(self, "params", params)
        if self.family == "uniform":
            if params:
                raise ValueError("uniform cost family takes no parameters")
        elif self.family == "power":
            if set(params) != {"exponent"}:
                raise ValueError("power cost family needs exactly the 'exponent' parameter")
            if not float(params["exponent"]) > 0:
                raise ValueError("power exponent must be positive")
        else:
            if set(params) != {"knots"}:
                raise ValueError("piecewise-linear-density family needs exactly the 'knots' parameter")
            object.__setattr__(self, "_pl", self._build_density(params["knots"]))

    def _build_density(self, knots) -> dict:
        th = np.array([float(k[0]) for k in knots])
        f = np.array([float(k[1]) for k in knots])
        if len(th) < 2 or np.any(np.diff(th) <= 0):
            raise ValueError("density knots must have strictly increasing theta")
        if th[0] != self.low or th[-1] != self.high:
            raise ValueError("density knots must span exactly [low, high]")
        if np.any(f < 0):
            raise ValueError("density knots must be nonnegative")
        mass = np.sum(np.diff(th) * (f[:-1] + f[1:]) / 2)
        if not mass > 0:
            raise ValueError("density must have positive mass")
        f = f / mass
        t = (th - self.low) / self.width
        # per piece, density in t-units: g(t) = c0 + c1 t ; F(t) = e0 + e1 t + e2 t^2
        dt = np.diff(t)
        g = f * self.width
        c1 = np.diff(g) / dt
        c0 = g[:-1] - c1 * t[:-1]
        F_knots = np.concatenate([[0.0], np.cumsum(dt * (g[:-1] + g[1:]) / 2)])
        e2 = c1 / 2
        e1 = c0
        e0 = F_knots[:-1] - c0 * t[:-1] - e2 * t[:-1] ** 2
        return {"theta": th, "f": f, "t": t, "c0": c0, "c1": c1, "e0": e0, "e1": e1, "e2": e2, "F": F_knots}

    @property
    def width(self) -> float:
        return self.high - self.low

    @property
    def exponent(self) -> float:
        return float(self.params.get("exponent", 1.0))

    def to_t(self, theta):
        return (np.asarray(theta, dtype=float) - self.low) / self.width

    def breakpoints(self) -> np.ndarray:
        """Interior thetas where the density formula changes."""
        if self._pl is None:
            return np.empty(0)
        return self._pl["theta"][1:-1].copy()

    def _pl_piece(self, t):
        return np.clip(np.searchsorted(self._pl["t"], t, side="right") - 1, 0, len(self._pl["c0"]) - 1)

    def cdf(self, theta):
        t = np.clip(self.to_t(theta), 0.0, 1.0)
        if self.family == "uniform":
            out = t
        elif self.family == "power":
            out = t ** self.exponent
        else:
            k = self._pl_piece(t)
            pl = self._pl
            out = pl["e0"][k] + pl["e1"][k] * t + pl["e2"][k] * t * t
        out = np.asarray(out, dtype=float)
        return out if out.ndim else float(out)

    def pdf(self, theta):
        t = self.to_t(theta)
        inside = (t >= 0) & (t <= 1)
        tc = np.clip(t, 0.0, 1.0)
        if self.family == "uniform":
            out = np.ones_like(tc) / self.width
        elif self.family == "power":
            a = self.exponent
            with np.errstate(divide="ignore"):
                out = a * tc ** (a - 1) / self.width
        else:
            k = self._pl_piece(tc)
            out = (self._pl["c0"][k] + self._pl["c1"][k] * tc) / self.width
        out = np.where(inside, out, 0.0)
        return out if out.ndim else float(out)

    def inverse_hazard(self, theta):
        """``F(theta) / f(theta)``, the information-rent markup."""
        theta = np.asarray(theta, dtype=float)
        t = np.clip(self.to_t(theta), 0.0, 1.0)
        if self.family == "uniform":
            out = t * self.width
        elif self.family == "power":
            out = t * self.width / self.exponent
        else:
            F = np.asarray(self.cdf(theta))
            f = np.asarray(self.pdf(theta))
            if np.any((F > 0) & (f <= 0)):
                raise UndefinedDensityError("density vanishes where the cdf is positive")
            out = np.where(F > 0, F / np.where(f > 0, f, 1.0), 0.0)
        out = np.asarray(out, dtype=float)
        return out if out.ndim else float(out)

    def virtual_cost(self, theta):
        """``z(theta) = theta + F(theta) / f(theta)``."""
        out = np.asarray(theta, dtype=float) + self.inverse_hazard(theta)
        return out if out.ndim else float(out)

    # --- exact integrals against F, in t coordinates -------------------
    def moments(self, t0, t1, kmax: int) -> np.ndarray:
        """``M[i, k] = integral of t**k dF`` over ``[t0[i], t1[i]]``.

        Intervals must not straddle a density knot.
        """
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        ks = np.arange(kmax + 1)
        if self.family == "uniform":
            return _power_diff(t0, t1, kmax + 2)[:, 1:] / (ks + 1.0)
        if self.family == "power":
            a = self.exponent
            return a * _power_diff(t0, t1, kmax + 1, a) / (ks + a)
        k = self._pl_piece((t0 + t1) / 2)
        c0 = self._pl["c0"][k][:, None]
        c1 = self._pl["c1"][k][:, None]
        diff = _power_diff(t0, t1, kmax + 3)
        return c0 * diff[:, 1:kmax + 2] / (ks + 1.0) + c1 * diff[:, 2:] / (ks + 2.0)

    def cdf_moments(self, t0, t1, kmax: int) -> np.ndarray:
        """``K[i, k] = integral of t**k F(theta) dtheta`` over ``[t0[i], t1[i]]``."""
        t0 = np.asarray(t0, dtype=float)
        t1 = np.asarray(t1, dtype=float)
        ks = np.arange(kmax + 1)
        w = self.width
        if self.family == "uniform":
            return w * _power_diff(t0, t1, kmax + 3)[:, 2:] / (ks + 2.0)
        if self.family == "power":
            a = self.exponent
            return w * _power_diff(t0, t1, kmax + 1, a + 1.0) / (ks + a + 1.0)
        k = self._pl_piece((t0 + t1) / 2)
        diff = _power_diff(t0, t1, kmax + 4)
        out = 0.0
        for j, name in enumerate(("e0", "e1", "e2")):
            e = self._pl[name][k][:, None]
            out = out + e * diff[:, j + 1:j + kmax + 2] / (ks + j + 1.0)
        return w * out

    def to_params(self) -> dict:
        if self.family == "piecewise-linear-density":
            return {"knots": [[float(a), float(b)] for a, b in self.params["knots"]]}
        return {k: float(v) for k, v in self.params.items()}


def _power_diff(t0: np.ndarray, t1: np.ndarray, n: int, base: float = 0.0) -> np.ndarray:
    """Columns ``t1**(base + j) - t0**(base + j)`` for ``j < n``."""
    p0 = np.empty((t0.size, n))
    p1 = np.empty((t1.size, n))
    p0[:, 0] = t0**base if base else 1.0
    p1[:, 0] = t1**base if base else 1.0
    for j in range(1, n):
        p0[:, j] = p0[:, j - 1] * t0
        p1[:, j] = p1[:, j - 1] * t1
    return p1 - p0


# --------------------------------------------------------------------------
# environment
# --------------------------------------------------------------------------

LOWEST = 0
CONJECTURED = 1


@dataclass(frozen=True)
class Environment:
    """The full set of primitives.

    Admissible demands are stored as a finite list; index 0 is the lowest
    demand, index 1 the conjectured demand, then any extra demands.
    """

    cost: CostModel
    conjectured_demand: PiecewiseLinearCurve
    lowest_demand: PiecewiseLinearCurve
    extra_demands: tuple[PiecewiseLinearCurve, ...] = ()
    quantity_cap: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "extra_demands", tuple(self.extra_demands))
        object.__setattr__(self, "quantity_cap", float(self.quantity_cap))

    @property
    def theta_low(self) -> float:
        return self.cost.low

    @property
    def theta_high(self) -> float:
        return self.cost.high

    @property
    def demands(self) -> tuple[PiecewiseLinearCurve, ...]:
        return (self.lowest_demand, self.conjectured_demand, *self.extra_demands)

    def grid(self, n: int = 1001) -> np.ndarray:
        if n < 2:
            raise ValueError("a grid needs at least 2 points")
        return np.linspace(self.theta_low, self.theta_high, int(n))

    def replace(self, **changes) -> "Environment":
        kwargs = dict(
            cost=self.cost,
            conjectured_demand=self.conjectured_demand,
            lowest_demand=self.lowest_demand,
            extra_demands=self.extra_demands,
            quantity_cap=self.quantity_cap,
        )
        kwargs.update(changes)
        return Environment(**kwargs)


def eval_demand(curve: PiecewiseLinearCurve, p):
    return curve.demand(p)


def eval_inverse_demand(curve: PiecewiseLinearCurve, q):
    return curve.inverse(q)


def gross_value(curve: PiecewiseLinearCurve, q):
    return curve.gross_value(q)


def virtual_cost(cost: CostModel, theta):
    return cost.virtual_cost(theta)


def efficient_floor(env: Environment) -> float:
    """``q_l = D_low(theta_high)``: efficient output at the lowest demand and highest cost."""
    return float(env.lowest_demand.demand(env.theta_high))


def max_surplus(curve: PiecewiseLinearCurve, theta):
    """Total surplus at the efficient quantity, ``V(D(theta)) - theta D(theta)``."""
    q = curve.demand(theta)
    return curve.gross_value(q) - np.asarray(theta) * q


def deadweight_loss(env: Environment, theta, q):
    """Surplus lost under the lowest demand when ``q`` is traded instead of ``D_low(theta)``.

    Computed as the signed-limit integral of ``D_low(y) - q`` from ``theta`` to
    ``P_low(q)``.
    """
    low = env.lowest_demand
    theta = np.asarray(theta, dtype=float)
    q = np.asarray(q, dtype=float)
    upper = low.inverse(q)
    out = low.integral(theta, upper) - q * (upper - theta)
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# validation
# --------------------------------------------------------------------------

def _curve_gap(upper: PiecewiseLinearCurve, lower: PiecewiseLinearCurve) -> tuple[float, float]:
    """Minimum of ``upper - lower`` over all prices (exact for knot curves)."""
    p = np.union1d(upper.prices, lower.prices)
    gap = upper.demand(p) - lower.demand(p)
    i = int(np.argmin(gap))
    return float(gap[i]), float(p[i])


def validate_environment(env: Environment, grid_points: int = REGULARITY_GRID_POINTS) -> VerificationReport:
    """Check every modelling assumption; never raises on invalid data."""
    checks = []
    lo, hi = env.theta_low, env.theta_high
    checks.append(VerificationReport(
        "theta_low_positive", lo > 0, lo,
        message="" if lo > 0 else "theta_low must be positive"))

    grid = np.linspace(lo, hi, grid_points)
    F = np.asarray(env.cost.cdf(grid))
    cdf_err = max(abs(F[0]), abs(F[-1] - 1.0))
    checks.append(VerificationReport(
        "cdf_normalized", cdf_err <= 1e-12, -cdf_err,
        message="" if cdf_err <= 1e-12 else "cdf must equal 0 at theta_low and 1 at theta_high"))

    f = np.asarray(env.cost.pdf(grid[1:-1]))
    fmin = float(f.min()) if f.size else float("inf")
    checks.append(VerificationReport(
        "density_positive", fmin > 0, fmin,
        message="" if fmin > 0 else "density must be positive on the interior of the support"))

    try:
        z = np.asarray(env.cost.virtual_cost(grid))
        dz = np.diff(z)
        regular = bool(np.all(dz > 0))
        checks.append(VerificationReport(
            "regularity", regular, float(dz.min()),
            binding=[float(t) for t in grid[:-1][dz <= 0]][:20],
            message="" if regular else "virtual cost must be increasing"))
    except UndefinedDensityError as exc:
        checks.append(VerificationReport("regularity", False, message=str(exc)))

    low = env.lowest_demand
    gaps = []
    for i, d in enumerate(env.demands[1:], start=1):
        gap, where = _curve_gap(d, low)
        gaps.append((gap, where, i))
    worst = min(gaps)
    ok = worst[0] >= 0
    checks.append(VerificationReport(
        "pointwise_minimum", ok, worst[0],
        binding=[worst[1]] if not ok else [],
        message="" if ok else f"demand {worst[2]} lies below the lowest demand at p={worst[1]:g}"))

    gft = low.choke_price - hi
    checks.append(VerificationReport(
        "gains_from_trade", gft > 0, gft,
        message="" if gft > 0 else "theta_high must be below the lowest demand's choke price"))

    cap_slack = min(env.quantity_cap - float(d.demand(lo)) for d in env.demands)
    checks.append(VerificationReport(
        "quantity_cap", cap_slack > 0, cap_slack,
        message="" if cap_slack > 0 else "quantity_cap must exceed every demand at theta_low"))

    flat = [i for i, d in enumerate(env.demands) if d.has_flat_segments()]
    checks.append(VerificationReport(
        "strict_concavity", True, float("nan"),
        message=f"demands {flat} have flat segments; gross value is only weakly concave there" if flat else "",
        details={"flat_demands": flat}))

    return VerificationReport.combine("environment", checks)


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------

ENVIRONMENT_KEYS = (
    "theta_low",
    "theta_high",
    "cost_family",
    "cost_params",
    "conjectured_demand_knots",
    "lowest_demand_knots",
    "extra_demand_knots",
    "quantity_cap",
)
_REQUIRED_KEYS = set(ENVIRONMENT_KEYS) - {"cost_params", "extra_demand_knots"}


class ScenarioError(ValueError):
    """Malformed scenario data (unknown or missing keys, bad values)."""


def environment_from_dict(data: dict[str, Any]) -> Environment:
    if not isinstance(data, dict):
        raise ScenarioError("environment block must be an object")
    unknown = set(data) - set(ENVIRONMENT_KEYS)
    if unknown:
        raise ScenarioError(f"unknown environment key: {sorted(unknown)[0]!r}")
    missing = _REQUIRED_KEYS - set(data)
    if missing:
        raise ScenarioError(f"missing environment key: {sorted(missing)[0]!r}")
    try:
        cost = CostModel(data["cost_family"], data["theta_low"], data["theta_high"], data.get("cost_params") or {})
        return Environment(
            cost=cost,
            conjectured_demand=PiecewiseLinearCurve(_knots(data["conjectured_demand_knots"])),
            lowest_demand=PiecewiseLinearCurve(_knots(data["lowest_demand_knots"])),
            extra_demands=tuple(PiecewiseLinearCurve(_knots(k)) for k in data.get("extra_demand_knots", [])),
            quantity_cap=data["quantity_cap"],
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc


def _knots(raw) -> tuple[tuple[float, float], ...]:
    return tuple((float(a), float(b)) for a, b in raw)


def environment_to_dict(env: Environment) -> dict[str, Any]:
    return {
        "theta_low": env.theta_low,
        "theta_high": env.theta_high,
        "cost_family": env.cost.family,
        "cost_params": env.cost.to_params(),
        "conjectured_demand_knots": env.conjectured_demand.to_knots(),
        "lowest_demand_knots": env.lowest_demand.to_knots(),
        "extra_demand_knots": [d.to_knots() for d in env.extra_demands],
        "quantity_cap": env.quantity_cap,
    }


FIXTURES = ("S1", "S2", "S3")


def fixture_path(name: str):
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; expected one of {FIXTURES}")
    return resources.files("robust_procurement") / "scenarios" / f"{name}.json"


def load_fixture(name: str) -> Environment:
    """The shipped scenarios S1-S3 (uniform costs on [1, 2], ``D* = 3 - p``)."""
    data = json.loads(fixture_path(name).read_text())
    return environment_from_dict(data["environment"])
