import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from robust_procurement.model import (
    CostModel,
    Environment,
    PiecewiseLinearCurve,
    ScenarioError,
    UndefinedDensityError,
    deadweight_loss,
    efficient_floor,
    environment_from_dict,
    environment_to_dict,
    eval_demand,
    eval_inverse_demand,
    gross_value,
    load_fixture,
    validate_environment,
    virtual_cost,
)

D_STAR = PiecewiseLinearCurve(((0.0, 3.0), (3.0, 0.0)))


# --------------------------------------------------------------------------
# curves
# --------------------------------------------------------------------------

def test_demand_examples(envs):
    assert eval_demand(D_STAR, 2.0) == pytest.approx(1.0, abs=1e-15)
    assert eval_demand(envs["S3"].lowest_demand, 1.0) == pytest.approx(1.2, abs=1e-15)
    for curve in (D_STAR, envs["S2"].lowest_demand, envs["S3"].lowest_demand):
        assert eval_demand(curve, curve.choke_price) == 0.0
        assert eval_demand(curve, curve.choke_price + 5.0) == 0.0


def test_inverse_demand_examples(envs):
    assert eval_inverse_demand(D_STAR, 1.0) == pytest.approx(2.0, abs=1e-15)
    assert eval_inverse_demand(envs["S3"].lowest_demand, 2.0) == 0.0
    assert eval_inverse_demand(envs["S2"].lowest_demand, 2.0) == pytest.approx(1.0, abs=1e-15)


def test_gross_value_examples(envs):
    assert gross_value(D_STAR, 1.0) == pytest.approx(2.5, abs=1e-15)
    assert gross_value(envs["S2"].lowest_demand, 0.5) == pytest.approx(13 / 12, abs=1e-15)
    assert gross_value(envs["S3"].lowest_demand, 0.0) == 0.0


def test_gross_value_matches_quadrature(envs):
    # independent check: integrate the inverse demand numerically
    curve = envs["S3"].lowest_demand
    for q in (0.3, 1.0, 1.2, 1.4, 2.5):
        expected, _ = integrate.quad(lambda s: curve.inverse(s), 0, q, points=[1.0, 1.4], limit=200)
        assert gross_value(curve, q) == pytest.approx(expected, abs=1e-12)


def test_curve_rejects_bad_knots():
    with pytest.raises(ValueError):
        PiecewiseLinearCurve(((0.0, 1.0),))
    with pytest.raises(ValueError):
        PiecewiseLinearCurve(((0.0, 1.0), (0.0, 0.0)))
    with pytest.raises(ValueError):
        PiecewiseLinearCurve(((0.0, 1.0), (1.0, 2.0), (2.0, 0.0)))
    with pytest.raises(ValueError):
        PiecewiseLinearCurve(((0.0, 1.0), (1.0, 0.5)))


def test_curve_constant_extension_left():
    curve = PiecewiseLinearCurve(((1.0, 2.0), (3.0, 0.0)))
    assert curve.demand(0.0) == 2.0
    assert curve.demand(0.5) == 2.0
    assert curve.inverse(1.0) == pytest.approx(2.0)
    # flat top of the inverse: V(q) = 1 * q + area of the ramp
    assert curve.gross_value(2.0) == pytest.approx(1.0 * 2.0 + 2.0)


def test_flat_segments_flagged():
    curve = PiecewiseLinearCurve(((0.0, 2.0), (1.0, 1.0), (2.0, 1.0), (3.0, 0.0)))
    assert curve.has_flat_segments()
    assert not D_STAR.has_flat_segments()
    # inverse picks the largest price at which the flat level is absorbed
    assert curve.inverse(1.0) == pytest.approx(2.0)


@st.composite
def curves(draw):
    k = draw(st.integers(1, 4))
    xs = sorted(draw(st.lists(st.floats(0.05, 5.0), min_size=k, max_size=k, unique=True)))
    ys = sorted(draw(st.lists(st.floats(0.0, 4.0), min_size=k, max_size=k)), reverse=True)
    top = draw(st.floats(0.1, 5.0))
    knots = [(0.0, top + ys[0])] + list(zip(xs, ys))
    knots.append((xs[-1] + draw(st.floats(0.1, 2.0)), 0.0))
    return PiecewiseLinearCurve(tuple(knots))


@settings(max_examples=200, deadline=None)
@given(curves())
def test_gross_value_increasing_and_concave(curve):
    q = np.linspace(0.0, curve.saturation * 1.2, 301)
    v = curve.gross_value(q)
    dv = np.diff(v)
    assert np.all(dv >= -1e-12)
    assert np.all(np.diff(dv) <= 1e-10)


@settings(max_examples=200, deadline=None)
@given(curves(), st.floats(0.0, 1.0))
def test_inverse_of_demand_on_strict_region(curve, frac):
    x, y = curve.prices, curve.quantities
    strict = np.nonzero(np.diff(y) < 0)[0]
    i = strict[0] if strict.size else 0
    p = x[i] + frac * (x[i + 1] - x[i])
    # interior of a strictly decreasing piece
    p = min(max(p, x[i] + 1e-9), x[i + 1] - 1e-9)
    assert curve.inverse(curve.demand(p)) == pytest.approx(p, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(curves(), st.floats(0.0, 6.0), st.floats(0.0, 6.0), st.floats(0.0, 6.0))
def test_integral_is_additive(curve, a, b, c):
    assert curve.integral(a, c) == pytest.approx(curve.integral(a, b) + curve.integral(b, c), abs=1e-10)


# --------------------------------------------------------------------------
# cost models
# --------------------------------------------------------------------------

COSTS = [
    CostModel("uniform", 1.0, 2.0),
    CostModel("power", 0.5, 1.7, {"exponent": 2.5}),
    CostModel("power", 1.0, 3.0, {"exponent": 0.7}),
    CostModel("piecewise-linear-density", 1.0, 2.0, {"knots": [[1.0, 1.0], [1.4, 2.0], [2.0, 3.0]]}),
]


def test_virtual_cost_examples():
    u = COSTS[0]
    assert virtual_cost(u, 1.5) == pytest.approx(2.0, abs=1e-15)
    assert virtual_cost(u, 2.0) == pytest.approx(3.0, abs=1e-15)
    for cost in COSTS:
        assert virtual_cost(cost, cost.low) == pytest.approx(cost.low, abs=1e-15)


@pytest.mark.parametrize("cost", COSTS, ids=lambda c: c.family)
def test_cost_distribution_is_normalised(cost):
    assert cost.cdf(cost.low) == pytest.approx(0.0, abs=1e-15)
    assert cost.cdf(cost.high) == pytest.approx(1.0, abs=1e-14)
    total, _ = integrate.quad(cost.pdf, cost.low, cost.high, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)
    th = np.linspace(cost.low, cost.high, 401)
    assert np.all(np.asarray(cost.pdf(th[1:-1])) > 0)
    z = np.asarray(cost.virtual_cost(th))
    assert np.all(z[1:] > th[1:])
    assert np.all(np.diff(z) > 0)


@pytest.mark.parametrize("cost", COSTS, ids=lambda c: c.family)
def test_closed_form_moments_match_quadrature(cost):
    # intervals stay within one density piece (knot at t = 0.4)
    t0, t1 = np.array([0.0, 0.13, 0.4, 0.7]), np.array([0.13, 0.4, 0.7, 1.0])
    M = cost.moments(t0, t1, 2)
    K = cost.cdf_moments(t0, t1, 1)
    w = cost.width
    for j in range(t0.size):
        for k in range(3):
            ref, _ = integrate.quad(lambda t: t ** k * cost.pdf(cost.low + w * t) * w, t0[j], t1[j], limit=200, epsabs=1e-14, epsrel=1e-13)
            assert M[j, k] == pytest.approx(ref, abs=1e-12)
        for k in range(2):
            ref, _ = integrate.quad(lambda t: t ** k * cost.cdf(cost.low + w * t) * w, t0[j], t1[j], limit=200, epsabs=1e-14, epsrel=1e-13)
            assert K[j, k] == pytest.approx(ref, abs=1e-12)


def test_undefined_density_raises():
    cost = CostModel("piecewise-linear-density", 1.0, 2.0, {"knots": [[1.0, 1.0], [1.5, 0.0], [2.0, 1.0]]})
    with pytest.raises(UndefinedDensityError):
        virtual_cost(cost, 1.5)


def test_bad_cost_parameters():
    with pytest.raises(ValueError):
        CostModel("uniform", 2.0, 1.0)
    with pytest.raises(ValueError):
        CostModel("power", 1.0, 2.0, {})
    with pytest.raises(ValueError):
        CostModel("triangular", 1.0, 2.0)


# --------------------------------------------------------------------------
# environment quantities
# --------------------------------------------------------------------------

def test_efficient_floor(envs):
    assert efficient_floor(envs["S1"]) == 1.0
    assert efficient_floor(envs["S2"]) == pytest.approx(0.5, abs=1e-15)
    assert efficient_floor(envs["S3"]) == pytest.approx(1.0, abs=1e-15)


def test_deadweight_loss_examples(envs):
    assert deadweight_loss(envs["S3"], 1.0, 2.0) == pytest.approx(0.7, abs=1e-14)
    assert deadweight_loss(envs["S1"], 2.0, 1.0) == pytest.approx(0.0, abs=1e-15)
    for env in envs.values():
        th = np.linspace(env.theta_low, env.theta_high, 11)
        assert np.allclose(deadweight_loss(env, th, env.lowest_demand.demand(th)), 0.0, atol=1e-14)


@settings(max_examples=300, deadline=None)
@given(st.sampled_from(["S1", "S2", "S3"]), st.floats(1.0, 2.0), st.floats(0.0, 4.0))
def test_deadweight_loss_nonnegative(name, theta, q):
    env = load_fixture(name)
    assert deadweight_loss(env, theta, q) >= -1e-14


def test_deadweight_loss_matches_quadrature(envs):
    env = envs["S3"]
    low = env.lowest_demand
    for theta, q in ((1.0, 2.0), (1.5, 0.4), (1.2, 1.3), (1.9, 1.0)):
        upper = low.inverse(q)
        ref, _ = integrate.quad(lambda y: low.demand(y) - q, theta, upper, points=[2.0], limit=200)
        assert deadweight_loss(env, theta, q) == pytest.approx(ref, abs=1e-12)


# --------------------------------------------------------------------------
# validation and scenario files
# --------------------------------------------------------------------------

def test_fixtures_validate(envs):
    for env in envs.values():
        report = validate_environment(env)
        assert report.passed, report.summary()


def test_lowest_demand_must_be_minimum(envs):
    env = envs["S1"].replace(lowest_demand=PiecewiseLinearCurve.linear(3.2, 1.0))
    report = validate_environment(env)
    assert not report.passed
    assert not report["pointwise_minimum"].passed


def test_theta_low_must_be_positive():
    env = Environment(CostModel("uniform", 0.0, 1.0), D_STAR, D_STAR)
    report = validate_environment(env)
    assert not report["theta_low_positive"].passed
    assert "theta_low must be positive" in report["theta_low_positive"].message


def test_gains_from_trade_and_cap(envs):
    small = PiecewiseLinearCurve.linear(1.5, 1.0)
    env = Environment(CostModel("uniform", 1.0, 2.0), small, small)
    assert not validate_environment(env)["gains_from_trade"].passed
    env = envs["S1"].replace(quantity_cap=1.5)
    assert not validate_environment(env)["quantity_cap"].passed


def test_irregular_cost_fails_validation():
    cost = CostModel("piecewise-linear-density", 1.0, 2.0, {"knots": [[1.0, 1.0], [1.5, 1.0], [1.51, 50.0], [2.0, 50.0]]})
    env = Environment(cost, D_STAR, D_STAR)
    assert not validate_environment(env)["regularity"].passed


def test_environment_round_trip(envs):
    for env in envs.values():
        data = environment_to_dict(env)
        again = environment_to_dict(environment_from_dict(json.loads(json.dumps(data))))
        assert again == data


def test_unknown_and_missing_keys(envs):
    data = environment_to_dict(envs["S1"])
    with pytest.raises(ScenarioError, match="bogus"):
        environment_from_dict({**data, "bogus": 1})
    del data["theta_high"]
    with pytest.raises(ScenarioError, match="theta_high"):
        environment_from_dict(data)
