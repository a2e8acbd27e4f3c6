import numpy as np
import pytest

from robust_procurement.guarantee import guarantee, max_guarantee, shortlist_check
from robust_procurement.mechanism import QuantityMechanism, QuantitySchedule, conjectured_welfare, constant_mechanism
from robust_procurement.model import LOWEST, efficient_floor, load_fixture, validate_environment
from robust_procurement.oracle import (
    AdversaryGrid,
    SamplerStarvationError,
    brute_force_guarantee,
    brute_force_price_guarantee,
    finite_difference_welfare_check,
    monotonicity_probe,
    random_environment,
    random_feasible_schedules,
    random_schedules,
    robust_feasible,
    sorted_uniform_schedules,
)
from robust_procurement.regulation import bm_with_price_cap
from robust_procurement.solver import baron_myerson, bm_with_floor


def test_brute_force_examples(envs):
    env = envs["S1"]
    mech = constant_mechanism(env, 101)
    value, k, dist = brute_force_guarantee(mech, env, AdversaryGrid.full(env, mech.grid), full=True)
    assert value == pytest.approx(0.5, abs=1e-12)
    env = envs["S3"]
    mech = bm_with_floor(env, 101)
    value, k, dist = brute_force_guarantee(mech, env, AdversaryGrid.full(env, mech.grid), full=True)
    assert value == pytest.approx(-0.35, abs=1e-9)
    assert k == LOWEST and dist == {1.0: 1.0}


def test_brute_force_matches_profile_off_grid(envs):
    # atoms between grid nodes exercise the refined rent integrals
    env = envs["S2"]
    mech = bm_with_floor(env, 11)
    atoms = np.linspace(1, 2, 97)
    value = brute_force_guarantee(mech, env, AdversaryGrid.full(env, atoms))
    fine = QuantityMechanism.from_values(atoms, mech.schedule(atoms))
    # the schedule is linear between its nodes, so a finer grid describes the same mechanism
    assert value == pytest.approx(guarantee(fine, env), abs=1e-12)


def test_adversary_grid_validation(envs):
    with pytest.raises(ValueError):
        AdversaryGrid((), (0,))
    with pytest.raises(ValueError):
        AdversaryGrid((1.0,), (0,), mixture_depth=0)
    with pytest.raises(ValueError):
        AdversaryGrid((0.5,)).check(envs["S1"])
    with pytest.raises(ValueError):
        AdversaryGrid((1.0,), (5,)).check(envs["S1"])


@pytest.mark.parametrize("name", ["S1", "S2", "S3"])
def test_mixtures_never_beat_diracs(name):
    env = load_fixture(name)
    atoms = env.grid(21)
    shallow = AdversaryGrid.full(env, atoms, 1)
    deep = AdversaryGrid.full(env, atoms, 3)
    for sched in random_schedules(env, 30, seed=2, grid_points=21):
        mech = QuantityMechanism(sched, 0.0)
        one = brute_force_guarantee(mech, env, shallow, full=True)
        three = brute_force_guarantee(mech, env, deep)
        assert three == pytest.approx(one[0], abs=1e-9)
        assert one[1] == LOWEST
        assert one[0] == pytest.approx(guarantee(mech, env), abs=1e-12)


def test_price_cap_brute_force_guarantee(fixture_name):
    env = load_fixture(fixture_name)
    reg = bm_with_price_cap(env, 201)
    assert brute_force_price_guarantee(reg, env) == pytest.approx(max_guarantee(env), abs=1e-7)
    with pytest.raises(ValueError):
        brute_force_price_guarantee(reg, env, AdversaryGrid((1.0025,)))


def test_feasible_samples(envs):
    env = envs["S1"]
    samples = random_feasible_schedules(env, 3, seed=7)
    assert len(samples) == 3
    ql = efficient_floor(env)
    for s in samples:
        assert shortlist_check(QuantityMechanism(s, 0.0), env).passed
        assert s.values.min() >= ql - 1e-12 and s.values[-1] == ql
    again = random_feasible_schedules(env, 3, seed=7)
    assert all(np.array_equal(a.values, b.values) for a, b in zip(samples, again))
    with pytest.raises(ValueError):
        random_feasible_schedules(env, 0)


def test_feasible_samples_never_beat_solver(envs, solutions):
    for name, env in envs.items():
        best = solutions[name].objective
        for s in random_feasible_schedules(env, 200, seed=3):
            assert conjectured_welfare(QuantityMechanism(s, 0.0), env) <= best + 1e-6


def test_vectorized_feasibility_matches_shortlist(envs):
    env = envs["S3"]
    pop = random_schedules(env, 300, seed=5, grid_points=101)
    flags = robust_feasible(env, pop[0].grid, np.array([s.values for s in pop]))
    for s, ok in zip(pop, flags):
        assert ok == shortlist_check(QuantityMechanism(s, 0.0), env, tol=1e-9).passed
    assert flags.any() and not flags.all()


def test_sampler_starvation(envs, monkeypatch):
    import robust_procurement.oracle as oracle

    monkeypatch.setattr(oracle, "STARVATION_DRAWS", 2000)
    monkeypatch.setattr(oracle, "robust_feasible", lambda env, grid, block, tol=0: np.zeros(len(block), bool))
    with pytest.raises(SamplerStarvationError):
        random_feasible_schedules(envs["S1"], 1, grid_points=21)


def test_sorted_uniform_population(envs):
    env = envs["S2"]
    pop = sorted_uniform_schedules(env, 5, seed=1, grid_points=51)
    for s in pop:
        assert np.all(np.diff(s.values) <= 0)
        assert s.values.min() >= 0.25 and s.values.max() <= 2.0


def test_random_environments_are_valid():
    for seed in range(20):
        env = random_environment(seed)
        assert validate_environment(env).passed
    assert random_environment(3).conjectured_demand == random_environment(3).conjectured_demand


def test_monotonicity_probe_examples(envs):
    env = envs["S3"]
    rep = monotonicity_probe(bm_with_floor(env).schedule, env)
    assert rep.passed
    first = rep.details["intervals"][0]
    assert first[0] == 1.0 and first[2] == "increasing"
    assert first[1] == pytest.approx(13 / 9, abs=1e-9)
    grid = env.grid(101)
    low = QuantitySchedule(grid, np.maximum(env.lowest_demand.demand(grid), efficient_floor(env)))
    assert monotonicity_probe(low, env).passed
    flat = QuantitySchedule(grid, np.full(grid.size, efficient_floor(env)))
    rep = monotonicity_probe(flat, env)
    assert rep.passed
    assert all(kind in ("decreasing", "flat") for _, _, kind in rep.details["intervals"])


@pytest.mark.parametrize("name", ["S1", "S2", "S3"])
def test_finite_difference_gradient(name):
    env = load_fixture(name)
    rng = np.random.default_rng(9)
    mech = bm_with_floor(env)
    for i in rng.integers(1, mech.grid.size - 1, 20):
        d = np.zeros(mech.grid.size)
        d[i] = 1.0
        rep = finite_difference_welfare_check(mech, env, d)
        assert rep.passed, rep.details


def test_finite_difference_edge_cases(envs):
    env = envs["S1"]
    mech = QuantityMechanism(baron_myerson(env), 0.0)
    zero = finite_difference_welfare_check(mech, env, np.zeros(mech.grid.size))
    assert zero.passed and zero.details["relative_error"] == 0.0
    # the unconstrained optimum has a vanishing gradient in every interior direction
    d = np.zeros(mech.grid.size)
    d[400:600] = 1.0
    rep = finite_difference_welfare_check(mech, env, d)
    assert rep.passed and abs(rep.details["analytic"]) < 1e-9
    with pytest.raises(ValueError):
        finite_difference_welfare_check(mech, env, np.zeros(3))
