"""Command-line interface: validate, solve, compare, figure, sweep.

Exit codes: 0 success, 1 domain validation failure, 2 parse failure,
3 solver non-convergence, 4 precondition unmet.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .guarantee import guarantee, max_guarantee, worst_case_profile
from .mechanism import format_float, price_quantities, rent_schedule, write_csv
from .model import (
    CONJECTURED,
    Environment,
    PiecewiseLinearCurve,
    ScenarioError,
    environment_from_dict,
    environment_to_dict,
    validate_environment,
)
from .regulation import bm_with_price_cap, compare_regulation
from .report import _jsonable
from .solver import (
    ConvergenceError,
    RegularityError,
    SolverOptions,
    baron_myerson,
    bm_with_floor,
    solve_ropt,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_PRECONDITION = 4

SCENARIO_KEYS = ("environment", "solver", "output")
SOLVER_KEYS = ("grid_points", "tol_constraint", "tol_objective", "max_iters", "seed")
OUTPUT_KEYS = ("out_dir", "verbose", "figures")

log = logging.getLogger("robust_procurement")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioFile:
    """Environment plus solver and output options, as stored on disk."""

    environment: Environment
    solver: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Any) -> "ScenarioFile":
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object")
        _reject_unknown(data, SCENARIO_KEYS, "scenario")
        if "environment" not in data:
            raise ScenarioError("missing scenario key: 'environment'")
        solver = data.get("solver") or {}
        output = data.get("output") or {}
        _reject_unknown(solver, SOLVER_KEYS, "solver")
        _reject_unknown(output, OUTPUT_KEYS, "output")
        return cls(environment_from_dict(data["environment"]), dict(solver), dict(output))

    def to_dict(self) -> dict:
        return {
            "environment": environment_to_dict(self.environment),
            "solver": dict(self.solver),
            "output": dict(self.output),
        }

    @classmethod
    def loads(cls, text: str) -> "ScenarioFile":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        return cls.from_dict(data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def options(self, overrides: dict | None = None) -> SolverOptions:
        merged = {**self.solver, **{k: v for k, v in (overrides or {}).items() if v is not None}}
        return SolverOptions(**merged)


def _reject_unknown(block: Any, allowed, where: str) -> None:
    if not isinstance(block, dict):
        raise ScenarioError(f"{where} block must be an object")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ScenarioError(f"unknown {where} key: {unknown[0]!r}")


def load_scenario(path) -> ScenarioFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_PARSE) from exc
    try:
        scenario = ScenarioFile.loads(text)
    except ScenarioError as exc:
        raise CliError(f"{path}: {exc}", EXIT_PARSE) from exc
    if scenario.output.get("verbose"):
        log.setLevel(min(log.getEffectiveLevel(), logging.INFO))
    return scenario


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _require_valid(env: Environment) -> None:
    report = validate_environment(env)
    if not report.passed:
        raise CliError("invalid environment:\n" + report.summary(), EXIT_INVALID)


def _out_path(args, scenario: ScenarioFile, suffix: str) -> Path:
    out_dir = Path(args.out_dir or scenario.output.get("out_dir") or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir / f"{Path(args.path).stem}_{suffix}"


def _solve(scenario: ScenarioFile, args):
    opts = scenario.options({
        "grid_points": args.grid_points, "seed": args.seed,
        "tol_constraint": getattr(args, "tol_constraint", None),
        "tol_objective": getattr(args, "tol_objective", None),
        "max_iters": getattr(args, "max_iters", None),
    })
    _require_valid(scenario.environment)
    try:
        return solve_ropt(scenario.environment, opts)
    except ConvergenceError as exc:
        raise CliError(f"solver did not converge: {exc}\nstats: {json.dumps(_jsonable(exc.stats))}", EXIT_SOLVER) from exc
    except RegularityError as exc:
        raise CliError(str(exc), EXIT_INVALID) from exc


def cmd_validate(args) -> int:
    scenario = load_scenario(args.path)
    report = validate_environment(scenario.environment)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_INVALID


def solution_table(sol, env: Environment) -> dict[str, np.ndarray]:
    n = sol.mechanism.grid.size
    return {
        "theta": sol.mechanism.grid,
        "q_bm": baron_myerson(env, n).values,
        "q_floor": bm_with_floor(env, n).quantities,
        "q_opt": sol.mechanism.quantities,
        "rent": rent_schedule(sol.mechanism),
        "profile": worst_case_profile(sol.mechanism, env).values,
    }


def solution_summary(sol, env: Environment) -> dict:
    stats = {k: v for k, v in sol.stats.items() if k != "multipliers"}
    return _jsonable({
        "max_guarantee": max_guarantee(env),
        "guarantee": guarantee(sol.mechanism, env),
        "objective": sol.objective,
        "theta_star": sol.theta_star,
        "theta_m": sol.theta_m,
        "floor_optimal": sol.floor_optimal,
        "binding": stats.pop("binding", []),
        "stats": stats,
    })


def cmd_solve(args) -> int:
    scenario = load_scenario(args.path)
    env = scenario.environment
    sol = _solve(scenario, args)
    csv_path = _out_path(args, scenario, "solution.csv")
    json_path = _out_path(args, scenario, "summary.json")
    csv_path.write_text(write_csv(solution_table(sol, env)), newline="")
    summary = solution_summary(sol, env)
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for key in ("max_guarantee", "guarantee", "objective", "theta_star", "theta_m", "floor_optimal"):
        print(f"{key:<14} {summary[key]}")
    print(f"wrote {csv_path} and {json_path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    scenario = load_scenario(args.path)
    sol = _solve(scenario, args)
    report = compare_regulation(scenario.environment, sol)
    print(report.table())
    path = _out_path(args, scenario, "compare.json")
    path.write_text(report.to_json() + "\n")
    print(f"wrote {path}")
    return EXIT_OK


def figure_table(env: Environment, figure: int, sol) -> dict[str, np.ndarray]:
    n = sol.mechanism.grid.size
    grid = sol.mechanism.grid
    if figure == 3:
        reg = bm_with_price_cap(env, n)
        return {
            "theta": grid,
            "z": env.cost.virtual_cost(grid),
            "p_opt": reg.prices,
            "cap": np.full(n, env.theta_high),
            "q_conjectured": price_quantities(reg, env, CONJECTURED),
        }
    cols = {
        "theta": grid,
        "q_bm": baron_myerson(env, n).values,
        "q_floor": bm_with_floor(env, n).quantities,
        "d_low": env.lowest_demand.demand(grid),
        "d_conjectured": env.conjectured_demand.demand(grid),
    }
    if figure == 2:
        cols["q_opt"] = sol.mechanism.quantities
    return cols


def cmd_figure(args) -> int:
    scenario = load_scenario(args.path)
    env = scenario.environment
    figures = [args.figure] if args.figure else list(scenario.output.get("figures") or [])
    if not figures or any(f not in (1, 2, 3) for f in figures):
        raise CliError("choose --figure 1, 2 or 3 (or list them under output.figures)", EXIT_PARSE)
    sol = _solve(scenario, args)
    if 2 in figures and sol.floor_optimal:
        raise CliError(
            "figure 2 shows a robust solution that departs from the floor mechanism, "
            "but the floor mechanism is robustly optimal here", EXIT_PRECONDITION)
    for figure in figures:
        path = _out_path(args, scenario, f"figure{figure}.csv")
        path.write_text(write_csv(figure_table(env, figure, sol)), newline="")
        print(f"wrote {path}")
    return EXIT_OK


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

SWEEP_HELP = (
    "grid_points; theta_low; theta_high; cost_params.<name>; "
    "lowest_demand.y<i> / conjectured_demand.y<i> (quantity of knot i); "
    "lowest_demand.mix (weight t in (1-t) D_low + t D*)"
)


def _with_knot(curve: PiecewiseLinearCurve, index: int, y: float) -> PiecewiseLinearCurve:
    knots = [list(k) for k in curve.knots]
    knots[index][1] = y
    return PiecewiseLinearCurve(tuple(map(tuple, knots)))


def _mix(a: PiecewiseLinearCurve, b: PiecewiseLinearCurve, t: float) -> PiecewiseLinearCurve:
    xs = np.union1d(a.prices, b.prices)
    ys = (1 - t) * a.demand(xs) + t * b.demand(xs)
    ys[-1] = 0.0
    return PiecewiseLinearCurve(tuple(zip(xs, ys)))


def check_parameter(scenario: ScenarioFile, parameter: str) -> None:
    """Raise unless ``parameter`` names something :func:`sweep_variant` can vary."""
    env = scenario.environment
    if parameter in ("grid_points", "theta_low", "theta_high", "lowest_demand.mix"):
        return
    if parameter.startswith("cost_params."):
        name = parameter.split(".", 1)[1]
        if name not in env.cost.params or name == "knots":
            raise CliError(f"cost family {env.cost.family!r} has no scalar parameter {name!r}", EXIT_INVALID)
        return
    for attr in ("lowest_demand", "conjectured_demand"):
        prefix = f"{attr}.y"
        if parameter.startswith(prefix) and parameter[len(prefix):].isdigit():
            count = len(getattr(env, attr).knots)
            if int(parameter[len(prefix):]) >= count:
                raise CliError(f"{attr} has only {count} knots", EXIT_INVALID)
            return
    raise CliError(f"parameter {parameter!r} is not sweepable; choose one of: {SWEEP_HELP}", EXIT_INVALID)


def sweep_variant(scenario: ScenarioFile, parameter: str, value: float) -> tuple[ScenarioFile, int | None]:
    """Scenario with one parameter replaced; also returns a grid size override."""
    check_parameter(scenario, parameter)
    env = scenario.environment
    if parameter == "grid_points":
        return scenario, int(value)
    if parameter in ("theta_low", "theta_high"):
        data = environment_to_dict(env)
        data[parameter] = value
        return ScenarioFile(environment_from_dict(data), scenario.solver, scenario.output), None
    if parameter.startswith("cost_params."):
        name = parameter.split(".", 1)[1]
        data = environment_to_dict(env)
        data["cost_params"] = {**data["cost_params"], name: value}
        return ScenarioFile(environment_from_dict(data), scenario.solver, scenario.output), None
    if parameter == "lowest_demand.mix":
        new = env.replace(lowest_demand=_mix(env.lowest_demand, env.conjectured_demand, value))
        return ScenarioFile(new, scenario.solver, scenario.output), None
    for attr in ("lowest_demand", "conjectured_demand"):
        prefix = f"{attr}.y"
        if parameter.startswith(prefix) and parameter[len(prefix):].isdigit():
            idx = int(parameter[len(prefix):])
            new = env.replace(**{attr: _with_knot(getattr(env, attr), idx, value)})
            return ScenarioFile(new, scenario.solver, scenario.output), None
    raise AssertionError(parameter)


def parse_values(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:num`` (inclusive linspace); empty text gives no values."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        start, stop, num = text.split(":")
        return [float(v) for v in np.linspace(float(start), float(stop), int(num))]
    return [float(v) for v in text.split(",")]


SWEEP_COLUMNS = ("value", "max_guarantee", "quantity_welfare", "price_welfare", "margin", "floor_optimal", "winner")


def run_sweep(scenario: ScenarioFile, parameter: str, values, args) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for value in values:
        try:
            variant, grid_points = sweep_variant(scenario, parameter, value)
        except (ScenarioError, ValueError) as exc:
            log.info("value %s skipped: %s", value, exc)
            writer.writerow([format_float(value)] + ["nan"] * 5 + ["invalid"])
            continue
        env = variant.environment
        if not validate_environment(env).passed:
            writer.writerow([format_float(value)] + ["nan"] * 5 + ["invalid"])
            continue
        opts = variant.options({"grid_points": grid_points or args.grid_points, "seed": args.seed})
        try:
            sol = solve_ropt(env, opts)
        except ConvergenceError as exc:
            raise CliError(f"solver did not converge at {parameter}={value}: {exc}", EXIT_SOLVER) from exc
        rep = compare_regulation(env, sol)
        writer.writerow([
            format_float(value), format_float(rep.guarantee_both), format_float(rep.quantity_welfare),
            format_float(rep.price_welfare), format_float(rep.margin), int(sol.floor_optimal), rep.winner,
        ])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    scenario = load_scenario(args.path)
    try:
        values = parse_values(args.values)
    except ValueError as exc:
        raise CliError(f"bad --values: {exc}", EXIT_PARSE) from exc
    check_parameter(scenario, args.parameter)
    text = run_sweep(scenario, args.parameter, values, args)
    path = _out_path(args, scenario, f"sweep_{args.parameter.replace('.', '_')}.csv")
    path.write_text(text, newline="")
    sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid-points", type=int, default=None, help="cost grid size (default 1001)")
    common.add_argument("--seed", type=int, default=None, help="random seed (reserved for stochastic steps)")
    common.add_argument("--out-dir", default=None, help="directory for CSV/JSON outputs (default: current)")
    common.add_argument("--verbose", "-v", action="count", default=0, help="more logging")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--tol-constraint", type=float, default=None)
    solver.add_argument("--tol-objective", type=float, default=None)
    solver.add_argument("--max-iters", type=int, default=None)

    parser = argparse.ArgumentParser(prog="robust-procurement", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a scenario's environment")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", parents=[common, solver], help="robustly optimal quantity mechanism")
    p.add_argument("path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("compare", parents=[common, solver], help="rank price against quantity regulation")
    p.add_argument("path")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("figure", parents=[common, solver], help="emit figure data as CSV")
    p.add_argument("path")
    p.add_argument("--figure", type=int, choices=(1, 2, 3), default=None)
    p.set_defaults(func=cmd_figure)

    p = sub.add_parser("sweep", parents=[common], help="vary one parameter and rank regulations")
    p.add_argument("path")
    p.add_argument("--parameter", required=True, help=SWEEP_HELP)
    p.add_argument("--values", default="", help="comma list or start:stop:num")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
