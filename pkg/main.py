"""
Command-line entry point

    python main.py solve estimation-scalar
    python main.py scenario adhoc-churn --replicates 200 --out-dir results/churn
"""

import argparse
import logging
import os
import sys

import numpy as np

import report_generator
from chain_sim import empirical_frequencies, frequency_standard_error, simulate_chain
from errors import SchedulingError
from harness import analytic_bounds, build_phase_plan, finite_horizon_policies, run_scenario, simulate_schedule
from monte_carlo import make_rng
from scenario_config import ScenarioConfig, apply_overrides, list_scenarios, load_scenario

logger = logging.getLogger(__name__)

DEFAULT_OUT_DIR = "results"


def _load(args) -> ScenarioConfig:
    config = load_scenario(args.scenario)
    return apply_overrides(config, seed=args.seed, replicates=args.replicates, horizon=args.horizon,
                           grid_dt=args.grid_dt, jobs=args.jobs)


def _out_dir(args, config: ScenarioConfig) -> str:
    path = args.out_dir or os.path.join(DEFAULT_OUT_DIR, config.name)
    os.makedirs(path, exist_ok=True)
    return path


def cmd_solve(args) -> int:
    config = _load(args)
    out_dir = _out_dir(args, config)
    plan = build_phase_plan(config)
    paths = report_generator.write_policy_tables(out_dir, plan, config.sensors)
    for p, phase in enumerate(plan):
        print(f"phase {p} [{phase.start:g}, {phase.end:g}]: rho = {phase.policy.rho:.6g} "
              f"({phase.policy.iterations} Newton iterations, residual {phase.policy.residual:.2e})")
    if args.finite_horizon is not None:
        policies = finite_horizon_policies(config, plan, args.finite_horizon)
        for p, finite in enumerate(policies):
            print(f"phase {p} over T = {args.finite_horizon:g}: average cost J = {finite.cost_J:.6g}")
        paths.append(report_generator.write_finite_horizon_gains(out_dir, plan, policies, config.sensors))
    for path in paths:
        print(f"  wrote {path}")
    return 0


def cmd_analyze(args) -> int:
    """Analytic frequencies next to one long simulated run per phase"""
    config = _load(args)
    out_dir = _out_dir(args, config)
    plan = build_phase_plan(config)
    table, paths = {}, []
    for p, phase in enumerate(plan):
        trace = simulate_chain(phase.policy, phase.spec.idle, config.statistics_horizon, make_rng(config.seed, p))
        table[f"phase{p}"] = {
            "sensors": phase.active.tolist(),
            "analytic": phase.report.frequency.tolist(),
            "empirical": empirical_frequencies(trace).tolist(),
            "se": frequency_standard_error(trace).tolist(),
        }
        paths.append(report_generator.write_stationary(os.path.join(out_dir, f"stationary_phase{p}.csv"),
                                                       phase.report.stationary))
        for sensor, f, f_hat in zip(phase.active, phase.report.frequency, table[f"phase{p}"]["empirical"]):
            print(f"phase {p} sensor {sensor}: f = {f:.6g} (simulated {f_hat:.6g})")
        print(f"phase {p} idle probability: {phase.report.stationary[-1]:.6g}")
    paths += report_generator.write_frequency_tables(out_dir, table)
    for path in paths:
        print(f"  wrote {path}")
    return 0


def cmd_simulate(args) -> int:
    config = _load(args)
    plan = build_phase_plan(config)
    trace = simulate_schedule(plan, config.sensors, make_rng(config.seed))
    path = report_generator.write_trace(os.path.join(_out_dir(args, config), "trace.csv"), trace)
    counts = [len(e) for e in trace.events]
    print(f"{sum(counts)} samples over T = {trace.horizon:g}; per sensor: {counts}")
    print(f"  wrote {path}")
    return 0


def cmd_bounds(args) -> int:
    config = _load(args)
    plan = build_phase_plan(config)
    rows = analytic_bounds(config, plan)
    path = report_generator.write_bounds_table(_out_dir(args, config), rows)
    for row in rows:
        value = "n/a" if not np.isfinite(row["value"]) else f"{row['value']:.6g}"
        print(f"{row['phase']} sensor {row['sensor']} {row['kind']}: {value} (f = {row['frequency']:.6g})")
    print(f"  wrote {path}")
    return 0


def cmd_scenario(args) -> int:
    config = _load(args)
    report = run_scenario(config, _out_dir(args, config))
    print(f"Scenario {report.scenario}: {'passed' if report.passed else 'FAILED'}")
    for curve in report.curves:
        if curve.violations:
            print(f"  {curve.label} sensor {curve.sensor}: {curve.violations} grid point(s) above the bound")
    for path in report.artifacts:
        print(f"  wrote {path}")
    return 0 if report.passed else 2


def cmd_list(args) -> int:
    for name in list_scenarios():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Optimal stochastic sensor scheduling")
    parser.add_argument("--verbose", "-v", action="store_true", help="Verbose logging")
    commands = parser.add_subparsers(dest="command", required=True)

    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("scenario", help="Built-in scenario name or path to a scenario JSON file")
    shared.add_argument("--seed", type=int, help="Master seed")
    shared.add_argument("--replicates", type=int, help="Monte Carlo replicates")
    shared.add_argument("--horizon", type=float, help="Simulation horizon")
    shared.add_argument("--grid-dt", type=float, help="Output grid spacing")
    shared.add_argument("--jobs", type=int, help="Parallel workers")
    shared.add_argument("--out-dir", help=f"Output directory (default {DEFAULT_OUT_DIR}/<scenario>)")

    for name, handler, help_text in (
            ("solve", cmd_solve, "Solve the stationary policy and write its gains"),
            ("analyze", cmd_analyze, "Sampling frequencies and stationary distribution"),
            ("simulate", cmd_simulate, "Simulate one sampling trace"),
            ("bounds", cmd_bounds, "Tabulate the analytic error bounds"),
            ("scenario", cmd_scenario, "Run a full Monte Carlo scenario")):
        sub = commands.add_parser(name, parents=[shared], help=help_text)
        sub.set_defaults(handler=handler)
        if name == "solve":
            sub.add_argument("--finite-horizon", type=float, metavar="T",
                             help="Also solve the value trajectory on [0, T] and write its time-varying gains")
    commands.add_parser("list", help="List built-in scenarios").set_defaults(handler=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return args.handler(args)
    except SchedulingError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception(f"Unexpected failure in {args.command}")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
