"""
Main entry point for the isaacs-lab command line.

Subcommands:
    validate     check the standing assumptions and the barrier of a problem file
    solve        discrete Isaacs solve
    solve-reg    discrete regularized solve max(H, P - K) = 0
    rate-study   K-convergence of the regularized solutions
    simulate     Monte Carlo payoffs under saddle or constant policies
    dpp-check    dynamic programming principle on a whole-space problem
    lift-check   reduction identity and equator estimates of the surface game

Every command writes <out>/<command>.json and its CSV tables. Exit codes:
0 all checks pass, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from games.base import ConfigurationError, IsaacsLabError, StudyAbortedError
from games.model import A2Family, PucciSpec, SamplePlan, validate_assumptions
from games.operators import Grid, monotonicity_report
from games.simulator import (
    MarkovPolicy,
    McConfig,
    check_dpp,
    epsilon_sweep,
    estimate_payoff,
    saddle_check,
)
from games.solver import SolveConfig, regularity_report, solve_isaacs, solve_regularized
from games.surface import REDUCTION_HEADER
from pipelines import lift_check, rate_study
from pipelines.lift_check import LiftCheckSettings
from pipelines.rate_study import CSV_HEADER
from src.config import ExperimentConfig, load_problem
from src.results import ResultDocument, write_csv, write_document

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

COMMANDS = ("validate", "solve", "solve-reg", "rate-study", "simulate", "dpp-check", "lift-check")


def _banner(title: str) -> None:
    print("=" * 50)
    print(title)
    print("=" * 50)


def _solve_config(config: ExperimentConfig) -> SolveConfig:
    return SolveConfig(
        tolerance=config.tolerance,
        relaxation=config.relaxation,
        linear_solver=config.linear_solver,
    )


def _mc_config(config: ExperimentConfig) -> McConfig:
    return McConfig(
        n_paths=config.n_paths,
        dt=config.dt,
        seed=config.seed,
        epsilon=config.epsilon,
        threads=config.threads,
        allowance=config.allowance,
    )


def _start_points(config: ExperimentConfig, dimension: int) -> list[list[float]]:
    return config.x0 or [[0.0] * dimension]


def _field_rows(result, beta_labels: tuple[str, ...]) -> list[list[str]]:
    grid = result.grid
    header = [f"x{i + 1}" for i in range(grid.dimension)] + ["v", "alpha", "beta"]
    rows = [header]
    for k, x in enumerate(grid.interior_points):
        rows.append(
            [f"{value:.10g}" for value in x]
            + [
                f"{result.field.interior_values[k]:.12e}",
                result.labels[result.alpha_star[k]],
                beta_labels[result.beta_star[k]],
            ]
        )
    return rows


def _document(config: ExperimentConfig, passed: bool, results: dict) -> int:
    exit_code = EXIT_PASS if passed else EXIT_FAIL
    write_document(
        config.out,
        ResultDocument(
            command=config.command,
            status="pass" if passed else "fail",
            exit_code=exit_code,
            config=config.model_dump(),
            results=results,
        ),
    )
    return exit_code


# Commands


def cmd_validate(config: ExperimentConfig, verbosity: int) -> int:
    problem = load_problem(config.problem)
    report = validate_assumptions(problem, SamplePlan(seed=config.seed))
    delta_hat = config.delta_hat or problem.coefficients.delta
    family = A2Family.from_spec(problem.dimension, PucciSpec(delta_hat, config.rotations))
    monotone = monotonicity_report(problem, Grid.build(problem, config.h), family)
    if verbosity >= 1:
        for check in report.checks:
            print(f"  {'ok  ' if check.passed else 'FAIL'} {check.name}: {check.value:.4g} (limit {check.limit:.4g})")
    for check in report.failures():
        print(f"assumption failed: {check.name} {check.detail}")
    if not monotone.monotone:
        print(f"stencil not monotone at h={config.h}: weight {monotone.worst_weight:.3g}")
    return _document(
        config,
        report.passed,
        {"assumptions": report.to_dict(), "monotonicity": monotone.to_dict()},
    )


def cmd_solve(config: ExperimentConfig, verbosity: int) -> int:
    problem = load_problem(config.problem)
    grid = Grid.build(problem, config.h)
    result = solve_isaacs(
        problem, grid, _solve_config(config), allow_nonmonotone=config.allow_nonmonotone
    )
    write_csv(Path(config.out) / "solve_field.csv", _field_rows(result, problem.coefficients.beta.labels))
    passed = result.certified
    if verbosity >= 1:
        print(f"  iterations {result.iterations}, certificate {result.certificate:.3e}")
    return _document(config, passed, result.summary())


def cmd_solve_reg(config: ExperimentConfig, verbosity: int) -> int:
    problem = load_problem(config.problem)
    grid = Grid.build(problem, config.h)
    solve_config = _solve_config(config)
    delta_hat = config.delta_hat or problem.coefficients.delta
    reference = solve_isaacs(problem, grid, solve_config, allow_nonmonotone=config.allow_nonmonotone)
    result = solve_regularized(
        problem,
        grid,
        config.K,
        delta_hat,
        solve_config,
        config.mode,
        rotations=config.rotations,
        initial=reference.field,
        cross_check=config.cross_check,
        allow_nonmonotone=config.allow_nonmonotone,
    )
    write_csv(Path(config.out) / "solve_reg_field.csv", _field_rows(result, problem.coefficients.beta.labels))
    passed = result.certified
    gap = float(np.max(np.abs(result.field.interior_values - reference.field.interior_values), initial=0.0))
    if verbosity >= 1:
        print(f"  K={config.K:g}: certificate {result.certificate:.3e}, sup|v_K - v| = {gap:.4e}")
    return _document(
        config,
        passed,
        {
            **result.summary(),
            "sup_difference_from_v": gap,
            "regularity": regularity_report(problem, result).to_dict(),
        },
    )


def cmd_rate_study(config: ExperimentConfig, verbosity: int) -> int:
    problem = load_problem(config.problem)
    grid = Grid.build(problem, config.h)
    delta_hat = config.delta_hat or problem.coefficients.delta
    csv_path = Path(config.out) / "rate_study.csv"
    try:
        result = rate_study(
            problem,
            grid,
            config.K_list,
            delta_hat,
            _solve_config(config),
            config.mode,
            rotations=config.rotations,
            reference_h=config.reference_h,
            show_graph=verbosity >= 2,
        )
    except StudyAbortedError as error:
        rows = error.partial or []
        write_csv(csv_path, [CSV_HEADER] + [row.csv_row(config.timings) for row in rows])
        print(f"rate study aborted: {error}")
        return _document(config, False, {"error": str(error), "completed": len(rows)})

    write_csv(csv_path, result.csv_rows(config.timings))
    if verbosity >= 2:
        for row in result.rows:
            print(f"  K={row.K:<6g} e_K={row.e_K:.4e} weighted={row.weighted_e_K:.4e}")
    slope = "n/a" if result.slope is None else f"{result.slope:.3f}"
    print(f"empirical N = {result.empirical_N:.4g}, slope = {slope}")
    return _document(config, True, result.summary())


def _policies(config: ExperimentConfig, problem, grid) -> MarkovPolicy:
    if config.policy == "constant":
        return MarkovPolicy.constant()
    return solve_isaacs(
        problem, grid, _solve_config(config), allow_nonmonotone=config.allow_nonmonotone
    ).policies()


def cmd_simulate(config: ExperimentConfig, verbosity: int) -> int:
    problem = load_problem(config.problem)
    grid = Grid.build(problem, config.h)
    policies = _policies(config, problem, grid)
    mc = _mc_config(config)
    rows = [["x0", "mean", "stderr", "n_paths", "dt", "epsilon", "seed", "censored_count", "bias_bound"]]
    estimates, passed = [], True
    for x0 in _start_points(config, problem.dimension):
        estimate = estimate_payoff(problem, policies, np.asarray(x0), mc)
        passed &= estimate.usable
        estimates.append({"x0": x0, **estimate.to_dict()})
        rows.append(
            [" ".join(f"{v:.6g}" for v in x0)]
            + [f"{estimate.mean:.12e}", f"{estimate.stderr:.12e}", str(estimate.n_paths)]
            + [f"{estimate.dt:g}", f"{estimate.epsilon:g}", str(estimate.seed)]
            + [str(estimate.censored_count), f"{estimate.bias_bound:.6e}"]
        )
        if verbosity >= 1:
            print(f"  x0={x0}: {estimate.mean:.6f} +- {estimate.stderr:.2e}")
    write_csv(Path(config.out) / "simulate.csv", rows)

    results: dict = {"estimates": estimates}
    x_first = np.asarray(_start_points(config, problem.dimension)[0])
    if config.policy == "saddle":
        saddle = saddle_check(problem, policies, None, x_first, mc)
        passed &= saddle.passed
        results["saddle"] = saddle.to_dict()
    if len(config.epsilons) > 1:
        sweep = epsilon_sweep(problem, policies, x_first, config.epsilons, mc)
        results["epsilon_sweep"] = sweep.to_dict()
    return _document(config, bool(passed), results)


def cmd_dpp_check(config: ExperimentConfig, verbosity: int) -> int:
    problem = load_problem(config.problem)
    if not problem.domain.is_whole_space:
        raise ConfigurationError("dpp-check needs a whole_space problem file")
    grid = Grid.build(problem, config.h)
    reference = solve_isaacs(problem, grid, _solve_config(config), allow_nonmonotone=config.allow_nonmonotone)
    policies = reference.policies()
    rows = [["x0", "gamma", "lambda0", "v_x0", "rhs", "stderr", "discrepancy", "tolerance", "pass"]]
    reports = []
    for x0 in _start_points(config, problem.dimension):
        report = check_dpp(
            problem, reference.field, config.gamma, config.lambda0, np.asarray(x0), policies, _mc_config(config)
        )
        reports.append(report)
        rows.append(
            [" ".join(f"{v:.6g}" for v in x0), f"{report.gamma:g}", f"{report.lambda0:g}"]
            + [f"{value:.12e}" for value in (report.v_x0, report.rhs, report.stderr)]
            + [f"{report.discrepancy:.6e}", f"{report.tolerance:.6e}", str(report.passed).lower()]
        )
        if verbosity >= 1:
            print(f"  x0={x0}: discrepancy {report.discrepancy:.4e} (tolerance {report.tolerance:.4e})")
    write_csv(Path(config.out) / "dpp_check.csv", rows)
    passed = all(report.passed for report in reports)
    return _document(config, passed, {"reports": [report.to_dict() for report in reports]})


def cmd_lift_check(config: ExperimentConfig, verbosity: int) -> int:
    problem = load_problem(config.problem)
    grid = Grid.build(problem, config.h)
    mc = McConfig(n_paths=config.n_paths, dt=config.dt, seed=config.seed, threads=config.threads)
    settings = LiftCheckSettings(
        reduction=mc, equator=mc, coupling=mc, psi_threshold=config.psi_threshold,
        plan=SamplePlan(seed=config.seed),
    )
    result = lift_check(
        problem, grid, config.x0, settings, _solve_config(config), show_graph=verbosity >= 2
    )
    write_csv(
        Path(config.out) / "lift_check.csv",
        [REDUCTION_HEADER] + [row.csv_row() for row in result.reduction.rows],
    )
    if verbosity >= 1:
        band = result.equator.band
        print(f"  equator band epsilon={band.epsilon:.4g}, N0={band.N0:.4g}, N1={band.N1:.4g}")
        print(f"  reduction: {result.reduction.tested} points tested, passed={result.reduction.passed}")
    return _document(config, result.passed, result.to_dict())


HANDLERS = {
    "validate": cmd_validate,
    "solve": cmd_solve,
    "solve-reg": cmd_solve_reg,
    "rate-study": cmd_rate_study,
    "simulate": cmd_simulate,
    "dpp-check": cmd_dpp_check,
    "lift-check": cmd_lift_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isaacs-lab", description=__doc__.splitlines()[1])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="problem file (JSON)")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--h", type=float, default=2.0**-6, help="grid spacing")
    parser.add_argument("--K", type=float, default=8.0, help="penalty level for solve-reg")
    parser.add_argument("--K-list", type=float, nargs="+", default=[1, 2, 4, 8, 16, 32])
    parser.add_argument("--delta-hat", type=float, default=None)
    parser.add_argument("--rotations", type=int, default=8)
    parser.add_argument("--mode", choices=["extended-game", "obstacle-residual"], default="extended-game")
    parser.add_argument("--cross-check", action="store_true")
    parser.add_argument("--reference-h", type=float, default=None)
    parser.add_argument("--tolerance", type=float, default=1e-8)
    parser.add_argument("--relaxation", type=float, default=1.0)
    parser.add_argument("--inner", choices=["spsolve", "gauss_seidel"], default="spsolve")
    parser.add_argument("--allow-nonmonotone", action="store_true")
    parser.add_argument("--dt", type=float, default=1e-3)
    parser.add_argument("--n-paths", type=int, default=10000)
    parser.add_argument("--epsilon", type=float, default=0.0)
    parser.add_argument("--epsilons", type=float, nargs="*", default=[])
    parser.add_argument("--x0", type=float, nargs="+", action="append", default=None)
    parser.add_argument("--gamma", type=float, default=1.0)
    parser.add_argument("--lambda0", type=float, default=0.0)
    parser.add_argument("--allowance", type=float, default=0.02)
    parser.add_argument("--psi-threshold", type=float, default=0.2)
    parser.add_argument("--policy", choices=["saddle", "constant"], default="saddle")
    parser.add_argument("--timings", action="store_true", help="fill wall_time_ms in rate-study CSV")
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return ExperimentConfig(
        command=args.command,
        problem=args.config,
        out=args.out,
        h=args.h,
        K_list=args.K_list,
        K=args.K,
        delta_hat=args.delta_hat,
        rotations=args.rotations,
        mode=args.mode,
        cross_check=args.cross_check,
        reference_h=args.reference_h,
        tolerance=args.tolerance,
        relaxation=args.relaxation,
        linear_solver=args.inner,
        allow_nonmonotone=args.allow_nonmonotone,
        dt=args.dt,
        n_paths=args.n_paths,
        seed=args.seed,
        threads=args.threads,
        epsilon=args.epsilon,
        epsilons=args.epsilons,
        x0=args.x0,
        gamma=args.gamma,
        lambda0=args.lambda0,
        allowance=args.allowance,
        psi_threshold=args.psi_threshold,
        timings=args.timings,
        policy=args.policy,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose >= 3 else logging.INFO if args.verbose >= 1 else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        config = config_from_args(args)
        if args.verbose >= 1:
            _banner(f"isaacs-lab {config.command}: {config.problem}")
        exit_code = HANDLERS[config.command](config, args.verbose)
    except (ValidationError, FileNotFoundError, ConfigurationError) as error:
        print(f"configuration error: {error}", file=sys.stderr)
        return EXIT_USAGE
    except IsaacsLabError as error:
        print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
        return EXIT_FAIL

    print(f"{args.command}: {'pass' if exit_code == EXIT_PASS else 'fail'}")
    return exit_code


def cli() -> None:
    sys.exit(main())


if __name__ == "__main__":
    cli()
