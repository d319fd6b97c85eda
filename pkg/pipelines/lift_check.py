"""
Surface-lift checks for a g = 0 bounded-domain problem.

Graph Structure: solve -> reduce (loop over points) -> fiber -> equator -> coupling -> finalize -> END
- solve node: Isaacs solve supplying v_h and the saddle policies
- reduce node: reduction identity v_bar Psi = v_h at one point per visit
- fiber node: v_bar from two orthogonal fiber directions
- equator node: band calibration and the exit moment E exp(2 N0 tau)
- coupling node: supermartingale of coupled paths and the Gamma-invariance study
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from langgraph.graph import END, StateGraph

from games.base import ConfigurationError
from games.model import GameProblem, SamplePlan
from games.operators import Grid
from games.simulator import MarkovPolicy, McConfig
from games.solver import SolveConfig, solve_isaacs
from games.surface import (
    EquatorReport,
    FiberReport,
    InvarianceReport,
    LiftedGame,
    ReductionReport,
    ReductionRow,
    SupermartingaleReport,
    calibrate_equator_band,
    check_reduction,
    coupled_supermartingale_check,
    equator_exit_moment,
    equator_start,
    fiber_invariance,
    gamma_invariance_study,
    lift_point,
)

from .base import LiftCheckState, has_more

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LiftCheckSettings:
    reduction: McConfig = McConfig(n_paths=20000, dt=1e-3)
    equator: McConfig = McConfig(n_paths=2000, dt=1e-3)
    coupling: McConfig = McConfig(n_paths=2000, dt=1e-3)
    psi_threshold: float = 0.2
    invariance_dts: tuple[float, ...] = (1e-2, 5e-3, 2.5e-3)
    plan: SamplePlan = SamplePlan()


@dataclass(frozen=True)
class LiftCheckResult:
    reduction: ReductionReport
    fiber: FiberReport
    equator: EquatorReport
    supermartingale: SupermartingaleReport
    invariance: InvarianceReport

    @property
    def passed(self) -> bool:
        """Every sub-check, the invariance one judged on its strong statistic."""
        return (
            self.reduction.passed
            and self.fiber.passed
            and self.equator.passed
            and self.supermartingale.passed
            and self.invariance.passed
        )

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "reduction": self.reduction.to_dict(),
            "fiber": self.fiber.to_dict(),
            "equator": self.equator.to_dict(),
            "supermartingale": self.supermartingale.to_dict(),
            "invariance": self.invariance.to_dict(),
        }


def default_points(problem: GameProblem, count: int = 5, psi_threshold: float = 0.2) -> list[list[float]]:
    """Evenly spaced points on the first axis with Psi >= psi_threshold."""
    radius = problem.domain.bounding_radius
    candidates = np.zeros((201, problem.dimension))
    candidates[:, 0] = np.linspace(-radius, radius, 201)
    candidates = candidates[problem.barrier.psi(candidates) >= psi_threshold]
    if candidates.shape[0] == 0:
        raise ConfigurationError(f"no point of the domain has Psi >= {psi_threshold}")
    picks = np.linspace(0, candidates.shape[0] - 1, min(count, candidates.shape[0])).round().astype(int)
    return candidates[picks].tolist()


def _policy_sample(problem: GameProblem, saddle: MarkovPolicy) -> list[MarkovPolicy]:
    """The saddle pair and up to two constant pairs."""
    pairs = problem.coefficients.control_pairs[:2]
    return [saddle] + [MarkovPolicy.constant(ia, ib) for ia, ib in pairs]


def create_graph(
    settings: LiftCheckSettings | None = None,
    solve_config: SolveConfig | None = None,
    show_graph: bool = False,
) -> StateGraph:
    """Create the lift-check graph.

    Args:
        settings: Monte Carlo budgets and thresholds of the individual checks
        solve_config: Tolerance of the Isaacs solve
        show_graph: Print the graph as ASCII after compiling

    Returns:
        Compiled StateGraph ready for execution
    """
    settings = settings or LiftCheckSettings()

    def solve_node(state: LiftCheckState) -> dict:
        """Solve the base game."""
        reference = solve_isaacs(state["problem"], state["grid"], solve_config)
        return {"reference": reference, "log": [f"isaacs solve: {reference.iterations} iterations"]}

    def reduce_node(state: LiftCheckState) -> dict:
        """Check the reduction identity at the next point."""
        x = state["points"][state["index"]]
        report = check_reduction(
            state["game"],
            [x],
            state["reference"].field,
            state["reference"].policies(),
            settings.reduction,
            settings.psi_threshold,
        )
        row: ReductionRow = report.rows[0]
        line = f"reduction at {x}: " + ("skipped" if row.skipped else f"discrepancy {row.discrepancy:.4g}")
        return {
            "rows": state["rows"] + [row],
            "index": state["index"] + 1,
            "log": state["log"] + [line],
        }

    def fiber_node(state: LiftCheckState) -> dict:
        """Compare the two fiber lifts at the center point."""
        x = state["points"][len(state["points"]) // 2]
        report = fiber_invariance(state["game"], x, state["reference"].policies(), settings.reduction)
        return {"fiber": report}

    def equator_node(state: LiftCheckState) -> dict:
        """Calibrate the band and estimate the exit moment."""
        game = state["game"]
        band = calibrate_equator_band(game, settings.plan)
        sample = _policy_sample(state["problem"], state["reference"].policies())
        report = equator_exit_moment(game, equator_start(game, band), sample, settings.equator, band)
        return {"band": band, "equator": report}

    def coupling_node(state: LiftCheckState) -> dict:
        """Coupled supermartingale and Gamma invariance from the center point."""
        game, band = state["game"], state["band"]
        policies = state["reference"].policies()
        x = np.asarray(state["points"][len(state["points"]) // 2], dtype=float)
        shifted = x.copy()
        shifted[0] += 0.05 * state["problem"].domain.bounding_radius
        first, second = lift_point(x, game.barrier), lift_point(shifted, game.barrier)
        supermartingale = coupled_supermartingale_check(
            game, first, second, policies, band.N0, settings.coupling
        )
        invariance = gamma_invariance_study(
            game, first, policies, settings.coupling, settings.invariance_dts
        )
        return {"supermartingale": supermartingale, "invariance": invariance}

    def finalize_node(state: LiftCheckState) -> dict:
        """Collect the reports."""
        result = LiftCheckResult(
            reduction=ReductionReport(tuple(state["rows"])),
            fiber=state["fiber"],
            equator=state["equator"],
            supermartingale=state["supermartingale"],
            invariance=state["invariance"],
        )
        return {"result": result}

    def should_continue(state: LiftCheckState) -> Literal["reduce", "fiber"]:
        return "reduce" if has_more(state, "points") else "fiber"

    graph = StateGraph(LiftCheckState)

    graph.add_node("solve", solve_node)
    graph.add_node("reduce", reduce_node)
    graph.add_node("fiber", fiber_node)
    graph.add_node("equator", equator_node)
    graph.add_node("coupling", coupling_node)
    graph.add_node("finalize", finalize_node)

    graph.set_entry_point("solve")

    graph.add_conditional_edges("solve", should_continue, {"reduce": "reduce", "fiber": "fiber"})
    graph.add_conditional_edges("reduce", should_continue, {"reduce": "reduce", "fiber": "fiber"})

    graph.add_edge("fiber", "equator")
    graph.add_edge("equator", "coupling")
    graph.add_edge("coupling", "finalize")
    graph.add_edge("finalize", END)

    workflow = graph.compile()
    if show_graph:
        workflow.get_graph().print_ascii()
    return workflow


def lift_check(
    problem: GameProblem,
    grid: Grid,
    points: list[list[float]] | None = None,
    settings: LiftCheckSettings | None = None,
    solve_config: SolveConfig | None = None,
    show_graph: bool = False,
) -> LiftCheckResult:
    """Run every surface-lift check on a g = 0 problem."""
    if not problem.coefficients.terminal.is_zero:
        raise ConfigurationError("lift checks require g = 0; reduce the boundary data first")
    settings = settings or LiftCheckSettings()
    points = points or default_points(problem, psi_threshold=settings.psi_threshold)
    workflow = create_graph(settings, solve_config, show_graph)
    initial_state = {
        "problem": problem,
        "grid": grid,
        "reference": None,
        "log": [],
        "game": LiftedGame(problem),
        "points": [list(map(float, x)) for x in points],
        "index": 0,
        "rows": [],
        "fiber": None,
        "band": None,
        "equator": None,
        "supermartingale": None,
        "invariance": None,
        "result": None,
    }
    final = workflow.invoke(initial_state, config={"recursion_limit": len(points) + 20})
    result = final["result"]
    logger.info("lift check %s", "passed" if result.passed else "failed")
    return result
