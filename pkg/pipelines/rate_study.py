"""
K-convergence study of the regularized solutions.

Graph Structure: reference -> regularize (loop over K) -> summarize -> END
- reference node: Isaacs solve on the study grid (and an optional finer grid)
- regularize node: one regularized solve per visit, warm-started at v
- summarize node: slope of log e_K against log K and the empirical constant
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from langgraph.graph import END, StateGraph

from games.base import ConfigurationError, NonConvergenceError, StudyAbortedError
from games.model import GameProblem
from games.operators import Grid, pucci_field
from games.solver import SolveConfig, solve_isaacs, solve_regularized

from .base import RateStudyState, has_more

logger = logging.getLogger(__name__)

CSV_HEADER = ["K", "e_K", "weighted_e_K", "ratio", "iterations", "wall_time_ms"]
SLOPE_WINDOW = (-1.3, -0.7)


@dataclass(frozen=True)
class RateRow:
    K: float
    e_K: float
    weighted_e_K: float
    iterations: int
    wall_time: float
    ratio: float | None = None

    def csv_row(self, timings: bool = False) -> list[str]:
        return [
            f"{self.K:g}",
            f"{self.e_K:.12e}",
            f"{self.weighted_e_K:.12e}",
            "" if self.ratio is None else f"{self.ratio:.6f}",
            str(self.iterations),
            f"{1000.0 * self.wall_time:.1f}" if timings else "",
        ]


@dataclass(frozen=True)
class RateStudyResult:
    rows: tuple[RateRow, ...]
    slope: float | None
    empirical_N: float
    threshold: float
    reference_gap: float | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        Ks = [row.K for row in self.rows]
        if any(b <= a for a, b in zip(Ks, Ks[1:])):
            raise ConfigurationError("rate study K values must be strictly increasing")

    @property
    def errors(self) -> np.ndarray:
        return np.array([row.e_K for row in self.rows])

    @property
    def obstacle_active(self) -> list[bool]:
        return [row.K < self.threshold for row in self.rows]

    @property
    def active_slope(self) -> float | None:
        """Slope fitted over the rows where the obstacle is still active."""
        active = [row for row in self.rows if row.K < self.threshold]
        return fitted_slope([row.K for row in active], [row.e_K for row in active])

    @property
    def weighted_spread(self) -> float | None:
        """max / min of the positive weighted errors."""
        weighted = [row.weighted_e_K for row in self.rows if row.weighted_e_K > 0]
        if len(weighted) < 2:
            return None
        return max(weighted) / min(weighted)

    @property
    def within_window(self) -> bool:
        slope = self.active_slope
        return slope is not None and SLOPE_WINDOW[0] <= slope <= SLOPE_WINDOW[1]

    def csv_rows(self, timings: bool = False) -> list[list[str]]:
        return [CSV_HEADER] + [row.csv_row(timings) for row in self.rows]

    def summary(self) -> dict:
        return {
            "slope": self.slope,
            "active_slope": self.active_slope,
            "within_window": self.within_window,
            "weighted_spread": self.weighted_spread,
            "empirical_N": self.empirical_N,
            "threshold": self.threshold,
            "reference_gap": self.reference_gap,
            "rows": [row.__dict__ for row in self.rows],
        }


def fitted_slope(Ks: list[float], errors: list[float]) -> float | None:
    """Least-squares slope of log e_K against log K over the positive errors."""
    pairs = [(K, e) for K, e in zip(Ks, errors) if e > 0]
    if len(pairs) < 2:
        return None
    log_K, log_e = np.log(np.array(pairs)).T
    return float(np.polyfit(log_K, log_e, 1)[0])


def with_ratios(rows: list[RateRow]) -> list[RateRow]:
    """Fill e_K / e_K' for consecutive K < K'; undefined when e_K' = 0."""
    out = []
    for row, following in zip(rows, rows[1:] + [None]):
        ratio = None
        if following is not None and following.e_K > 0:
            ratio = row.e_K / following.e_K
        out.append(RateRow(row.K, row.e_K, row.weighted_e_K, row.iterations, row.wall_time, ratio))
    return out


def create_graph(
    K_list: list[float],
    delta_hat: float,
    config: SolveConfig | None = None,
    mode: str = "extended-game",
    rotations: int = 8,
    reference_h: float | None = None,
    show_graph: bool = False,
) -> StateGraph:
    """Create the rate-study graph.

    Args:
        K_list: Strictly increasing penalty levels, all >= 1
        delta_hat: Ellipticity window of the regularizer
        config: Solver tolerance and budgets
        mode: Regularized solve mode
        rotations: Rotation samples of the penalized family
        reference_h: Grid spacing of an optional finer Isaacs reference
        show_graph: Print the graph as ASCII after compiling

    Returns:
        Compiled StateGraph ready for execution
    """
    config = config or SolveConfig()
    if any(K < 1 for K in K_list) or any(b <= a for a, b in zip(K_list, K_list[1:])):
        raise ConfigurationError(f"K list must be increasing and >= 1, got {K_list}")

    def reference_node(state: RateStudyState) -> dict:
        """Solve the Isaacs equation on the study grid."""
        problem, grid = state["problem"], state["grid"]
        try:
            reference = solve_isaacs(problem, grid, config)
        except NonConvergenceError as error:
            raise StudyAbortedError(f"reference solve failed: {error}", partial=[]) from error
        fine = None
        if reference_h is not None:
            try:
                fine = solve_isaacs(problem, Grid.build(problem, reference_h), config)
            except NonConvergenceError as error:
                raise StudyAbortedError(f"fine reference solve failed: {error}", partial=[]) from error
        return {
            "reference": reference,
            "fine_reference": fine,
            "log": [f"reference solve: {reference.iterations} iterations"],
        }

    def regularize_node(state: RateStudyState) -> dict:
        """Solve the regularized equation for the next K."""
        problem, grid, reference = state["problem"], state["grid"], state["reference"]
        K = state["K_list"][state["index"]]
        try:
            result = solve_regularized(
                problem,
                grid,
                K,
                delta_hat,
                config,
                mode,
                rotations=rotations,
                initial=reference.field,
            )
        except NonConvergenceError as error:
            partial = with_ratios([RateRow(**row) for row in state["rows"]])
            raise StudyAbortedError(f"solve at K={K:g} failed: {error}", partial=partial) from error

        difference = np.abs(result.field.interior_values - reference.field.interior_values)
        weight = grid.psi[grid.interior] / K
        row = {
            "K": float(K),
            "e_K": float(np.max(difference, initial=0.0)),
            "weighted_e_K": float(np.max(difference / weight, initial=0.0)),
            "iterations": result.iterations,
            "wall_time": result.wall_time,
        }
        logger.debug("K=%g: e_K=%.4e weighted=%.4e", K, row["e_K"], row["weighted_e_K"])
        return {
            "rows": state["rows"] + [row],
            "index": state["index"] + 1,
            "log": state["log"] + [f"K={K:g} e_K={row['e_K']:.4e}"],
        }

    def summarize_node(state: RateStudyState) -> dict:
        """Fit the slope and report the empirical constant."""
        rows = with_ratios([RateRow(**row) for row in state["rows"]])
        reference = state["reference"]
        threshold = float(np.max(pucci_field(reference.field, delta_hat), initial=0.0))
        reference_gap = None
        fine = state.get("fine_reference")
        if fine is not None:
            grid = state["grid"]
            fine_values = fine.field.interpolate(grid.interior_points)
            reference_gap = float(np.max(np.abs(reference.field.interior_values - fine_values), initial=0.0))
        result = RateStudyResult(
            rows=tuple(rows),
            slope=fitted_slope([r.K for r in rows], [r.e_K for r in rows]),
            empirical_N=max((r.weighted_e_K for r in rows), default=0.0),
            threshold=threshold,
            reference_gap=reference_gap,
        )
        return {"result": result}

    def should_continue(state: RateStudyState) -> Literal["regularize", "summarize"]:
        return "regularize" if has_more(state, "K_list") else "summarize"

    graph = StateGraph(RateStudyState)

    graph.add_node("reference", reference_node)
    graph.add_node("regularize", regularize_node)
    graph.add_node("summarize", summarize_node)

    graph.set_entry_point("reference")

    graph.add_conditional_edges(
        "reference", should_continue, {"regularize": "regularize", "summarize": "summarize"}
    )
    graph.add_conditional_edges(
        "regularize", should_continue, {"regularize": "regularize", "summarize": "summarize"}
    )

    graph.add_edge("summarize", END)

    workflow = graph.compile()
    if show_graph:
        workflow.get_graph().print_ascii()
    return workflow


def rate_study(
    problem: GameProblem,
    grid: Grid,
    K_list: list[float],
    delta_hat: float,
    config: SolveConfig | None = None,
    mode: str = "extended-game",
    *,
    rotations: int = 8,
    reference_h: float | None = None,
    show_graph: bool = False,
) -> RateStudyResult:
    """Tabulate e_K = sup |v_K - v| and sup |v_K - v| K / Psi over K_list.

    Raises StudyAbortedError carrying the completed rows when a member solve fails.
    """
    workflow = create_graph(K_list, delta_hat, config, mode, rotations, reference_h, show_graph)
    initial_state = {
        "problem": problem,
        "grid": grid,
        "reference": None,
        "log": [],
        "K_list": list(K_list),
        "index": 0,
        "rows": [],
        "fine_reference": None,
        "result": None,
    }
    final = workflow.invoke(initial_state, config={"recursion_limit": 2 * len(K_list) + 10})
    result = final["result"]
    logger.info("rate study: slope %s, empirical N %.4g", result.slope, result.empirical_N)
    return result
