"""
Policy iteration for the discrete Isaacs and regularized equations.

The maximizer's policy is improved in an outer Howard loop; for a fixed
maximizer policy the minimizer's problem is solved by its own Howard loop.
Penalized controls of the extended game enter as extra maximizer policies,
so the plain Isaacs solve and both regularized modes share one engine.
Policy evaluation is an exact sparse solve by default or red-black
Gauss-Seidel sweeps; a repeated maximizer policy switches to damped explicit
iteration.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import spsolve, spsolve_triangular

from .base import ConfigurationError, CrossCheckError, DiscretizationError, NonConvergenceError
from .model import A2Family, GameProblem, PucciSpec, extend_problem
from .operators import (
    DiscreteGame,
    Grid,
    ScalarField,
    a2_weights,
    discrete_hessian,
    isaacs_field,
    monotonicity_report,
    pucci_field,
    sampled_pucci_field,
)
from .simulator import MarkovPolicy

logger = logging.getLogger(__name__)

SolveMode = Literal["extended-game", "obstacle-residual"]


@dataclass(frozen=True)
class SolveConfig:
    """Residual tolerance (max-norm) and iteration budgets of a solve."""

    tolerance: float = 1e-8
    max_outer: int = 200
    max_inner: int = 100
    max_sweeps: int = 50000
    relaxation: float = 1.0
    linear_solver: Literal["spsolve", "gauss_seidel"] = "spsolve"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ConfigurationError(f"tolerance must be positive, got {self.tolerance}")
        if min(self.max_outer, self.max_inner, self.max_sweeps) < 1:
            raise ConfigurationError("iteration budgets must be positive")
        if not 0.0 < self.relaxation <= 1.0:
            raise ConfigurationError(f"relaxation must lie in (0, 1], got {self.relaxation}")
        if self.linear_solver not in ("spsolve", "gauss_seidel"):
            raise ConfigurationError(f"unknown linear solver {self.linear_solver!r}")


def _nonincreasing(history, slack: float = 1e-12) -> bool:
    return bool(np.all(np.diff(np.asarray(history, dtype=float)) <= slack))


@dataclass(frozen=True, eq=False)
class SolveResult:
    field: ScalarField
    alpha_star: np.ndarray
    beta_star: np.ndarray
    beta_table: np.ndarray
    labels: tuple[str, ...]
    residual: float
    residual_history: tuple[float, ...]
    iterations: int
    fallback_used: bool
    certificate: float
    certified: bool = True
    mode: str = "isaacs"
    K: float | None = None
    delta_hat: float | None = None
    sampling_gap: float = 0.0
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.field.grid

    @property
    def residual_monotone(self) -> bool:
        """Residual nonincreasing over the outer iterates; the initial guess is not an iterate."""
        return _nonincreasing(self.residual_history[1:])

    def policies(self, multilinear: bool = False) -> MarkovPolicy:
        """Saddle feedback policies read off the final field."""
        return MarkovPolicy.from_tables(
            self.grid, self.alpha_star, self.beta_table, multilinear=multilinear
        )

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "K": self.K,
            "delta_hat": self.delta_hat,
            "residual": self.residual,
            "certificate": self.certificate,
            "certified": self.certified,
            "iterations": self.iterations,
            "fallback_used": self.fallback_used,
            "residual_monotone": self.residual_monotone,
            "sampling_gap": self.sampling_gap,
            "n_interior": self.grid.n_interior,
            "h": self.grid.h,
        }


class _PolicyEngine:
    """Howard iteration over (maximizer, minimizer) policies on one discrete game."""

    def __init__(
        self,
        game: DiscreteGame,
        config: SolveConfig,
        family: A2Family | None = None,
        K: float = 0.0,
    ):
        self.game = game
        self.grid = game.grid
        self.config = config
        self.n_alpha, self.n_beta = game.weights.shape[:2]
        self.family = family
        self.K = K
        self.nodes = np.arange(self.grid.n_interior)
        if family is not None:
            self.second, self.first = a2_weights(family, self.grid.h)
            self.n_drifts = len(family.drifts)

    # policy improvement

    def _tables(self, u: np.ndarray):
        values = self.game.pair_values(u)
        inner = values.min(axis=1)
        if self.family is None:
            return values, inner, None, None
        diffs = self.game.differences(u)
        s = diffs @ self.second.T
        q = diffs @ self.first.T
        return values, inner, s, q

    def _a2_value(self, u: np.ndarray, s: np.ndarray, q: np.ndarray) -> np.ndarray:
        return s.max(axis=1) + q.max(axis=1) - self.family.rate * u[self.grid.interior] - self.K

    def hamiltonian(self, u: np.ndarray, tables=None) -> tuple[np.ndarray, np.ndarray]:
        """Extended Hamiltonian and its maximizer index (A1 first, then A2; lowest wins)."""
        values, inner, s, q = tables or self._tables(u)
        alpha = np.argmax(inner, axis=0)
        h = inner[alpha, self.nodes]
        if self.family is None:
            return h, alpha
        a2 = self._a2_value(u, s, q)
        use = a2 > h
        index = self.n_alpha + np.argmax(s, axis=1) * self.n_drifts + np.argmax(q, axis=1)
        return np.where(use, a2, h), np.where(use, index, alpha)

    def improve(self, u: np.ndarray, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        tables = self._tables(u)
        h, best = self.hamiltonian(u, tables)
        values, inner, s, q = tables
        is_a1 = alpha < self.n_alpha
        current = np.empty_like(h)
        current[is_a1] = inner[alpha[is_a1], self.nodes[is_a1]]
        if self.family is not None and np.any(~is_a1):
            i, j = np.divmod(alpha[~is_a1] - self.n_alpha, self.n_drifts)
            rows = self.nodes[~is_a1]
            current[~is_a1] = (
                s[rows, i] + q[rows, j]
                - self.family.rate * u[self.grid.interior][rows]
                - self.K
            )
        # keep the current control where it is already optimal
        return np.where(current >= h, alpha, best), h

    # policy evaluation

    def _policy_coefficients(self, alpha: np.ndarray, beta: np.ndarray):
        is_a1 = alpha < self.n_alpha
        a1 = np.where(is_a1, alpha, 0)
        weights = self.game.weights[a1, beta, self.nodes].copy()
        rates = self.game.rates[a1, beta, self.nodes].copy()
        costs = self.game.costs[a1, beta, self.nodes].copy()
        if self.family is not None and np.any(~is_a1):
            i, j = np.divmod(alpha[~is_a1] - self.n_alpha, self.n_drifts)
            weights[~is_a1] = self.second[i] + self.first[j]
            rates[~is_a1] = self.family.rate
            costs[~is_a1] = -self.K
        return weights, rates, costs

    def _system(self, alpha: np.ndarray, beta: np.ndarray):
        weights, rates, costs = self._policy_coefficients(alpha, beta)
        neighbors = self.grid.neighbors
        position = self.grid.position[neighbors]
        inside = position >= 0
        n = self.grid.n_interior
        rows = np.broadcast_to(self.nodes[:, None], neighbors.shape)
        off = sparse.coo_matrix(
            (-weights[inside], (rows[inside], position[inside])), shape=(n, n)
        )
        matrix = (sparse.diags(weights.sum(axis=1) + rates) + off).tocsr()
        rhs = costs + np.sum(np.where(inside, 0.0, weights * self.game.boundary[neighbors]), axis=1)
        return matrix, rhs

    def evaluate(self, alpha: np.ndarray, beta: np.ndarray, u: np.ndarray) -> np.ndarray:
        matrix, rhs = self._system(alpha, beta)
        out = u.copy()
        if self.config.linear_solver == "spsolve":
            out[self.grid.interior] = spsolve(matrix.tocsc(), rhs)
        else:
            out[self.grid.interior] = self._gauss_seidel(matrix, rhs, u[self.grid.interior])
        return out

    def _gauss_seidel(self, matrix, rhs: np.ndarray, start: np.ndarray) -> np.ndarray:
        order = np.argsort(self.grid.colors(), kind="stable")
        permuted = matrix[order][:, order].tocsr()
        lower = sparse.tril(permuted, format="csr")
        upper = permuted - lower
        b = rhs[order]
        x = start[order]
        target = 0.1 * self.config.tolerance
        for _ in range(self.config.max_sweeps):
            x = spsolve_triangular(lower, b - upper @ x, lower=True)
            if np.max(np.abs(permuted @ x - b)) <= target:
                break
        else:
            logger.warning("Gauss-Seidel stopped after %d sweeps", self.config.max_sweeps)
        out = np.empty_like(x)
        out[order] = x
        return out

    def solve_min_player(self, alpha: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Solve the minimizer's problem for a fixed maximizer policy."""
        a1 = np.where(alpha < self.n_alpha, alpha, 0)
        values = self.game.pair_values(u)[a1, :, self.nodes]
        beta = np.argmin(values, axis=1)
        for _ in range(self.config.max_inner):
            w = self.evaluate(alpha, beta, u)
            values = self.game.pair_values(w)[a1, :, self.nodes]
            current = values[self.nodes, beta]
            new = np.where(current <= values.min(axis=1), beta, np.argmin(values, axis=1))
            if np.array_equal(new, beta):
                return w
            beta = new
        logger.warning("minimizer policy iteration hit its budget of %d", self.config.max_inner)
        return w

    def damped(self, u: np.ndarray, history: list[float]) -> np.ndarray:
        """Explicit monotone iteration u += rho H(u) with rho (sum w + c) <= relaxation."""
        diagonal = (self.game.weights.sum(axis=3) + self.game.rates).max()
        if self.family is not None:
            diagonal = max(
                diagonal,
                self.second.sum(axis=1).max() + self.first.sum(axis=1).max() + self.family.rate,
            )
        rho = self.config.relaxation / diagonal
        interior = self.grid.interior
        for _ in range(self.config.max_sweeps):
            h, _ = self.hamiltonian(u)
            residual = float(np.max(np.abs(h)))
            if residual <= self.config.tolerance:
                history.append(residual)
                return u
            u = u.copy()
            u[interior] += rho * h
        history.append(residual)
        raise NonConvergenceError(
            f"damped iteration did not reach {self.config.tolerance:g} in "
            f"{self.config.max_sweeps} sweeps (residual {residual:.3e})",
            history,
        )

    def run(self, initial: np.ndarray | None) -> tuple[np.ndarray, list[float], int, bool]:
        tol = self.config.tolerance
        interior = self.grid.interior
        u = self.game.boundary.copy()
        u[interior] = (initial if initial is not None else self.game.boundary)[interior]

        h, alpha = self.hamiltonian(u)
        history = [float(np.max(np.abs(h)))]
        if history[-1] <= tol:
            return u, history, 0, False

        seen = {alpha.tobytes()}
        for outer in range(1, self.config.max_outer + 1):
            w = self.solve_min_player(alpha, u)
            u = u + self.config.relaxation * (w - u)
            new_alpha, h = self.improve(u, alpha)
            residual = float(np.max(np.abs(h)))
            history.append(residual)
            logger.debug(
                "outer %d: residual %.3e, %d policy changes",
                outer,
                residual,
                int(np.count_nonzero(new_alpha != alpha)),
            )
            if outer > 1 and residual > history[-2] + 1e-12:
                logger.warning(
                    "residual rose at outer iteration %d: %.3e -> %.3e", outer, history[-2], residual
                )
            if residual <= tol:
                return u, history, outer, False
            if np.array_equal(new_alpha, alpha):
                continue
            key = new_alpha.tobytes()
            if key in seen:
                logger.warning("maximizer policy cycle at outer iteration %d; damping", outer)
                return self.damped(u, history), history, outer, True
            seen.add(key)
            alpha = new_alpha

        raise NonConvergenceError(
            f"policy iteration did not reach {tol:g} in {self.config.max_outer} outer iterations "
            f"(residual {history[-1]:.3e})",
            history,
        )

    def saddle_tables(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """First-index maximizer, its minimizer response and the minimizer table per control."""
        values = self.game.pair_values(u)
        _, alpha = self.hamiltonian(u)
        n_controls = self.n_alpha + (self.family.size if self.family is not None else 0)
        table = np.zeros((self.grid.n_interior, n_controls), dtype=int)
        table[:, : self.n_alpha] = np.argmin(values, axis=1).T
        beta = table[self.nodes, alpha]
        return alpha, beta, table


def solve_discrete_game(
    game: DiscreteGame, config: SolveConfig | None = None, initial: np.ndarray | None = None
) -> tuple[np.ndarray, tuple[float, ...]]:
    """Policy iteration on an assembled game, for tables edited after assembly.

    Returns the node values (band nodes keep game.boundary) and the residual history.
    """
    engine = _PolicyEngine(game, config or SolveConfig())
    u, history, _, _ = engine.run(initial)
    return u, tuple(history)


def _check_monotone(
    problem: GameProblem, grid: Grid, allow_nonmonotone: bool, family: A2Family | None = None
):
    report = monotonicity_report(problem, grid, family)
    if not report.monotone and not allow_nonmonotone:
        raise DiscretizationError(
            f"stencil is not monotone (weight {report.worst_weight:.3g} at node {report.node}); "
            "pass allow_nonmonotone=True to proceed",
            node=report.node,
        )
    return report


def solve_isaacs(
    problem: GameProblem,
    grid: Grid,
    config: SolveConfig | None = None,
    *,
    initial: ScalarField | None = None,
    allow_nonmonotone: bool = False,
) -> SolveResult:
    """Solve H_h[v] = 0 in the interior with v = g on the boundary band.

    Args:
        problem: Game problem; whole-space problems use frozen-coefficient band data
        grid: Grid built for the problem
        config: Tolerance and budgets
        initial: Starting field; g everywhere when omitted
        allow_nonmonotone: Proceed with a warning on a non-monotone stencil

    Returns:
        SolveResult with the field, saddle policy tables and residual history
    """
    config = config or SolveConfig()
    _check_monotone(problem, grid, allow_nonmonotone)
    started = time.perf_counter()
    game = DiscreteGame.assemble(problem, grid)
    engine = _PolicyEngine(game, config)
    u, history, iterations, fallback = engine.run(None if initial is None else initial.values)
    field_ = ScalarField(grid, u)
    alpha, beta, table = engine.saddle_tables(u)

    certificate = float(np.max(np.abs(isaacs_field(problem, field_)), initial=0.0))
    certified = certificate <= config.tolerance * (1 + 1e-6)
    if not certified:
        logger.warning("residual certificate %.3e exceeds tolerance", certificate)
    logger.info("isaacs solve converged: %d iterations, residual %.3e", iterations, history[-1])
    return SolveResult(
        field=field_,
        alpha_star=alpha,
        beta_star=beta,
        beta_table=table,
        labels=problem.coefficients.alpha.labels,
        residual=history[-1],
        residual_history=tuple(history),
        iterations=iterations,
        fallback_used=fallback,
        certificate=certificate,
        certified=certified,
        wall_time=time.perf_counter() - started,
    )


def _normalize_mode(mode: str) -> SolveMode:
    normalized = mode.replace("_", "-")
    if normalized not in ("extended-game", "obstacle-residual"):
        raise ConfigurationError(f"unknown regularized mode {mode!r}")
    return normalized


def solve_regularized(
    problem: GameProblem,
    grid: Grid,
    K: float,
    delta_hat: float,
    config: SolveConfig | None = None,
    mode: str = "extended-game",
    *,
    rotations: int = 8,
    obstacle_refinement: int = 4,
    initial: ScalarField | None = None,
    cross_check: bool = False,
    allow_nonmonotone: bool = False,
) -> SolveResult:
    """Solve max(H_h[u], P_h[u] - K) = 0 with u = g on the boundary band.

    extended-game mode solves the Isaacs problem over the extended controls
    and certifies with the sampled regularizer. obstacle-residual mode runs
    the same engine on a refined rotation family and certifies with the exact
    eigenvalue regularizer; the gap between the two regularizers is reported.

    Args:
        problem: Base game problem
        grid: Grid built for the problem
        K: Penalty level
        delta_hat: Ellipticity window of the regularizer
        config: Tolerance and budgets
        mode: "extended-game" or "obstacle-residual"
        rotations: Rotation samples of the penalized family (d >= 2)
        obstacle_refinement: Rotation refinement factor in obstacle-residual mode
        initial: Starting field, typically the Isaacs solution
        cross_check: Also solve the other mode and compare within the comparison bound
        allow_nonmonotone: Proceed with a warning on a non-monotone stencil

    Returns:
        SolveResult of the requested mode
    """
    config = config or SolveConfig()
    mode = _normalize_mode(mode)
    started = time.perf_counter()
    spec = PucciSpec(delta_hat, rotations)
    sampled = spec if mode == "extended-game" else spec.refined(obstacle_refinement)
    ext = extend_problem(problem, spec, K, A2Family.from_spec(problem.dimension, sampled))
    _check_monotone(problem, grid, allow_nonmonotone, ext.a2)

    game = DiscreteGame.assemble(problem, grid)
    engine = _PolicyEngine(game, config, ext.a2, ext.K)
    u, history, iterations, fallback = engine.run(None if initial is None else initial.values)
    field_ = ScalarField(grid, u)
    alpha, beta, table = engine.saddle_tables(u)

    h = isaacs_field(problem, field_)
    sampled_p = sampled_pucci_field(field_, ext.a2)
    exact_p = pucci_field(field_, delta_hat)
    gap = float(np.max(exact_p - sampled_p, initial=0.0))
    if mode == "extended-game":
        certificate = float(np.max(np.abs(np.maximum(h, sampled_p - K)), initial=0.0))
        bound = config.tolerance
    else:
        certificate = float(np.max(np.abs(np.maximum(h, exact_p - K)), initial=0.0))
        bound = config.tolerance + max(gap, 0.0)
    certified = certificate <= bound * (1 + 1e-6)
    if not certified:
        logger.warning("%s certificate %.3e exceeds bound %.3e", mode, certificate, bound)

    result = SolveResult(
        field=field_,
        alpha_star=alpha,
        beta_star=beta,
        beta_table=table,
        labels=ext.labels,
        residual=history[-1],
        residual_history=tuple(history),
        iterations=iterations,
        fallback_used=fallback,
        certificate=certificate,
        certified=certified,
        mode=mode,
        K=float(K),
        delta_hat=float(delta_hat),
        sampling_gap=gap,
        wall_time=time.perf_counter() - started,
    )
    logger.info("%s solve K=%g: %d iterations, certificate %.3e", mode, K, iterations, certificate)

    if cross_check:
        other = solve_regularized(
            problem,
            grid,
            K,
            delta_hat,
            config,
            "obstacle-residual" if mode == "extended-game" else "extended-game",
            rotations=rotations,
            obstacle_refinement=obstacle_refinement,
            initial=initial,
            allow_nonmonotone=allow_nonmonotone,
        )
        compare_modes(problem, result, other, config)
    return result


def mode_agreement_bound(problem: GameProblem, gap: float, tolerance: float) -> float:
    """gap sup Psi + 2 tol max(1, sup Psi): comparison bound between the two modes."""
    scale = problem.comparison_scale()
    return gap * scale + 2.0 * tolerance * max(1.0, scale)


def compare_modes(
    problem: GameProblem, first: SolveResult, second: SolveResult, config: SolveConfig
) -> float:
    """Max interior difference of two regularized solves; raises beyond the comparison bound."""
    difference = float(
        np.max(np.abs(first.field.interior_values - second.field.interior_values), initial=0.0)
    )
    # both results certify against the exact regularizer, so the coarser gap governs
    gap = max(first.sampling_gap, second.sampling_gap)
    bound = mode_agreement_bound(problem, gap, config.tolerance)
    if difference > bound * (1 + 1e-9) + 1e-12:
        raise CrossCheckError(
            f"{first.mode} and {second.mode} differ by {difference:.3e} (bound {bound:.3e})"
        )
    logger.info("mode cross-check: difference %.3e within bound %.3e", difference, bound)
    return difference


@dataclass(frozen=True)
class RegularityReport:
    """max over interior nodes of dist(x, boundary) |D^2_h v_K| / K; reported without a bound."""

    value: float
    node: int | None
    x: tuple[float, ...] | None

    def to_dict(self) -> dict:
        return {"scaled_second_differences": self.value, "node": self.node, "x": self.x}


def boundary_distance(problem: GameProblem, points: np.ndarray) -> np.ndarray:
    domain = problem.domain
    if domain.kind == "ball":
        return domain.radius - np.linalg.norm(points, axis=1)
    if domain.kind == "ellipse":
        axes = np.asarray(domain.axes, dtype=float)
        scaled = np.linalg.norm(points / axes, axis=1)
        return (1.0 - scaled) * axes.min()
    return domain.half_width - np.abs(points).max(axis=1)


def regularity_report(problem: GameProblem, result: SolveResult) -> RegularityReport:
    grid = result.grid
    if not result.K or grid.n_interior == 0:
        return RegularityReport(0.0, None, None)
    diffs = result.field.values[grid.neighbors] - result.field.interior_values[:, None]
    eigenvalues = np.linalg.eigvalsh(discrete_hessian(diffs, grid.dimension, grid.h))
    norms = np.abs(eigenvalues).max(axis=1)
    scaled = np.maximum(boundary_distance(problem, grid.interior_points), 0.0) * norms / result.K
    k = int(np.argmax(scaled))
    return RegularityReport(
        float(scaled[k]), int(grid.interior[k]), tuple(float(v) for v in grid.interior_points[k])
    )


def max_interior_gap(first: ScalarField, second: ScalarField) -> float:
    return float(np.max(np.abs(first.interior_values - second.interior_values), initial=0.0))


def weighted_gap(first: ScalarField, second: ScalarField, weight: np.ndarray) -> float:
    """max interior |u - w| / weight."""
    difference = np.abs(first.interior_values - second.interior_values)
    return float(np.max(difference / weight, initial=0.0)) if difference.size else math.nan
