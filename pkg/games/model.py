"""
Game problems: coefficient presets, terminal costs, domains, assumption
validation and the two problem transformations (penalized extended controls,
zero boundary data).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Literal, Protocol, Sequence

import numpy as np

from .base import ConfigurationError, ControlSet, as_points

if TYPE_CHECKING:
    from .barrier import Barrier

logger = logging.getLogger(__name__)


def diffusion_from_sigma(sigma: np.ndarray) -> np.ndarray:
    """Return a = (1/2) sigma sigma^T for one matrix or a stack of matrices.

    Args:
        sigma: Array of shape (d, d1) or (n, d, d1) with d1 >= d

    Returns:
        Symmetric positive semidefinite array of shape (d, d) or (n, d, d)
    """
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim not in (2, 3):
        raise ConfigurationError(f"sigma must be a matrix, got shape {sigma.shape}")
    d, d1 = sigma.shape[-2:]
    if d1 < d:
        raise ConfigurationError(
            f"sigma has {d1} noise columns for dimension {d}; need d1 >= d"
        )
    a = 0.5 * sigma @ np.swapaxes(sigma, -1, -2)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


@dataclass(frozen=True)
class PairValues:
    """Coefficients of one control pair evaluated at n points."""

    sigma: np.ndarray
    b: np.ndarray
    c: np.ndarray
    f: np.ndarray

    @property
    def a(self) -> np.ndarray:
        return diffusion_from_sigma(self.sigma)


class CoefficientPair(Protocol):
    def evaluate(self, x: np.ndarray) -> PairValues: ...


@dataclass(frozen=True, eq=False)
class AffinePair:
    """Constant sigma, affine drift, discount and running cost."""

    sigma0: np.ndarray
    b0: np.ndarray
    b1: np.ndarray
    c0: float
    c1: np.ndarray
    f0: float
    f1: np.ndarray

    def evaluate(self, x: np.ndarray) -> PairValues:
        n = x.shape[0]
        return PairValues(
            sigma=np.broadcast_to(self.sigma0, (n,) + self.sigma0.shape),
            b=self.b0 + x @ self.b1.T,
            c=self.c0 + x @ self.c1,
            f=self.f0 + x @ self.f1,
        )


@dataclass(frozen=True, eq=False)
class TrigonometricPair:
    """Coefficients modulated by a single plane wave theta = omega.x + phase."""

    sigma0: np.ndarray
    sigma_amp: float
    omega: np.ndarray
    phase: float
    b0: np.ndarray
    b_amp: np.ndarray
    c0: float
    c_amp: float
    f0: float
    f_amp: float

    def evaluate(self, x: np.ndarray) -> PairValues:
        theta = x @ self.omega + self.phase
        s, co = np.sin(theta), np.cos(theta)
        return PairValues(
            sigma=self.sigma0[None] * (1.0 + self.sigma_amp * s)[:, None, None],
            b=self.b0 + co[:, None] * self.b_amp,
            c=self.c0 + self.c_amp * s**2,
            f=self.f0 + self.f_amp * co,
        )


@dataclass(frozen=True, eq=False)
class TablePair:
    """Piecewise-linear coefficients tabulated along the first coordinate.

    sigma is scale(x1) times the leading d x d1 identity block.
    """

    nodes: np.ndarray
    sigma_scale: np.ndarray
    b: np.ndarray
    c: np.ndarray
    f: np.ndarray
    noise_dimension: int

    def evaluate(self, x: np.ndarray) -> PairValues:
        t = x[:, 0]
        d = x.shape[1]
        scale = np.interp(t, self.nodes, self.sigma_scale)
        b = np.stack([np.interp(t, self.nodes, self.b[:, i]) for i in range(d)], axis=1)
        return PairValues(
            sigma=scale[:, None, None] * np.eye(d, self.noise_dimension)[None],
            b=b,
            c=np.interp(t, self.nodes, self.c),
            f=np.interp(t, self.nodes, self.f),
        )


@dataclass(frozen=True, eq=False)
class ShiftedPair:
    """A pair whose running cost is shifted by L g (zero boundary reduction)."""

    base: CoefficientPair
    terminal: "TerminalCost"

    def evaluate(self, x: np.ndarray) -> PairValues:
        values = self.base.evaluate(x)
        lg = (
            np.einsum("nij,nij->n", values.a, self.terminal.hessian(x))
            + np.einsum("ni,ni->n", values.b, self.terminal.gradient(x))
            - values.c * self.terminal.value(x)
        )
        return replace(values, f=values.f + lg)


class TerminalCost:
    """Terminal cost g(x). Subclasses without second derivatives raise."""

    kind: str = "terminal"
    smooth: bool = False

    def value(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise ConfigurationError(f"terminal cost '{self.kind}' has no gradient")

    def hessian(self, x: np.ndarray) -> np.ndarray:
        raise ConfigurationError(f"terminal cost '{self.kind}' has no second derivatives")

    @property
    def is_zero(self) -> bool:
        return False

    def sup_abs(self, points: np.ndarray) -> float:
        return float(np.max(np.abs(self.value(points)), initial=0.0))


@dataclass(frozen=True, eq=False)
class QuadraticCost(TerminalCost):
    """g(x) = x^T Q x + p^T x + r; covers the zero, constant and linear presets."""

    Q: np.ndarray
    p: np.ndarray
    r: float = 0.0
    kind: str = "quadratic"
    smooth: bool = True

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.einsum("ni,ij,nj->n", x, self.Q, x) + x @ self.p + self.r

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return x @ (self.Q + self.Q.T) + self.p

    def hessian(self, x: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.Q + self.Q.T, (x.shape[0],) + self.Q.shape)

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.Q) or np.any(self.p) or self.r)


@dataclass(frozen=True, eq=False)
class TableCost(TerminalCost):
    """Piecewise-linear g along the first coordinate; no second derivatives."""

    nodes: np.ndarray
    values: np.ndarray
    kind: str = "table"

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.interp(x[:, 0], self.nodes, self.values)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)


def zero_cost(dimension: int) -> QuadraticCost:
    return QuadraticCost(np.zeros((dimension, dimension)), np.zeros(dimension), 0.0, kind="zero")


def constant_cost(dimension: int, value: float) -> QuadraticCost:
    return QuadraticCost(
        np.zeros((dimension, dimension)), np.zeros(dimension), float(value), kind="constant"
    )


def linear_cost(p: Sequence[float], offset: float = 0.0) -> QuadraticCost:
    p = np.asarray(p, dtype=float)
    return QuadraticCost(np.zeros((p.size, p.size)), p, float(offset), kind="linear")


@dataclass(frozen=True, eq=False)
class GameCoefficients:
    """Game data sigma, b, c, f over (alpha, beta, x), terminal cost g and constants."""

    alpha: ControlSet
    beta: ControlSet
    pairs: tuple[tuple[CoefficientPair, ...], ...]
    terminal: TerminalCost
    dimension: int
    noise_dimension: int
    K0: float
    delta: float
    delta1: float | None = None

    def __post_init__(self):
        if len(self.pairs) != len(self.alpha) or any(
            len(row) != len(self.beta) for row in self.pairs
        ):
            raise ConfigurationError(
                f"coefficient table must be {len(self.alpha)} x {len(self.beta)}"
            )
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.K0 <= 0:
            raise ConfigurationError(f"K0 must be positive, got {self.K0}")
        if self.noise_dimension < self.dimension:
            raise ConfigurationError(
                f"noise dimension {self.noise_dimension} below dimension {self.dimension}"
            )
        if self.delta1 is not None and self.delta1 <= 0:
            raise ConfigurationError(f"delta1 must be positive, got {self.delta1}")

    @property
    def control_pairs(self) -> list[tuple[int, int]]:
        return list(itertools.product(range(len(self.alpha)), range(len(self.beta))))

    def evaluate(self, ia: int, ib: int, x: np.ndarray) -> PairValues:
        return self.pairs[ia][ib].evaluate(as_points(x, self.dimension))

    def diffusion(self, ia: int, ib: int, x: np.ndarray) -> np.ndarray:
        return self.evaluate(ia, ib, x).a

    def g(self, x: np.ndarray) -> np.ndarray:
        return self.terminal.value(as_points(x, self.dimension))

    def sup_abs_f(self, points: np.ndarray) -> float:
        return max(
            float(np.max(np.abs(self.evaluate(ia, ib, points).f), initial=0.0))
            for ia, ib in self.control_pairs
        )

    def frozen_value(self, x: np.ndarray) -> np.ndarray:
        """max_alpha min_beta f/c: the value of the game with coefficients frozen at x."""
        points = as_points(x, self.dimension)
        table = np.empty((len(self.alpha), len(self.beta), points.shape[0]))
        for ia, ib in self.control_pairs:
            values = self.evaluate(ia, ib, points)
            table[ia, ib] = values.f / values.c
        return table.min(axis=1).max(axis=0)


@dataclass(frozen=True)
class Domain:
    kind: Literal["ball", "ellipse", "whole_space"]
    radius: float | None = None
    axes: tuple[float, ...] | None = None
    half_width: float | None = None
    barrier_mu: float | None = None

    def __post_init__(self):
        if self.kind == "ball" and not (self.radius and self.radius > 0):
            raise ConfigurationError("ball domain needs a positive radius")
        if self.kind == "ellipse" and not (self.axes and min(self.axes) > 0):
            raise ConfigurationError("ellipse domain needs positive axes")
        if self.kind == "whole_space" and not (self.half_width and self.half_width > 0):
            raise ConfigurationError("whole-space domain needs a positive truncation half_width")

    @property
    def bounding_radius(self) -> float:
        if self.kind == "ball":
            return float(self.radius)
        if self.kind == "ellipse":
            return float(max(self.axes))
        return float(self.half_width)

    @property
    def is_whole_space(self) -> bool:
        return self.kind == "whole_space"


@dataclass(frozen=True, eq=False)
class GameProblem:
    """Coefficients together with their domain and (for bounded domains) barrier."""

    coefficients: GameCoefficients
    domain: Domain
    barrier: "Barrier | None" = None
    name: str = "problem"

    def __post_init__(self):
        if not self.domain.is_whole_space and self.barrier is None:
            raise ConfigurationError(f"{self.domain.kind} domain requires a barrier")
        if self.domain.is_whole_space and self.coefficients.delta1 is None:
            raise ConfigurationError("whole-space problems require delta1")

    @property
    def dimension(self) -> int:
        return self.coefficients.dimension

    def inside(self, x: np.ndarray) -> np.ndarray:
        points = as_points(x, self.dimension)
        if self.barrier is None:
            return np.max(np.abs(points), axis=1) < self.domain.half_width
        return self.barrier.psi(points) > 0

    def sample_points(self, points_per_axis: int = 33) -> np.ndarray:
        """Uniform lattice points of the bounding box lying in the closed domain."""
        r = self.domain.bounding_radius
        axis = np.linspace(-r, r, points_per_axis)
        mesh = np.meshgrid(*[axis] * self.dimension, indexing="ij")
        points = np.stack([m.ravel() for m in mesh], axis=1)
        if self.barrier is None:
            return points
        return points[self.barrier.psi(points) >= 0]

    def sup_abs_f(self) -> float:
        return self.coefficients.sup_abs_f(self.sample_points(17))

    def sup_abs_g(self) -> float:
        points = self.sample_points(17)
        if self.barrier is not None:
            points = np.vstack([points, self.barrier.level_set_points(0.0, 64)])
        return self.coefficients.terminal.sup_abs(points)

    def comparison_scale(self) -> float:
        """Sup of the barrier, or 1/delta1 in whole space; scales comparison bounds."""
        if self.barrier is None:
            return 1.0 / self.coefficients.delta1
        return self.barrier.sup_psi


# Assumption validation


@dataclass(frozen=True)
class SamplePlan:
    points_per_axis: int = 33
    n_pairs: int = 2000
    pair_radius: float | None = None
    tolerance: float = 1e-6
    boundary_points: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.points_per_axis < 2 or self.n_pairs < 1:
            raise ConfigurationError("sample plan needs at least 2 points per axis and 1 pair")
        if self.tolerance < 0:
            raise ConfigurationError("sample plan tolerance must be nonnegative")


@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    value: float
    limit: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "limit": self.limit,
            "passed": self.passed,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def failures(self) -> list[AssumptionCheck]:
        return [check for check in self.checks if not check.passed]

    def get(self, name: str) -> AssumptionCheck:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [c.to_dict() for c in self.checks]}


def _pair_label(coefficients: GameCoefficients, ia: int, ib: int) -> str:
    return f"alpha={coefficients.alpha.labels[ia]}, beta={coefficients.beta.labels[ib]}"


def _lipschitz_pairs(problem: GameProblem, interior: np.ndarray, plan: SamplePlan):
    rng = np.random.default_rng(plan.seed)
    d = problem.dimension
    spacing = 2 * problem.domain.bounding_radius / (plan.points_per_axis - 1)
    radius = plan.pair_radius or 0.5 * spacing
    base = interior[rng.integers(0, interior.shape[0], size=plan.n_pairs)]
    directions = rng.standard_normal((plan.n_pairs, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    lengths = radius * rng.uniform(0.5, 1.0, size=plan.n_pairs)
    return base, base + lengths[:, None] * directions


def validate_assumptions(problem: GameProblem, plan: SamplePlan | None = None) -> ValidationReport:
    """Check bounds, Lipschitz quotients, ellipticity, discount sign and barrier by sampling.

    Args:
        problem: Game problem with its domain and barrier
        plan: Sampling density and tolerance

    Returns:
        ValidationReport with one check per assumption; never raises for failures
    """
    plan = plan or SamplePlan()
    coefficients = problem.coefficients
    K0, delta, tol = coefficients.K0, coefficients.delta, plan.tolerance
    points = problem.sample_points(plan.points_per_axis)
    if problem.barrier is not None:
        points = np.vstack([points, problem.barrier.level_set_points(0.0, plan.boundary_points)])
    x, y = _lipschitz_pairs(problem, points, plan)
    distance = np.linalg.norm(x - y, axis=1)

    worst = {name: (0.0, "") for name in ("sigma", "b", "c", "f")}
    quotient = {name: (0.0, "") for name in ("sigma", "b", "c", "f")}
    eig_low, eig_high = (np.inf, ""), (-np.inf, "")
    c_min = (np.inf, "")

    for ia, ib in coefficients.control_pairs:
        label = _pair_label(coefficients, ia, ib)
        at = coefficients.evaluate(ia, ib, points)
        px, py = coefficients.evaluate(ia, ib, x), coefficients.evaluate(ia, ib, y)
        magnitudes = {
            "sigma": np.linalg.norm(at.sigma, axis=(1, 2)),
            "b": np.linalg.norm(at.b, axis=1),
            "c": np.abs(at.c),
            "f": np.abs(at.f),
        }
        differences = {
            "sigma": np.linalg.norm(px.sigma - py.sigma, axis=(1, 2)),
            "b": np.linalg.norm(px.b - py.b, axis=1),
            "c": np.abs(px.c - py.c),
            "f": np.abs(px.f - py.f),
        }
        for name in worst:
            k = int(np.argmax(magnitudes[name]))
            if magnitudes[name][k] > worst[name][0]:
                worst[name] = (float(magnitudes[name][k]), f"{label}, x={points[k].tolist()}")
            ratios = differences[name] / distance
            k = int(np.argmax(ratios))
            if ratios[k] > quotient[name][0]:
                quotient[name] = (
                    float(ratios[k]),
                    f"{label}, x={x[k].tolist()}, y={y[k].tolist()}",
                )
        eigenvalues = np.linalg.eigvalsh(at.a)
        k = int(np.argmin(eigenvalues[:, 0]))
        if eigenvalues[k, 0] < eig_low[0]:
            eig_low = (float(eigenvalues[k, 0]), f"{label}, x={points[k].tolist()}")
        k = int(np.argmax(eigenvalues[:, -1]))
        if eigenvalues[k, -1] > eig_high[0]:
            eig_high = (float(eigenvalues[k, -1]), f"{label}, x={points[k].tolist()}")
        k = int(np.argmin(at.c))
        if at.c[k] < c_min[0]:
            c_min = (float(at.c[k]), f"{label}, x={points[k].tolist()}")

    checks = []
    for name in worst:
        value, detail = worst[name]
        checks.append(AssumptionCheck(f"bound:{name}", value, K0, value <= K0 * (1 + tol), detail))
    for name in quotient:
        value, detail = quotient[name]
        checks.append(
            AssumptionCheck(f"lipschitz:{name}", value, K0, value <= K0 * (1 + tol), detail)
        )
    checks.append(
        AssumptionCheck(
            "ellipticity:lower", eig_low[0], delta, eig_low[0] >= delta * (1 - tol), eig_low[1]
        )
    )
    checks.append(
        AssumptionCheck(
            "ellipticity:upper",
            eig_high[0],
            1.0 / delta,
            eig_high[0] <= (1 + tol) / delta,
            eig_high[1],
        )
    )
    checks.append(AssumptionCheck("discount:nonnegative", c_min[0], 0.0, c_min[0] >= -tol, c_min[1]))
    if problem.domain.is_whole_space:
        delta1 = coefficients.delta1
        checks.append(
            AssumptionCheck(
                "discount:delta1", c_min[0], delta1, c_min[0] >= delta1 * (1 - tol), c_min[1]
            )
        )
        checks.append(_far_field_check(problem, tol))
    else:
        checks.extend(_barrier_checks(problem, plan))

    report = ValidationReport(tuple(checks))
    for failure in report.failures():
        logger.info("assumption %s failed: %.6g vs %.6g (%s)", failure.name, failure.value, failure.limit, failure.detail)
    return report


def _far_field_check(problem: GameProblem, tol: float) -> AssumptionCheck:
    """Coefficient magnitudes along the axes far outside the truncation box."""
    coefficients = problem.coefficients
    d = problem.dimension
    scales = problem.domain.bounding_radius * np.array([2.0, 10.0, 100.0])
    directions = np.vstack([np.eye(d), -np.eye(d)])
    points = (scales[:, None, None] * directions[None]).reshape(-1, d)
    worst, detail = 0.0, ""
    for ia, ib in coefficients.control_pairs:
        at = coefficients.evaluate(ia, ib, points)
        magnitudes = np.max(
            np.stack(
                [
                    np.linalg.norm(at.sigma, axis=(1, 2)),
                    np.linalg.norm(at.b, axis=1),
                    np.abs(at.c),
                    np.abs(at.f),
                ]
            ),
            axis=0,
        )
        k = int(np.argmax(magnitudes))
        if magnitudes[k] > worst:
            worst = float(magnitudes[k])
            detail = f"{_pair_label(coefficients, ia, ib)}, x={points[k].tolist()}"
    K0 = coefficients.K0
    return AssumptionCheck("bound:far_field", worst, K0, worst <= K0 * (1 + tol), detail)


def _barrier_checks(problem: GameProblem, plan: SamplePlan) -> list[AssumptionCheck]:
    from .barrier import verification_points, verify_barrier

    barrier = problem.barrier
    tol = plan.tolerance
    lattice = problem.sample_points(plan.points_per_axis)
    interior = lattice[barrier.psi(lattice) > 0]
    boundary = barrier.level_set_points(0.0, plan.boundary_points)
    psi_boundary = np.abs(barrier.psi(boundary))
    scale = max(1.0, barrier.sup_psi)
    grad_boundary = np.linalg.norm(barrier.grad_psi(boundary), axis=1)

    r = problem.domain.bounding_radius
    directions = barrier.level_set_points(0.0, plan.boundary_points)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    t = np.linspace(r, 4 * r, 16)
    rays = (t[None, :, None] * directions[:, None, :]).reshape(-1, problem.dimension)
    along = barrier.psi(rays).reshape(directions.shape[0], t.size)
    decreasing = bool(np.all(np.diff(along, axis=1) < 0) and np.all(along[:, -1] < 0))

    violation = verify_barrier(
        barrier, problem.coefficients, verification_points(barrier.shape, barrier.level)
    )
    psi_interior = float(barrier.psi(interior).min()) if interior.size else 0.0
    return [
        AssumptionCheck("barrier:interior", psi_interior, 0.0, psi_interior > 0),
        AssumptionCheck(
            "barrier:boundary",
            float(psi_boundary.max()),
            1e-9 * scale,
            psi_boundary.max() <= 1e-9 * scale,
        ),
        AssumptionCheck(
            "barrier:gradient", float(grad_boundary.min()), 1.0, grad_boundary.min() >= 1.0 - tol
        ),
        AssumptionCheck("barrier:rays", float(along[:, -1].max()), 0.0, decreasing),
        AssumptionCheck("barrier:supersolution", violation, 0.0, violation <= tol),
    ]


# Extended control set


@dataclass(frozen=True)
class PucciSpec:
    """Ellipticity window of the regularizer and rotation sampling of its vertex family."""

    delta_hat: float
    rotations: int = 8

    def __post_init__(self):
        if not 0.0 < self.delta_hat < 1.0:
            raise ConfigurationError(f"delta_hat must lie in (0, 1), got {self.delta_hat}")
        if self.rotations < 1:
            raise ConfigurationError("rotations must be positive")

    def refined(self, factor: int) -> "PucciSpec":
        return PucciSpec(self.delta_hat, self.rotations * factor)


def _rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def diagonally_dominant(a: np.ndarray, tol: float = 1e-12) -> bool:
    """a_ii >= sum_{j != i} |a_ij| in every row: the 2d-point stencil is monotone for a."""
    off = np.abs(a).sum(axis=-1) - np.abs(np.diagonal(a, axis1=-2, axis2=-1))
    return bool(np.all(np.diagonal(a, axis1=-2, axis2=-1) - off >= -tol))


def second_order_family(dimension: int, delta_hat: float, rotations: int) -> np.ndarray:
    """Matrices with spectrum in {delta_hat, 1/delta_hat}, rotated in each coordinate plane.

    Rotations whose matrix is not diagonally dominant are dropped; the
    rotation by pi/4 always survives.
    """
    lo, hi = delta_hat, 1.0 / delta_hat
    diagonals = list(itertools.product((lo, hi), repeat=dimension))
    matrices = [np.diag(eigs) for eigs in diagonals]
    dropped = 0
    for i, j in itertools.combinations(range(dimension), 2):
        plane = np.ix_([i, j], [i, j])
        for eigs in diagonals:
            if eigs[i] <= eigs[j]:
                continue
            for k in range(1, rotations):
                rotation = _rotation(math.pi * k / rotations)
                m = np.diag(eigs)
                m[plane] = rotation @ np.diag([eigs[i], eigs[j]]) @ rotation.T
                if not diagonally_dominant(m):
                    dropped += 1
                    continue
                matrices.append(m)
    if dropped:
        logger.debug("dropped %d rotated matrices without diagonal dominance", dropped)
    return np.array(matrices)


def drift_family(dimension: int, delta_hat: float, rotations: int) -> np.ndarray:
    """Zero, the coordinate vertices +-e_i/delta_hat and rotated planar directions."""
    speed = 1.0 / delta_hat
    drifts = [np.zeros(dimension)]
    for i in range(dimension):
        for sign in (1.0, -1.0):
            e = np.zeros(dimension)
            e[i] = sign * speed
            drifts.append(e)
    for i, j in itertools.combinations(range(dimension), 2):
        for k in range(2 * rotations):
            theta = math.pi * k / rotations
            c, s = math.cos(theta), math.sin(theta)
            # coordinate directions are already present
            if min(abs(c), abs(s)) < 1e-12:
                continue
            e = np.zeros(dimension)
            e[i], e[j] = speed * c, speed * s
            drifts.append(e)
    return np.array(drifts)


@dataclass(frozen=True, eq=False)
class A2Family:
    """Penalized constant-coefficient controls, stored as matrices x drifts with a common rate."""

    matrices: np.ndarray
    drifts: np.ndarray
    rate: float

    def __post_init__(self):
        if len(self.matrices) == 0 or len(self.drifts) == 0:
            raise ConfigurationError("penalized control family must not be empty")

    @property
    def size(self) -> int:
        return len(self.matrices) * len(self.drifts)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(
            f"P:a{i}:b{j}"
            for i, j in itertools.product(range(len(self.matrices)), range(len(self.drifts)))
        )

    def vertex(self, index: int) -> tuple[np.ndarray, np.ndarray, float]:
        i, j = divmod(index, len(self.drifts))
        return self.matrices[i], self.drifts[j], self.rate

    def vertex_sigma(self, index: int, noise_dimension: int) -> np.ndarray:
        """A volatility with (1/2) sigma sigma^T equal to the vertex matrix, padded to d1 columns."""
        a, _, _ = self.vertex(index)
        d = a.shape[0]
        if noise_dimension < d:
            raise ConfigurationError(f"noise dimension {noise_dimension} below dimension {d}")
        sigma = np.zeros((d, noise_dimension))
        sigma[:, :d] = np.linalg.cholesky(2.0 * a)
        return sigma

    def vertices(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        return [
            (a, b, self.rate) for a, b in itertools.product(self.matrices, self.drifts)
        ]

    @classmethod
    def from_spec(cls, dimension: int, spec: PucciSpec) -> "A2Family":
        return cls(
            matrices=second_order_family(dimension, spec.delta_hat, spec.rotations),
            drifts=drift_family(dimension, spec.delta_hat, spec.rotations),
            rate=spec.delta_hat,
        )


@dataclass(frozen=True, eq=False)
class ExtendedProblem:
    """Base game with the maximizer's controls extended by the penalized family."""

    base: GameProblem
    pucci: PucciSpec
    a2: A2Family
    K: float

    @property
    def labels(self) -> tuple[str, ...]:
        return self.base.coefficients.alpha.labels + self.a2.labels

    @property
    def a2_controls(self) -> list[tuple[np.ndarray, np.ndarray, float]]:
        return self.a2.vertices()

    def running_cost(self, ia: int, ib: int, x: np.ndarray) -> np.ndarray:
        """f_K: the base running cost on A1 and -K on the penalized controls."""
        coefficients = self.base.coefficients
        n_alpha = len(coefficients.alpha)
        if ia < n_alpha:
            return coefficients.evaluate(ia, ib, x).f
        points = as_points(x, coefficients.dimension)
        return np.full(points.shape[0], -self.K)


def extend_problem(
    problem: GameProblem,
    pucci_spec: PucciSpec,
    K: float,
    family: A2Family | None = None,
) -> ExtendedProblem:
    """Extend the maximizer's control set by constant-coefficient controls with cost -K.

    Args:
        problem: Base game problem
        pucci_spec: delta_hat and rotation sampling
        K: Penalty level, K >= 0
        family: Explicit penalized family; built from pucci_spec when omitted

    Returns:
        ExtendedProblem whose Hamiltonian realizes max(H, P - K) up to vertex sampling
    """
    if K < 0:
        raise ConfigurationError(f"penalty K must be nonnegative, got {K}")
    d = problem.dimension
    family = family or A2Family.from_spec(d, pucci_spec)
    if family.matrices.shape[1:] != (d, d) or family.drifts.shape[1:] != (d,):
        raise ConfigurationError("penalized family dimension does not match the problem")
    lo, hi = pucci_spec.delta_hat, 1.0 / pucci_spec.delta_hat
    spectra = np.linalg.eigvalsh(family.matrices)
    if spectra.min() < lo * (1 - 1e-9) or spectra.max() > hi * (1 + 1e-9):
        raise ConfigurationError("penalized second-order family leaves the ellipticity window")
    if family.rate < 0:
        raise ConfigurationError("penalized family discount must be nonnegative")
    clashes = set(family.labels) & set(problem.coefficients.alpha.labels)
    if clashes:
        raise ConfigurationError(f"penalized control labels clash with A1: {sorted(clashes)}")
    return ExtendedProblem(base=problem, pucci=pucci_spec, a2=family, K=float(K))


def reduce_boundary_to_zero(problem: GameProblem) -> GameProblem:
    """Move the terminal cost into the running cost: f' = L g + f, g' = 0.

    Value functions of the two problems satisfy v' = v - g.
    """
    coefficients = problem.coefficients
    terminal = coefficients.terminal
    if terminal.is_zero:
        return problem
    if not terminal.smooth:
        raise ConfigurationError(
            f"terminal cost '{terminal.kind}' lacks second derivatives; cannot reduce"
        )
    pairs = tuple(tuple(ShiftedPair(pair, terminal) for pair in row) for row in coefficients.pairs)
    reduced = replace(coefficients, pairs=pairs, terminal=zero_cost(coefficients.dimension))
    return replace(problem, coefficients=reduced, name=f"{problem.name}:zero-boundary")
