"""
Exponential barriers for ball and ellipse domains.

Psi(x) = kappa (e^{mu s} - e^{mu q(x)}) with q(x) = x^T M x; the domain is
{q < s}. M = I, s = R^2 for a ball and M = diag(1/r_i^2), s = 1 for an
ellipse.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .base import BarrierConstructionError, ConfigurationError, as_points
from .model import Domain, GameCoefficients

logger = logging.getLogger(__name__)

MAX_DOUBLINGS = 60
BISECTION_STEPS = 40


@dataclass(frozen=True, eq=False)
class Barrier:
    kappa: float
    mu: float
    shape: np.ndarray
    level: float
    boundary_gradient_floor: float = 1.0

    @property
    def dimension(self) -> int:
        return self.shape.shape[0]

    @property
    def sup_psi(self) -> float:
        return self.kappa * (math.exp(self.mu * self.level) - 1.0)

    def _q(self, points: np.ndarray) -> np.ndarray:
        return np.einsum("ni,ij,nj->n", points, self.shape, points)

    def psi(self, x: np.ndarray) -> np.ndarray:
        points = as_points(x, self.dimension)
        return self.kappa * (math.exp(self.mu * self.level) - np.exp(self.mu * self._q(points)))

    def grad_psi(self, x: np.ndarray) -> np.ndarray:
        points = as_points(x, self.dimension)
        scale = self.kappa * self.mu * np.exp(self.mu * self._q(points))
        return -scale[:, None] * 2.0 * (points @ self.shape)

    def hess_psi(self, x: np.ndarray) -> np.ndarray:
        points = as_points(x, self.dimension)
        scale = self.kappa * self.mu * np.exp(self.mu * self._q(points))
        m = 2.0 * (points @ self.shape)
        outer = np.einsum("ni,nj->nij", m, m)
        return -scale[:, None, None] * (2.0 * self.shape[None] + self.mu * outer)

    def boundary_gradient(self) -> float:
        """Lower bound of |D Psi| on {Psi = 0}: 2 kappa mu e^{mu s} sqrt(lambda_min(M) s)."""
        lam = float(np.linalg.eigvalsh(self.shape)[0])
        return 2.0 * self.kappa * self.mu * math.exp(self.mu * self.level) * math.sqrt(lam * self.level)

    def level_set_points(self, level: float, n: int, seed: int = 0) -> np.ndarray:
        """Points with Psi = level, spread over directions of the unit sphere."""
        top = math.exp(self.mu * self.level) - level / self.kappa
        if top <= 1.0:
            raise ConfigurationError(f"level {level} is not attained (sup Psi = {self.sup_psi})")
        q = math.log(top) / self.mu
        d = self.dimension
        if d == 1:
            directions = np.array([[-1.0], [1.0]])
        elif d == 2:
            theta = 2 * math.pi * np.arange(n) / n
            directions = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        else:
            directions = np.random.default_rng(seed).standard_normal((n, d))
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        # scale each direction u so that u^T M u = q
        norms = np.sqrt(np.einsum("ni,ij,nj->n", directions, self.shape, directions))
        return directions * (math.sqrt(q) / norms)[:, None]

    def with_kappa(self, kappa: float) -> "Barrier":
        return Barrier(kappa, self.mu, self.shape, self.level, self.boundary_gradient_floor)


def verify_barrier(barrier: Barrier, coefficients: GameCoefficients, points: np.ndarray) -> float:
    """Worst value of L Psi + c Psi + 1 over the given points inside G and all control pairs.

    The c terms cancel, so this is max tr(a D^2 Psi) + b . D Psi + 1. A
    nonpositive result means the supersolution inequality holds.
    """
    points = as_points(points, barrier.dimension)
    points = points[barrier.psi(points) > 0]
    if points.shape[0] == 0:
        return -math.inf
    gradient = barrier.grad_psi(points)
    hessian = barrier.hess_psi(points)
    worst = -math.inf
    for ia, ib in coefficients.control_pairs:
        values = coefficients.evaluate(ia, ib, points)
        lpsi = np.einsum("nij,nij->n", values.a, hessian) + np.einsum("ni,ni->n", values.b, gradient)
        worst = max(worst, float(np.max(lpsi)) + 1.0)
    return worst


def barrier_mu_rule(K0: float, delta: float) -> float:
    """Smallest power of two with mu >= max(1, (2 K0 / delta)^2)."""
    target = max(1.0, (2.0 * K0 / delta) ** 2)
    mu = 2.0 ** math.ceil(math.log2(target))
    while mu / 2 >= target:
        mu /= 2
    while mu < target:
        mu *= 2
    return mu


def verification_points(shape: np.ndarray, level: float, per_axis: int | None = None) -> np.ndarray:
    """Lattice points of the bounding box strictly inside {x^T M x < level}."""
    d = shape.shape[0]
    per_axis = per_axis or {1: 257, 2: 65, 3: 21}.get(d, 9)
    radius = math.sqrt(level / float(np.linalg.eigvalsh(shape)[0]))
    axis = np.linspace(-radius, radius, per_axis)
    mesh = np.meshgrid(*[axis] * d, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    return points[np.einsum("ni,ij,nj->n", points, shape, points) < level]


def _fit_barrier(
    shape: np.ndarray,
    level: float,
    coefficients: GameCoefficients,
    mu: float,
    points: np.ndarray | None,
) -> Barrier:
    points = verification_points(shape, level) if points is None else points
    unit = Barrier(1.0, mu, shape, level)
    kappa = 1.0 / unit.boundary_gradient()
    lower = 0.0

    # doubling until the supersolution inequality holds
    for _ in range(MAX_DOUBLINGS):
        if verify_barrier(unit.with_kappa(kappa), coefficients, points) <= 0:
            break
        lower, kappa = kappa, 2.0 * kappa
    else:
        raise BarrierConstructionError(
            f"no admissible kappa after {MAX_DOUBLINGS} doublings (mu={mu}); "
            "increase mu or check the coefficients"
        )

    if lower > 0:
        upper = kappa
        for _ in range(BISECTION_STEPS):
            middle = 0.5 * (lower + upper)
            if verify_barrier(unit.with_kappa(middle), coefficients, points) <= 0:
                upper = middle
            else:
                lower = middle
        kappa = upper

    barrier = unit.with_kappa(kappa)
    logger.debug(
        "barrier fitted: mu=%g kappa=%.6g sup=%.6g boundary |DPsi|=%.4g",
        mu,
        kappa,
        barrier.sup_psi,
        barrier.boundary_gradient(),
    )
    return barrier


def make_ball_barrier(
    radius: float,
    coefficients: GameCoefficients,
    mu: float | None = None,
    points: np.ndarray | None = None,
) -> Barrier:
    """Build Psi = kappa (e^{mu R^2} - e^{mu |x|^2}) for the ball of the given radius.

    Args:
        radius: Ball radius R
        coefficients: Game coefficients the barrier must dominate
        mu: Exponent override; defaults to the power-of-two rule from K0 and delta
        points: Verification points; defaults to a lattice of the ball

    Returns:
        Barrier with |D Psi| >= 1 on the sphere and L Psi + c Psi <= -1 on the points
    """
    d = coefficients.dimension
    mu = mu or barrier_mu_rule(coefficients.K0, coefficients.delta)
    return _fit_barrier(np.eye(d), float(radius) ** 2, coefficients, mu, points)


def make_ellipse_barrier(
    axes: tuple[float, ...],
    coefficients: GameCoefficients,
    mu: float | None = None,
    points: np.ndarray | None = None,
) -> Barrier:
    if len(axes) != coefficients.dimension:
        raise ConfigurationError(f"ellipse needs {coefficients.dimension} axes, got {len(axes)}")
    shape = np.diag(1.0 / np.asarray(axes, dtype=float) ** 2)
    # q is normalized by the axes, so the exponent scales with the largest one
    mu = mu or barrier_mu_rule(coefficients.K0, coefficients.delta) * 2.0 ** math.ceil(
        math.log2(max(1.0, max(axes) ** 2))
    )
    return _fit_barrier(shape, 1.0, coefficients, mu, points)


def make_barrier(domain: Domain, coefficients: GameCoefficients) -> Barrier | None:
    if domain.kind == "ball":
        return make_ball_barrier(domain.radius, coefficients, mu=domain.barrier_mu)
    if domain.kind == "ellipse":
        return make_ellipse_barrier(tuple(domain.axes), coefficients, mu=domain.barrier_mu)
    return None
