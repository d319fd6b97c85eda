"""
The boundary-free surface game.

A bounded-domain game with barrier Psi is lifted to the surface
Gamma = {(x, y) : Psi(x) = |y|^2} in R^{d+4}. On Gamma the state follows

    dx   = sum_i y^i sigma dw^(i) + (|y|^2 b + 2 a D Psi) dt
    dy^i = 1/2 (D Psi)^T sigma dw^(i) - 1/2 y^i c_hat dt

with four independent d1-dimensional noises, c_hat = -tr(a D^2 Psi) - b.D Psi
and discount c_bar = -L Psi = c_hat + c Psi. For g = 0 the surface value
equals v(x) / Psi(x); this module simulates the lifted dynamics and checks
that identity together with the invariance and equator estimates behind it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .barrier import Barrier
from .base import (
    CalibrationError,
    ConfigurationError,
    McEstimate,
    OutsideDomainError,
    SurfaceBreachError,
    as_points,
)
from .model import GameProblem, PairValues, SamplePlan
from .noise import NoiseStream, block_sizes
from .operators import ScalarField
from .simulator import MarkovPolicy, McConfig, coefficients_along, exponential_weight, run_blocks

logger = logging.getLogger(__name__)

FIBER = 4
C_BAR_FLOOR = 0.5
EQUATOR_BOUND = 1.0 / math.cos(1.0)
MIN_BAND = 1e-12


@dataclass(frozen=True, eq=False)
class LiftedState:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).ravel())
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float).ravel())
        if self.y.size != FIBER:
            raise ConfigurationError(f"lifted state needs a {FIBER}-vector y, got {self.y.size}")

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])

    def surface_gap(self, barrier: Barrier) -> float:
        """Psi(x) - |y|^2; zero on Gamma."""
        return float(barrier.psi(self.x)[0] - self.y @ self.y)


def lift_point(x: np.ndarray, barrier: Barrier, fiber_axis: int = 0) -> LiftedState:
    """(x, y) with y = sqrt(Psi(x)) e_k, the lift of x along fiber axis k."""
    x = as_points(x, barrier.dimension)[0]
    psi = float(barrier.psi(x)[0])
    if psi <= 0:
        raise OutsideDomainError(f"cannot lift {x.tolist()}: Psi = {psi:.6g} <= 0")
    y = np.zeros(FIBER)
    y[fiber_axis] = math.sqrt(psi)
    return LiftedState(x, y)


def lifted_dynamics(
    barrier: Barrier, values: PairValues, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Drift (n, d+4), diffusion (n, d+4, 4, d1) and c_hat (n,) of the lifted system."""
    n, d = x.shape
    sigma, b = values.sigma, values.b
    a = values.a
    grad = barrier.grad_psi(x)
    hess = barrier.hess_psi(x)
    c_hat = -np.einsum("nij,nij->n", a, hess) - np.einsum("ni,ni->n", b, grad)

    drift = np.empty((n, d + FIBER))
    drift[:, :d] = (y**2).sum(axis=1)[:, None] * b + 2.0 * np.einsum("nij,nj->ni", a, grad)
    drift[:, d:] = -0.5 * y * c_hat[:, None]

    d1 = sigma.shape[2]
    diffusion = np.zeros((n, d + FIBER, FIBER, d1))
    projected = np.einsum("nij,ni->nj", sigma, grad)
    for k in range(FIBER):
        diffusion[:, :d, k, :] = y[:, k, None, None] * sigma
        diffusion[:, d + k, k, :] = 0.5 * projected
    return drift, diffusion, c_hat


@dataclass(frozen=True)
class EquatorBand:
    """Band {0 <= Psi <= 2 epsilon} near the equator with its calibration constants."""

    epsilon: float
    N0: float
    N1: float
    lipschitz_drift: float
    lipschitz_diffusion: float
    delta: float

    @property
    def lam(self) -> float:
        return (2.0 * self.epsilon) ** -0.5

    @property
    def margin(self) -> float:
        return equator_margin(self.epsilon, self.N0, self.N1, self.delta)

    @property
    def time_scale(self) -> float:
        """Order of the time needed to cross the band."""
        return 2.0 * self.epsilon / self.delta

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "N0": self.N0,
            "N1": self.N1,
            "lambda": self.lam,
            "margin": self.margin,
            "lipschitz_drift": self.lipschitz_drift,
            "lipschitz_diffusion": self.lipschitz_diffusion,
        }


def equator_margin(epsilon: float, N0: float, N1: float, delta: float) -> float:
    """lambda^2/16 delta cos 1 - 2 N0 cos 1 - N1 with lambda = (2 epsilon)^{-1/2}."""
    cos1 = math.cos(1.0)
    return delta * cos1 / (32.0 * epsilon) - 2.0 * N0 * cos1 - N1


@dataclass(frozen=True, eq=False)
class LiftedGame:
    problem: GameProblem
    band: EquatorBand | None = None

    def __post_init__(self):
        if self.problem.barrier is None:
            raise ConfigurationError("the surface lift needs a bounded domain with a barrier")

    @property
    def barrier(self) -> Barrier:
        return self.problem.barrier

    @property
    def dimension(self) -> int:
        return self.problem.dimension

    @property
    def noise_width(self) -> int:
        return FIBER * self.problem.coefficients.noise_dimension

    def c_hat(self, ia: int, ib: int, x: np.ndarray) -> np.ndarray:
        points = as_points(x, self.dimension)
        values = self.problem.coefficients.evaluate(ia, ib, points)
        hess = self.barrier.hess_psi(points)
        grad = self.barrier.grad_psi(points)
        return -np.einsum("nij,nij->n", values.a, hess) - np.einsum("ni,ni->n", values.b, grad)

    def c_bar(self, ia: int, ib: int, x: np.ndarray) -> np.ndarray:
        points = as_points(x, self.dimension)
        values = self.problem.coefficients.evaluate(ia, ib, points)
        raw = self.c_hat(ia, ib, points) + values.c * self.barrier.psi(points)
        return np.maximum(raw, C_BAR_FLOOR)

    def with_band(self, band: EquatorBand) -> "LiftedGame":
        return replace(self, band=band)

    def check_on_surface(self, state: LiftedState, tolerance: float = 1e-8) -> None:
        gap = abs(state.surface_gap(self.barrier))
        if gap > tolerance * max(1.0, self.barrier.sup_psi):
            raise ConfigurationError(f"start point is off the surface: |Psi - |y|^2| = {gap:.3g}")


# Path simulation


@dataclass(frozen=True, eq=False)
class SurfaceBatch:
    """Per-path results of a lifted simulation."""

    x: np.ndarray
    y: np.ndarray
    running: np.ndarray
    phi: np.ndarray
    max_drift: np.ndarray
    final_gap: np.ndarray
    tau: np.ndarray
    stopped: np.ndarray
    breached: np.ndarray
    bias: np.ndarray

    @property
    def size(self) -> int:
        return self.running.size

    @property
    def breach_fraction(self) -> float:
        return float(self.breached.mean())

    @classmethod
    def concatenate(cls, batches: Sequence["SurfaceBatch"]) -> "SurfaceBatch":
        names = cls.__dataclass_fields__
        return cls(**{name: np.concatenate([getattr(b, name) for b in batches]) for name in names})


@dataclass(frozen=True, eq=False)
class SurfacePath:
    final: LiftedState
    running: float
    phi: float
    max_drift: float
    final_gap: float
    steps: int


def _surface_block(
    game: LiftedGame,
    z0: LiftedState,
    policies: MarkovPolicy,
    stream: NoiseStream,
    dt: float,
    n_steps: int,
    projection: bool,
    truncation: float | None = None,
    stop_level: float | None = None,
    sup_f: float = 0.0,
) -> SurfaceBatch:
    barrier = game.barrier
    coefficients = game.problem.coefficients
    n, d, d1 = stream.n_paths, game.dimension, coefficients.noise_dimension

    x = np.broadcast_to(z0.x, (n, d)).copy()
    y = np.broadcast_to(z0.y, (n, FIBER)).copy()
    running, phi = np.zeros(n), np.zeros(n)
    max_drift, tau = np.zeros(n), np.zeros(n)
    stopped = np.zeros(n, dtype=bool)
    breached = np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)
    if stop_level is not None:
        stopped[:] = barrier.psi(x) >= stop_level * (1.0 - 1e-9)
        active &= ~stopped

    for step in range(n_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xa, ya = x[idx], y[idx]
        sigma, b, c, f = coefficients_along(coefficients, policies, xa)
        drift, diffusion, c_hat = lifted_dynamics(barrier, PairValues(sigma, b, c, f), xa, ya)
        c_bar = np.maximum(c_hat + c * barrier.psi(xa), C_BAR_FLOOR)
        running[idx] += f * np.exp(-phi[idx]) * exponential_weight(c_bar, dt)
        phi[idx] += c_bar * dt

        noise = stream.increments(step, dt)[idx].reshape(idx.size, FIBER, d1)
        z = np.hstack([xa, ya]) + drift * dt + np.einsum("nikj,nkj->ni", diffusion, noise)
        xa, ya = z[:, :d], z[:, d:]
        psi = barrier.psi(xa)
        max_drift[idx] = np.maximum(max_drift[idx], np.abs(psi - (ya**2).sum(axis=1)))
        tau[idx] += dt

        if projection:
            inside = psi >= 0
            breached[idx[~inside]] = True
            norm = np.linalg.norm(ya, axis=1)
            target = np.sqrt(np.maximum(psi, 0.0))
            scale = np.divide(target, norm, out=np.zeros_like(norm), where=norm > 0)
            ya = ya * scale[:, None]
            # a collapsed fiber restarts along the first axis
            restart = (norm == 0) & (target > 0)
            ya[restart, 0] = target[restart]
        x[idx], y[idx] = xa, ya

        done = breached[idx]
        if truncation is not None:
            done = done | (np.exp(-phi[idx]) < truncation)
        if stop_level is not None:
            reached = psi >= stop_level
            stopped[idx[reached]] = True
            done = done | reached
        active[idx[done]] = False

    final_gap = barrier.psi(x) - (y**2).sum(axis=1)
    bias = np.zeros(n)
    if truncation is not None:
        bias = sup_f * np.exp(-phi) / C_BAR_FLOOR
    return SurfaceBatch(x, y, running, phi, max_drift, final_gap, tau, stopped, breached, bias)


def _steps(horizon: float, dt: float) -> int:
    steps = int(round(horizon / dt))
    if steps < 1:
        raise ConfigurationError(f"horizon {horizon} is shorter than dt {dt}")
    return steps


def simulate_surface_batch(
    game: LiftedGame,
    z0: LiftedState,
    policies: MarkovPolicy,
    config: McConfig,
    horizon: float | None = None,
    projection: bool = True,
) -> SurfaceBatch:
    """config.n_paths lifted paths from z0.

    With a horizon the paths run for exactly that long; without one they run
    until the discount e^{-phi} drops below config.truncation, which c_bar >= 1/2
    reaches by time 2 log(1/truncation).
    """
    game.check_on_surface(z0)
    if horizon is None:
        n_steps = int(math.ceil(2.0 * math.log(1.0 / config.truncation) / config.dt)) + 1
        truncation = config.truncation
    else:
        n_steps, truncation = _steps(horizon, config.dt), None
    sizes = block_sizes(config.n_paths, config.block_size)
    sup_f = game.problem.sup_abs_f()

    def run(block: int) -> SurfaceBatch:
        stream = NoiseStream(config.seed, block, sizes[block], game.noise_width)
        return _surface_block(
            game, z0, policies, stream, config.dt, n_steps, projection, truncation, sup_f=sup_f
        )

    batch = SurfaceBatch.concatenate(run_blocks(run, len(sizes), config.threads))
    if batch.breached.any():
        logger.warning(
            "%d of %d lifted paths reached Psi < 0 (dt=%g)",
            int(batch.breached.sum()),
            batch.size,
            config.dt,
        )
    return batch


def simulate_surface(
    game: LiftedGame,
    z0: LiftedState,
    policies: MarkovPolicy,
    dt: float,
    horizon: float,
    seed: int = 0,
    projection: bool = True,
    path: int = 0,
) -> SurfacePath:
    """One lifted path over [0, horizon]; raises SurfaceBreachError if Psi(x_t) < 0 with projection on."""
    game.check_on_surface(z0)
    stream = NoiseStream(seed, path, 1, game.noise_width)
    n_steps = _steps(horizon, dt)
    batch = _surface_block(game, z0, policies, stream, dt, n_steps, projection)
    if batch.breached[0]:
        raise SurfaceBreachError(
            f"Psi(x_t) < 0 at t={batch.tau[0]:.4g} with projection on; decrease dt (now {dt})"
        )
    return SurfacePath(
        final=LiftedState(batch.x[0], batch.y[0]),
        running=float(batch.running[0]),
        phi=float(batch.phi[0]),
        max_drift=float(batch.max_drift[0]),
        final_gap=float(batch.final_gap[0]),
        steps=int(round(batch.tau[0] / dt)),
    )


def estimate_vbar(
    game: LiftedGame, z0: LiftedState, policies: MarkovPolicy, config: McConfig
) -> McEstimate:
    """Monte Carlo estimate of the surface value int_0^inf f(x_t) e^{-phi_bar_t} dt from z0."""
    batch = simulate_surface_batch(game, z0, policies, config)
    return McEstimate.from_samples(
        batch.running,
        seed=config.seed,
        censored=batch.breached,
        bias_bound=float(batch.bias.mean()),
        dt=config.dt,
    )


# Reduction identity


@dataclass(frozen=True)
class ReductionRow:
    x: tuple[float, ...]
    psi: float
    v_h: float
    vbar_mean: float
    vbar_stderr: float
    discrepancy: float
    tolerance: float
    passed: bool
    skipped: bool = False

    def csv_row(self) -> list:
        status = "skipped" if self.skipped else str(self.passed).lower()
        return [
            " ".join(f"{value:.6g}" for value in self.x),
            f"{self.psi:.10g}",
            f"{self.v_h:.10g}",
            f"{self.vbar_mean:.10g}",
            f"{self.vbar_stderr:.10g}",
            status,
        ]


REDUCTION_HEADER = ["x", "psi", "v_h", "vbar_mean", "vbar_stderr", "pass"]


@dataclass(frozen=True)
class ReductionReport:
    rows: tuple[ReductionRow, ...]

    @property
    def passed(self) -> bool:
        return all(row.passed or row.skipped for row in self.rows)

    @property
    def tested(self) -> int:
        return sum(not row.skipped for row in self.rows)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "rows": [row.__dict__ for row in self.rows]}


def check_reduction(
    game: LiftedGame,
    x_list: Sequence[Sequence[float]],
    v_field: ScalarField,
    policies: MarkovPolicy,
    config: McConfig,
    psi_threshold: float = 0.2,
    allowance: float | None = None,
) -> ReductionReport:
    """Compare v_bar(lift(x)) Psi(x) with the grid solution v_h(x) at each point.

    Points with Psi(x) below psi_threshold are skipped. The tolerance is
    3 stderr (in units of v) plus allowance, by default 5 h^2 + 2 sqrt(dt).
    """
    if not game.problem.coefficients.terminal.is_zero:
        raise ConfigurationError("the reduction identity requires g = 0")
    if allowance is None:
        allowance = 5.0 * v_field.grid.h**2 + 2.0 * math.sqrt(config.dt)
    rows = []
    for x in x_list:
        x = as_points(x, game.dimension)[0]
        psi = float(game.barrier.psi(x)[0])
        if psi < psi_threshold:
            logger.info("reduction point %s skipped: Psi = %.4g", x.tolist(), psi)
            rows.append(ReductionRow(tuple(x), psi, math.nan, math.nan, math.nan, math.nan, math.nan, False, True))
            continue
        v_h = float(v_field.interpolate(x)[0])
        estimate = estimate_vbar(game, lift_point(x, game.barrier), policies, config)
        discrepancy = abs(estimate.mean * psi - v_h)
        tolerance = 3.0 * estimate.stderr * psi + allowance
        rows.append(
            ReductionRow(
                tuple(x),
                psi,
                v_h,
                estimate.mean,
                estimate.stderr,
                discrepancy,
                tolerance,
                discrepancy <= tolerance,
            )
        )
        logger.debug("reduction at %s: |vbar Psi - v_h| = %.4g (tol %.4g)", x.tolist(), discrepancy, tolerance)
    return ReductionReport(tuple(rows))


@dataclass(frozen=True)
class FiberReport:
    first: McEstimate
    second: McEstimate
    difference: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.difference <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "first": self.first.to_dict(),
            "second": self.second.to_dict(),
            "difference": self.difference,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


def fiber_invariance(
    game: LiftedGame, x: np.ndarray, policies: MarkovPolicy, config: McConfig
) -> FiberReport:
    """v_bar from y = sqrt(Psi) e_1 and y = sqrt(Psi) e_2, on independent seeds."""
    first = estimate_vbar(game, lift_point(x, game.barrier, 0), policies, config)
    second = estimate_vbar(
        game, lift_point(x, game.barrier, 1), policies, replace(config, seed=config.seed + 1)
    )
    combined = math.hypot(first.stderr, second.stderr)
    return FiberReport(first, second, abs(first.mean - second.mean), 3.0 * combined)


# Equator band


def _surface_samples(game: LiftedGame, plan: SamplePlan) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(plan.seed)
    points = game.problem.sample_points(plan.points_per_axis)
    points = points[game.barrier.psi(points) > 0]
    if points.shape[0] > plan.n_pairs:
        points = points[rng.choice(points.shape[0], plan.n_pairs, replace=False)]
    directions = rng.standard_normal((points.shape[0], FIBER))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    y = directions * np.sqrt(game.barrier.psi(points))[:, None]
    return points, y


def lifted_lipschitz(game: LiftedGame, plan: SamplePlan | None = None) -> tuple[float, float]:
    """Sampled Lipschitz constants of the lifted drift and diffusion over nearby pairs on Gamma."""
    plan = plan or SamplePlan()
    rng = np.random.default_rng(plan.seed + 1)
    x, y = _surface_samples(game, plan)
    radius = plan.pair_radius or 0.05 * game.problem.domain.bounding_radius
    x2 = x + radius * rng.uniform(-1.0, 1.0, x.shape)
    keep = game.barrier.psi(x2) > 0
    x, y, x2 = x[keep], y[keep], x2[keep]
    y2 = y + radius * rng.uniform(-1.0, 1.0, y.shape)
    y2 *= (np.sqrt(game.barrier.psi(x2)) / np.linalg.norm(y2, axis=1))[:, None]
    distance = np.linalg.norm(np.hstack([x - x2, y - y2]), axis=1)
    valid = distance > 0

    coefficients = game.problem.coefficients
    drift_constant, diffusion_constant = 0.0, 0.0
    for ia, ib in coefficients.control_pairs:
        first = lifted_dynamics(game.barrier, coefficients.evaluate(ia, ib, x), x, y)
        second = lifted_dynamics(game.barrier, coefficients.evaluate(ia, ib, x2), x2, y2)
        drift_gap = np.linalg.norm(first[0] - second[0], axis=1)
        diffusion_gap = np.sqrt(((first[1] - second[1]) ** 2).sum(axis=(1, 2, 3)))
        drift_constant = max(drift_constant, float(np.max(drift_gap[valid] / distance[valid])))
        diffusion_constant = max(diffusion_constant, float(np.max(diffusion_gap[valid] / distance[valid])))
    return drift_constant, diffusion_constant


def _c_hat_bound(game: LiftedGame, plan: SamplePlan) -> float:
    points = game.problem.sample_points(plan.points_per_axis)
    points = np.vstack([points, game.barrier.level_set_points(0.0, plan.boundary_points)])
    return max(
        float(np.max(np.abs(game.c_hat(ia, ib, points))))
        for ia, ib in game.problem.coefficients.control_pairs
    )


def band_gradient_floor(game: LiftedGame, epsilon: float, plan: SamplePlan, levels: int = 9) -> float:
    """Smallest |D Psi| over level sets spanning {0 <= Psi <= 2 epsilon}."""
    floor = math.inf
    for level in np.linspace(0.0, 2.0 * epsilon, levels):
        points = game.barrier.level_set_points(float(level), plan.boundary_points, plan.seed)
        floor = min(floor, float(np.min(np.linalg.norm(game.barrier.grad_psi(points), axis=1))))
    return floor


def calibrate_equator_band(
    game: LiftedGame, plan: SamplePlan | None = None, initial: float | None = None
) -> EquatorBand:
    """Halve epsilon until |D Psi| >= 1/2 on the band and the margin is nonnegative.

    N0 = L_b + L_sigma^2 / 2 + 1/2 from sampled Lipschitz constants of the
    lifted system, N1 = sup |c_hat| / 2.
    """
    plan = plan or SamplePlan()
    lipschitz_drift, lipschitz_diffusion = lifted_lipschitz(game, plan)
    N0 = lipschitz_drift + 0.5 * lipschitz_diffusion**2 + 0.5
    N1 = 0.5 * _c_hat_bound(game, plan)
    delta = game.problem.coefficients.delta
    sup_psi = game.barrier.sup_psi
    epsilon = initial or 0.25 * sup_psi

    while epsilon >= MIN_BAND * sup_psi:
        if 2.0 * epsilon < sup_psi and equator_margin(epsilon, N0, N1, delta) >= 0:
            if band_gradient_floor(game, epsilon, plan) >= 0.5:
                band = EquatorBand(epsilon, N0, N1, lipschitz_drift, lipschitz_diffusion, delta)
                logger.info(
                    "equator band: epsilon=%.4g N0=%.4g N1=%.4g margin=%.4g",
                    epsilon,
                    N0,
                    N1,
                    band.margin,
                )
                return band
        epsilon /= 2.0
    raise CalibrationError(
        f"no equator band above {MIN_BAND * sup_psi:.3g} (N0={N0:.4g}, N1={N1:.4g})"
    )


@dataclass(frozen=True)
class EquatorMoment:
    estimate: McEstimate
    censored_count: int

    @property
    def passed(self) -> bool:
        return self.estimate.mean - 3.0 * self.estimate.stderr <= EQUATOR_BOUND

    def to_dict(self) -> dict:
        return {**self.estimate.to_dict(), "bound": EQUATOR_BOUND, "passed": self.passed}


@dataclass(frozen=True)
class EquatorReport:
    band: EquatorBand
    moments: tuple[EquatorMoment, ...]

    @property
    def passed(self) -> bool:
        return all(moment.passed for moment in self.moments)

    def to_dict(self) -> dict:
        return {
            "band": self.band.to_dict(),
            "moments": [moment.to_dict() for moment in self.moments],
            "passed": self.passed,
        }


def equator_start(game: LiftedGame, band: EquatorBand, fraction: float = 0.5) -> LiftedState:
    """A point of Gamma with |y|^2 = fraction * epsilon."""
    x = game.barrier.level_set_points(fraction * band.epsilon, 2)[0]
    return lift_point(x, game.barrier)


def equator_exit_moment(
    game: LiftedGame,
    z0: LiftedState,
    policies_sample: Sequence[MarkovPolicy],
    config: McConfig,
    band: EquatorBand | None = None,
    steps_per_crossing: int = 200,
) -> EquatorReport:
    """E exp(2 N0 tau) where tau is the first time Psi(x_t) reaches 2 epsilon.

    The step is capped at band.time_scale / steps_per_crossing. Paths still in
    the band after censor_factor * time_scale count at the censoring value.
    """
    band = band or game.band
    if band is None:
        raise ConfigurationError("equator_exit_moment needs a calibrated band")
    game.check_on_surface(z0)
    if float(z0.y @ z0.y) > band.epsilon * (1.0 + 1e-9):
        raise ConfigurationError("equator start must lie in the band |y|^2 <= epsilon")
    dt = min(config.dt, band.time_scale / steps_per_crossing)
    n_steps = max(1, int(math.ceil(config.censor_factor * band.time_scale / dt)))
    sizes = block_sizes(config.n_paths, config.block_size)
    moments = []
    for policies in policies_sample:

        def run(block: int) -> SurfaceBatch:
            stream = NoiseStream(config.seed, block, sizes[block], game.noise_width)
            return _surface_block(
                game, z0, policies, stream, dt, n_steps, True, stop_level=2.0 * band.epsilon
            )

        batch = SurfaceBatch.concatenate(run_blocks(run, len(sizes), config.threads))
        censored = ~batch.stopped
        samples = np.exp(2.0 * band.N0 * batch.tau)
        if censored.any():
            logger.warning("%d equator paths censored at t=%.4g", int(censored.sum()), n_steps * dt)
        estimate = McEstimate.from_samples(samples, config.seed, censored, dt=dt)
        moments.append(EquatorMoment(estimate, int(censored.sum())))
    return EquatorReport(band, tuple(moments))


# Coupled paths


@dataclass(frozen=True)
class SupermartingaleReport:
    checkpoints: tuple[float, ...]
    means: tuple[float, ...]
    stderrs: tuple[float, ...]
    passed: bool
    distance: float
    lipschitz_ratio: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def coupled_supermartingale_check(
    game: LiftedGame,
    z_first: LiftedState,
    z_second: LiftedState,
    policies: MarkovPolicy,
    N0: float,
    config: McConfig,
    checkpoints: Sequence[float] = (0.25, 0.5, 1.0),
    lipschitz: bool = False,
) -> SupermartingaleReport:
    """Track S_t = |dz_t|^2 e^{-2 N0 t} + int_0^t |dz_s|^2 e^{-2 N0 s} ds for paths sharing noise.

    The check passes when each checkpoint mean stays below its predecessor
    plus 3 stderr of the paired increment. With lipschitz=True the surface
    values at both starts are also estimated on common noise and their
    ratio to |z' - z''| is reported.
    """
    game.check_on_surface(z_first)
    game.check_on_surface(z_second)
    coefficients = game.problem.coefficients
    d, d1 = game.dimension, coefficients.noise_dimension
    marks = [0] + [_steps(t, config.dt) for t in checkpoints]
    sizes = block_sizes(config.n_paths, config.block_size)
    distance = float(np.linalg.norm(z_first.z - z_second.z))

    def run(block: int) -> np.ndarray:
        n = sizes[block]
        stream = NoiseStream(config.seed, block, n, game.noise_width)
        z = np.vstack(
            [np.broadcast_to(z_first.z, (n, d + FIBER)), np.broadcast_to(z_second.z, (n, d + FIBER))]
        )
        integral = np.zeros(n)
        values = np.zeros((n, len(marks)))
        gap = ((z[:n] - z[n:]) ** 2).sum(axis=1)
        values[:, 0] = gap
        for step in range(marks[-1]):
            t = step * config.dt
            integral += gap * math.exp(-2.0 * N0 * t) * config.dt
            x, y = z[:, :d], z[:, d:]
            sigma, b, c, f = coefficients_along(coefficients, policies, x)
            drift, diffusion, _ = lifted_dynamics(game.barrier, PairValues(sigma, b, c, f), x, y)
            noise = stream.increments(step, config.dt).reshape(n, FIBER, d1)
            shared = np.vstack([noise, noise])
            z = z + drift * config.dt + np.einsum("nikj,nkj->ni", diffusion, shared)
            gap = ((z[:n] - z[n:]) ** 2).sum(axis=1)
            if step + 1 in marks:
                t_next = (step + 1) * config.dt
                values[:, marks.index(step + 1)] = gap * math.exp(-2.0 * N0 * t_next) + integral
        return values

    values = np.vstack(run_blocks(run, len(sizes), config.threads))
    means = values.mean(axis=0)
    n = values.shape[0]
    increments = np.diff(values, axis=1)
    stderrs = increments.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(checkpoints))
    passed = bool(np.all(increments.mean(axis=0) <= 3.0 * stderrs + 1e-15))

    ratio = None
    if lipschitz and distance > 0:
        first = estimate_vbar(game, z_first, policies, config)
        second = estimate_vbar(game, z_second, policies, config)
        ratio = abs(first.mean - second.mean) / distance
    return SupermartingaleReport(
        tuple([0.0, *checkpoints]),
        tuple(float(m) for m in means),
        tuple([0.0, *(float(s) for s in stderrs)]),
        passed,
        distance,
        ratio,
    )


# Gamma invariance


@dataclass(frozen=True)
class InvarianceReport:
    """Unprojected drift off Gamma over a dt ladder.

    The strong statistic E max |Psi - |y|^2| gates the report: it is a sum of
    mean-zero O(dt) increments and shrinks like dt^(1/2). The weak statistic
    |E (Psi - |y|^2)| is first order and reported alongside.
    """

    dts: tuple[float, ...]
    strong: tuple[float, ...]
    strong_stderr: tuple[float, ...]
    weak: tuple[float, ...]
    weak_stderr: tuple[float, ...]
    strong_order: float
    weak_order: float
    breach_fraction: float = field(default=0.0)
    expected_order: float = 0.5
    ratio_tolerance: float = 0.3

    @property
    def strong_ratios(self) -> tuple[float, ...]:
        return tuple(b / a for a, b in zip(self.strong, self.strong[1:]))

    @property
    def expected_ratios(self) -> tuple[float, ...]:
        return tuple((b / a) ** self.expected_order for a, b in zip(self.dts, self.dts[1:]))

    @property
    def passed(self) -> bool:
        if len(self.strong) < 2 or min(self.strong) <= 0:
            return False
        return all(
            abs(ratio / expected - 1.0) <= self.ratio_tolerance
            for ratio, expected in zip(self.strong_ratios, self.expected_ratios)
        )

    @property
    def weak_halves(self) -> bool:
        """Each dt halving roughly halves the weak drift (within 30%)."""
        return all(0.35 <= b / a <= 0.65 for a, b in zip(self.weak, self.weak[1:]) if a > 0)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "dts": list(self.dts),
            "strong": list(self.strong),
            "strong_stderr": list(self.strong_stderr),
            "strong_ratios": list(self.strong_ratios),
            "expected_ratios": list(self.expected_ratios),
            "strong_order": self.strong_order,
            "expected_order": self.expected_order,
            "weak": list(self.weak),
            "weak_stderr": list(self.weak_stderr),
            "weak_order": self.weak_order,
            "weak_halves": self.weak_halves,
            "breach_fraction": self.breach_fraction,
        }


def _fitted_order(dts: Sequence[float], values: Sequence[float]) -> float:
    positive = [(dt, v) for dt, v in zip(dts, values) if v > 0]
    if len(positive) < 2:
        return math.nan
    log_dt, log_v = np.log(np.array(positive)).T
    return float(np.polyfit(log_dt, log_v, 1)[0])


def gamma_invariance_study(
    game: LiftedGame,
    z0: LiftedState,
    policies: MarkovPolicy,
    config: McConfig,
    dts: Sequence[float] = (1e-2, 5e-3, 2.5e-3),
    horizon: float = 1.0,
) -> InvarianceReport:
    """Drift of Psi(x) - |y|^2 without projection over a dt ladder.

    Reports the strong statistic E max_{t <= horizon} |Psi - |y|^2| and the
    weak statistic |E (Psi - |y|^2)| at the horizon, each with a fitted order
    in dt. The projected run at the finest dt supplies the breach fraction.
    The report passes when each strong ratio tracks the half-order ratio of
    its dt pair.
    """
    strong, strong_se, weak, weak_se = [], [], [], []
    for dt in dts:
        batch = simulate_surface_batch(game, z0, policies, replace(config, dt=dt), horizon, projection=False)
        root_n = math.sqrt(batch.size)
        strong.append(float(batch.max_drift.mean()))
        strong_se.append(float(batch.max_drift.std(ddof=1) / root_n))
        weak.append(float(abs(batch.final_gap.mean())))
        weak_se.append(float(batch.final_gap.std(ddof=1) / root_n))
        logger.debug("gamma drift dt=%g: strong %.4g weak %.4g", dt, strong[-1], weak[-1])
    projected = simulate_surface_batch(
        game, z0, policies, replace(config, dt=min(dts)), horizon, projection=True
    )
    return InvarianceReport(
        tuple(dts),
        tuple(strong),
        tuple(strong_se),
        tuple(weak),
        tuple(weak_se),
        _fitted_order(dts, strong),
        _fitted_order(dts, weak),
        projected.breach_fraction,
    )
