"""
Monte Carlo engine for the controlled diffusion

    dx = sigma(alpha, beta, x) dw + b(alpha, beta, x) dt + epsilon dw_bar

under Markov feedback policies. Paths are simulated in fixed-size blocks,
vectorized within a block and spread over a thread pool; every block draws
its noise from its own counter-based stream and block results are reduced in
block order.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, Literal, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .base import ConfigurationError, McEstimate, as_points
from .model import ExtendedProblem, GameCoefficients, GameProblem
from .noise import NoiseStream, block_sizes
from .operators import Grid, ScalarField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Box:
    """Axis-aligned region lo <= x <= hi."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def contains(self, x: np.ndarray) -> np.ndarray:
        return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=1)

    @classmethod
    def around(cls, center: Sequence[float], radius: float) -> "Box":
        center = np.asarray(center, dtype=float)
        return cls(tuple(center - radius), tuple(center + radius))


@dataclass(frozen=True)
class Override:
    region: Box
    alpha: int | None = None
    beta: int | None = None


@dataclass(frozen=True, eq=False)
class MarkovPolicy:
    """Feedback controls: alpha(x) for the maximizer and beta(x, alpha) for the minimizer.

    Table policies look up the nearest interior node, or with multilinear=True
    let the surrounding lattice corners vote with their multilinear weights.
    """

    grid: Grid | None = None
    alpha_table: np.ndarray | None = None
    beta_table: np.ndarray | None = None
    multilinear: bool = False
    constant_alpha: int = 0
    constant_beta: int = 0
    overrides: tuple[Override, ...] = ()

    @classmethod
    def from_tables(
        cls, grid: Grid, alpha: np.ndarray, beta_table: np.ndarray, multilinear: bool = False
    ) -> "MarkovPolicy":
        if alpha.shape != (grid.n_interior,) or beta_table.shape[0] != grid.n_interior:
            raise ConfigurationError("policy tables must have one row per interior node")
        return cls(grid, np.asarray(alpha), np.asarray(beta_table), multilinear)

    @classmethod
    def constant(cls, alpha: int = 0, beta: int = 0) -> "MarkovPolicy":
        return cls(constant_alpha=alpha, constant_beta=beta)

    @property
    def is_constant(self) -> bool:
        return self.grid is None

    def with_override(self, region: Box, alpha: int | None = None, beta: int | None = None):
        return replace(self, overrides=self.overrides + (Override(region, alpha, beta),))

    @cached_property
    def _tree(self) -> cKDTree:
        return cKDTree(self.grid.interior_points)

    def _nearest(self, x: np.ndarray) -> np.ndarray:
        return self._tree.query(x)[1]

    def _vote(self, x: np.ndarray, controls_at: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        grid = self.grid
        n, d = x.shape
        scaled = (x - grid.axis[0]) / grid.h
        base = np.clip(np.floor(scaled).astype(int), 0, grid.axis.size - 2)
        frac = scaled - base
        votes: dict[int, np.ndarray] = {}
        for corner in np.ndindex(*(2,) * d):
            corner = np.array(corner)
            weight = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
            flat = np.ravel_multi_index(tuple((base + corner).T), grid.shape)
            position = grid.position[flat]
            valid = (position >= 0) & (weight > 0)
            if not valid.any():
                continue
            controls = np.zeros(n, dtype=int)
            controls[valid] = controls_at(position[valid])
            for control in np.unique(controls[valid]):
                mask = valid & (controls == control)
                votes.setdefault(int(control), np.zeros(n))[mask] += weight[mask]
        fallback = controls_at(self._nearest(x))
        if not votes:
            return fallback
        labels = np.array(sorted(votes))
        table = np.stack([votes[label] for label in labels], axis=1)
        chosen = labels[np.argmax(table, axis=1)]
        return np.where(table.max(axis=1) > 0, chosen, fallback)

    def alpha(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.is_constant:
            out = np.full(x.shape[0], self.constant_alpha, dtype=int)
        elif self.multilinear:
            out = self._vote(x, lambda rows: self.alpha_table[rows])
        else:
            out = self.alpha_table[self._nearest(x)]
        for override in self.overrides:
            if override.alpha is not None:
                out = np.where(override.region.contains(x), override.alpha, out)
        return out

    def beta(self, x: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        alpha = np.asarray(alpha, dtype=int)
        if self.is_constant:
            out = np.full(x.shape[0], self.constant_beta, dtype=int)
        elif self.multilinear:
            out = np.empty(x.shape[0], dtype=int)
            for control in np.unique(alpha):
                mask = alpha == control
                out[mask] = self._vote(x[mask], lambda rows: self.beta_table[rows, control])
        else:
            out = self.beta_table[self._nearest(x), alpha]
        for override in self.overrides:
            if override.beta is not None:
                out = np.where(override.region.contains(x), override.beta, out)
        return out


@dataclass(frozen=True)
class McConfig:
    """Monte Carlo parameters shared by all estimators."""

    n_paths: int = 10000
    dt: float = 1e-3
    seed: int = 0
    epsilon: float = 0.0
    threads: int = 1
    block_size: int = 1024
    truncation: float = 1e-6
    censor_factor: float = 10.0
    allowance: float = 0.0

    def __post_init__(self):
        if self.n_paths < 2:
            raise ConfigurationError("n_paths must be at least 2")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.epsilon < 0:
            raise ConfigurationError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.threads < 1 or self.block_size < 1:
            raise ConfigurationError("threads and block_size must be positive")
        if not 0 < self.truncation < 1:
            raise ConfigurationError("truncation threshold must lie in (0, 1)")


@dataclass(frozen=True)
class PathOutcome:
    running: float
    phi: float
    tau: float
    exit_state: np.ndarray | None
    censored: bool
    truncated: bool
    terminal: float = 0.0

    @property
    def payoff(self) -> float:
        return self.running + self.terminal


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Per-path outcomes of a batch, in path order."""

    running: np.ndarray
    terminal: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    exit_state: np.ndarray
    censored: np.ndarray
    truncated: np.ndarray
    bias: np.ndarray

    @property
    def payoff(self) -> np.ndarray:
        return self.running + self.terminal

    @property
    def size(self) -> int:
        return self.running.size

    def outcome(self, k: int) -> PathOutcome:
        exited = not (self.censored[k] or self.truncated[k])
        return PathOutcome(
            running=float(self.running[k]),
            phi=float(self.phi[k]),
            tau=float(self.tau[k]),
            exit_state=self.exit_state[k].copy() if exited else None,
            censored=bool(self.censored[k]),
            truncated=bool(self.truncated[k]),
            terminal=float(self.terminal[k]),
        )

    @classmethod
    def concatenate(cls, batches: Sequence["PathBatch"]) -> "PathBatch":
        return cls(
            **{
                name: np.concatenate([getattr(batch, name) for batch in batches])
                for name in (
                    "running",
                    "terminal",
                    "phi",
                    "tau",
                    "exit_state",
                    "censored",
                    "truncated",
                    "bias",
                )
            }
        )


def exponential_weight(rate: np.ndarray, dt: float) -> np.ndarray:
    """int_0^dt e^{-rate s} ds, exact for piecewise-constant integrands."""
    rate = np.asarray(rate, dtype=float)
    small = np.abs(rate * dt) < 1e-12
    safe = np.where(small, 1.0, rate)
    return np.where(small, dt, -np.expm1(-safe * dt) / safe)


def coefficients_along(
    coefficients: GameCoefficients,
    policies: MarkovPolicy,
    x: np.ndarray,
    extension: ExtendedProblem | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """sigma, b, c, f at states x under the policies' feedback controls.

    With an extended problem, maximizer indices past A1 select penalized
    vertices: constant sigma and drift, discount delta_hat and running cost -K.
    """
    n, d = x.shape
    ia = policies.alpha(x)
    ib = policies.beta(x, ia)
    n_alpha, n_beta = len(coefficients.alpha), len(coefficients.beta)
    n_controls = n_alpha + (extension.a2.size if extension is not None else 0)
    if np.any(ia >= n_controls) or np.any(ib >= n_beta):
        raise ConfigurationError("policy selects a control outside the base game")
    sigma = np.empty((n, d, coefficients.noise_dimension))
    b, c, f = np.empty((n, d)), np.empty(n), np.empty(n)
    penalized = ia >= n_alpha
    codes = np.where(penalized, 0, ia * n_beta + ib)
    for code in np.unique(codes[~penalized]):
        mask = (codes == code) & ~penalized
        values = coefficients.evaluate(int(code) // n_beta, int(code) % n_beta, x[mask])
        sigma[mask], b[mask], c[mask], f[mask] = values.sigma, values.b, values.c, values.f
    for index in np.unique(ia[penalized]):
        mask = ia == index
        vertex = int(index) - n_alpha
        _, drift, rate = extension.a2.vertex(vertex)
        sigma[mask] = extension.a2.vertex_sigma(vertex, coefficients.noise_dimension)
        b[mask], c[mask], f[mask] = drift, rate, -extension.K
    return sigma, b, c, f


def euler_step(
    x: np.ndarray,
    sigma: np.ndarray,
    b: np.ndarray,
    dw: np.ndarray,
    dw_bar: np.ndarray,
    dt: float,
    epsilon: float,
) -> np.ndarray:
    step = x + b * dt + np.einsum("nij,nj->ni", sigma, dw)
    if epsilon:
        step = step + epsilon * dw_bar
    return step


def run_blocks(fn: Callable[[int], object], n_blocks: int, threads: int) -> list:
    if threads == 1 or n_blocks == 1:
        return [fn(k) for k in range(n_blocks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_blocks)))


def _split(problem: GameProblem | ExtendedProblem) -> tuple[GameProblem, ExtendedProblem | None]:
    if isinstance(problem, ExtendedProblem):
        return problem.base, problem
    return problem, None


def _sup_running_cost(problem: GameProblem, extension: ExtendedProblem | None) -> float:
    sup_f = problem.sup_abs_f()
    return max(sup_f, extension.K) if extension is not None else sup_f


def _simulate_block(
    problem: GameProblem,
    policies: MarkovPolicy,
    x0: np.ndarray,
    config: McConfig,
    stream: NoiseStream,
    sup_f: float,
    sup_g: float,
    extension: ExtendedProblem | None = None,
) -> PathBatch:
    coefficients = problem.coefficients
    d, d1 = problem.dimension, coefficients.noise_dimension
    n = stream.n_paths
    dt = config.dt
    whole_space = problem.domain.is_whole_space

    x = np.broadcast_to(x0, (n, d)).copy()
    running, terminal = np.zeros(n), np.zeros(n)
    phi, tau = np.zeros(n), np.zeros(n)
    exit_state = np.full((n, d), np.nan)
    censored, truncated = np.zeros(n, dtype=bool), np.zeros(n, dtype=bool)
    active = np.ones(n, dtype=bool)

    if whole_space:
        rate_floor = coefficients.delta1
        if extension is not None:
            rate_floor = min(rate_floor, extension.a2.rate)
        horizon = math.log(1.0 / config.truncation) / rate_floor
        max_steps = int(math.ceil(horizon / dt)) + 1
    else:
        psi0 = problem.barrier.psi(x)
        outside = psi0 <= 0
        terminal[outside] = coefficients.g(x[outside]) if outside.any() else 0.0
        exit_state[outside] = x[outside]
        active[outside] = False
        max_steps = int(math.ceil(config.censor_factor * max(float(psi0.max()), 0.0) / dt))

    for step in range(max_steps):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        noise = stream.increments(step, dt)[idx]
        xa = x[idx]
        sigma, b, c, f = coefficients_along(coefficients, policies, xa, extension)
        running[idx] += f * np.exp(-phi[idx]) * exponential_weight(c, dt)
        phi[idx] += c * dt
        x[idx] = euler_step(xa, sigma, b, noise[:, :d1], noise[:, d1:], dt, config.epsilon)
        tau[idx] += dt

        if whole_space:
            done = idx[np.exp(-phi[idx]) < config.truncation]
            truncated[done] = True
            active[done] = False
        else:
            out = idx[problem.barrier.psi(x[idx]) <= 0]
            if out.size:
                terminal[out] = coefficients.g(x[out]) * np.exp(-phi[out])
                exit_state[out] = x[out]
                active[out] = False

    bias = np.zeros(n)
    if whole_space:
        truncated |= active
        bias[truncated] = sup_f * np.exp(-phi[truncated]) / rate_floor
    else:
        censored = active.copy()
        if censored.any():
            remaining = np.maximum(problem.barrier.psi(x[censored]), 0.0)
            discount = np.exp(-phi[censored])
            bias[censored] = sup_g * discount + sup_f * remaining * discount
    return PathBatch(running, terminal, phi, tau, exit_state, censored, truncated, bias)


def simulate_batch(
    problem: GameProblem | ExtendedProblem,
    policies: MarkovPolicy,
    x0: np.ndarray,
    config: McConfig,
) -> PathBatch:
    """Simulate config.n_paths paths from x0; results are independent of config.threads.

    An extended problem lets the maximizer's policy select penalized vertices.
    """
    problem, extension = _split(problem)
    x0 = as_points(x0, problem.dimension)[0]
    if not problem.domain.is_whole_space and problem.barrier.psi(x0)[0] <= 0:
        logger.info("start point %s is outside the domain; paths exit at t=0", x0.tolist())
    width = problem.coefficients.noise_dimension + problem.dimension
    sizes = block_sizes(config.n_paths, config.block_size)
    sup_f, sup_g = _sup_running_cost(problem, extension), problem.sup_abs_g()

    def run(block: int) -> PathBatch:
        stream = NoiseStream(config.seed, block, sizes[block], width)
        return _simulate_block(problem, policies, x0, config, stream, sup_f, sup_g, extension)

    batch = PathBatch.concatenate(run_blocks(run, len(sizes), config.threads))
    if batch.censored.any():
        logger.warning(
            "%d of %d paths censored at the step budget", int(batch.censored.sum()), batch.size
        )
    return batch


def simulate_path(
    problem: GameProblem | ExtendedProblem,
    policies: MarkovPolicy,
    x0: np.ndarray,
    dt: float,
    epsilon: float = 0.0,
    seed: int = 0,
    path: int = 0,
) -> PathOutcome:
    """One Euler-Maruyama path; its noise stream is keyed by (seed, path)."""
    problem, extension = _split(problem)
    x0 = as_points(x0, problem.dimension)[0]
    config = McConfig(n_paths=2, dt=dt, seed=seed, epsilon=epsilon)
    width = problem.coefficients.noise_dimension + problem.dimension
    stream = NoiseStream(seed, path, 1, width)
    batch = _simulate_block(
        problem,
        policies,
        x0,
        config,
        stream,
        _sup_running_cost(problem, extension),
        problem.sup_abs_g(),
        extension,
    )
    return batch.outcome(0)


def estimate_payoff(
    problem: GameProblem | ExtendedProblem,
    policies: MarkovPolicy,
    x0: np.ndarray,
    config: McConfig,
) -> McEstimate:
    """Mean and standard error of the discounted exit payoff from x0.

    Censored paths contribute their accumulated integral; the mean of their
    per-path bias bounds is reported alongside.
    """
    batch = simulate_batch(problem, policies, x0, config)
    estimate = McEstimate.from_samples(
        batch.payoff,
        seed=config.seed,
        censored=batch.censored,
        bias_bound=float(batch.bias.mean()),
        dt=config.dt,
        epsilon=config.epsilon,
    )
    if not estimate.usable:
        logger.warning("all %d paths censored; estimate unusable", estimate.n_paths)
    return estimate


# Dynamic programming principle


@dataclass(frozen=True)
class DppReport:
    v_x0: float
    rhs: float
    stderr: float
    discrepancy: float
    tolerance: float
    passed: bool
    gamma: float
    lambda0: float
    n_paths: int
    dt: float
    seed: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_dpp(
    problem: GameProblem,
    v_field: ScalarField,
    gamma: float,
    lambda0: float,
    x0: np.ndarray,
    policies: MarkovPolicy,
    config: McConfig,
) -> DppReport:
    """Compare v(x0) with E[v(x_g) e^{-phi-psi} + int_0^g (f + lambda0 v) e^{-phi-psi} dt].

    psi_t = lambda0 t. The tolerance is 3 standard errors plus config.allowance.
    """
    if not problem.domain.is_whole_space:
        raise ConfigurationError("the DPP check runs on whole-space problems")
    if gamma < 0 or lambda0 < 0:
        raise ConfigurationError("gamma and lambda0 must be nonnegative")
    x0 = as_points(x0, problem.dimension)[0]
    v0 = float(v_field.interpolate(x0)[0])
    steps = int(round(gamma / config.dt))
    if steps == 0:
        return DppReport(
            v0, v0, 0.0, 0.0, config.allowance, True, gamma, lambda0,
            config.n_paths, config.dt, config.seed,
        )
    if abs(steps * config.dt - gamma) > 1e-9 * max(1.0, gamma):
        raise ConfigurationError(f"horizon {gamma} is not a multiple of dt {config.dt}")

    coefficients = problem.coefficients
    d, d1 = problem.dimension, coefficients.noise_dimension
    sizes = block_sizes(config.n_paths, config.block_size)

    def run(block: int) -> np.ndarray:
        stream = NoiseStream(config.seed, block, sizes[block], d1 + d)
        x = np.broadcast_to(x0, (sizes[block], d)).copy()
        discount = np.zeros(sizes[block])
        total = np.zeros(sizes[block])
        for step in range(steps):
            noise = stream.increments(step, config.dt)
            sigma, b, c, f = coefficients_along(coefficients, policies, x)
            rate = c + lambda0
            integrand = f + lambda0 * v_field.interpolate(x)
            total += integrand * np.exp(-discount) * exponential_weight(rate, config.dt)
            discount += rate * config.dt
            x = euler_step(x, sigma, b, noise[:, :d1], noise[:, d1:], config.dt, config.epsilon)
        return total + v_field.interpolate(x) * np.exp(-discount)

    samples = np.concatenate(run_blocks(run, len(sizes), config.threads))
    estimate = McEstimate.from_samples(samples, seed=config.seed, dt=config.dt)
    discrepancy = abs(estimate.mean - v0)
    tolerance = 3.0 * estimate.stderr + config.allowance
    logger.info("DPP gamma=%g lambda0=%g: discrepancy %.4g (tolerance %.4g)", gamma, lambda0, discrepancy, tolerance)
    return DppReport(
        v0,
        estimate.mean,
        estimate.stderr,
        discrepancy,
        tolerance,
        discrepancy <= tolerance,
        gamma,
        lambda0,
        config.n_paths,
        config.dt,
        config.seed,
    )


# Saddle-point ordering


@dataclass(frozen=True)
class Perturbation:
    player: Literal["alpha", "beta"]
    region: Box
    control: int

    def apply(self, policies: MarkovPolicy) -> MarkovPolicy:
        if self.player == "alpha":
            return policies.with_override(self.region, alpha=self.control)
        return policies.with_override(self.region, beta=self.control)


@dataclass(frozen=True)
class PerturbationResult:
    perturbation: Perturbation
    mean_difference: float
    stderr: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "player": self.perturbation.player,
            "control": self.perturbation.control,
            "region": [list(self.perturbation.region.lo), list(self.perturbation.region.hi)],
            "mean_difference": self.mean_difference,
            "stderr": self.stderr,
            "passed": self.passed,
        }


@dataclass(frozen=True)
class SaddleReport:
    base: McEstimate
    results: tuple[PerturbationResult, ...]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "base": self.base.to_dict(),
            "perturbations": [result.to_dict() for result in self.results],
        }


def default_perturbations(problem: GameProblem, x0: np.ndarray, radius: float | None = None):
    """Every alternative control of each non-singleton player on a box around x0."""
    x0 = as_points(x0, problem.dimension)[0]
    radius = radius or 0.5 * problem.domain.bounding_radius
    region = Box.around(x0, radius)
    coefficients = problem.coefficients
    perturbations = []
    for player, controls in (("alpha", coefficients.alpha), ("beta", coefficients.beta)):
        if len(controls) < 2:
            continue
        perturbations += [Perturbation(player, region, k) for k in range(len(controls))]
    return perturbations


def saddle_check(
    problem: GameProblem,
    saddle_policies: MarkovPolicy,
    perturbations: Sequence[Perturbation] | None,
    x0: np.ndarray,
    config: McConfig,
) -> SaddleReport:
    """Perturbing beta must not lower the payoff, perturbing alpha must not raise it.

    Each perturbed run reuses the base run's noise, so the comparison uses the
    standard error of the paired differences.
    """
    if perturbations is None:
        perturbations = default_perturbations(problem, x0)
    base = simulate_batch(problem, saddle_policies, x0, config)
    base_estimate = McEstimate.from_samples(base.payoff, config.seed, base.censored, dt=config.dt)
    results = []
    for perturbation in perturbations:
        other = simulate_batch(problem, perturbation.apply(saddle_policies), x0, config)
        difference = other.payoff - base.payoff
        mean = float(difference.mean())
        stderr = float(difference.std(ddof=1) / math.sqrt(difference.size))
        if perturbation.player == "alpha":
            passed = mean <= 3.0 * stderr
        else:
            passed = mean >= -3.0 * stderr
        results.append(PerturbationResult(perturbation, mean, stderr, passed))
    return SaddleReport(base_estimate, tuple(results))


# Continuity and coupling studies


@dataclass(frozen=True)
class EpsilonSweep:
    epsilons: tuple[float, ...]
    estimates: tuple[McEstimate, ...]
    gaps: tuple[float, ...]
    gap_stderrs: tuple[float, ...]

    @property
    def gaps_shrinking(self) -> bool:
        return all(b <= a + 3.0 * s for a, b, s in zip(self.gaps, self.gaps[1:], self.gap_stderrs[1:]))

    @property
    def passed(self) -> bool:
        return self.gaps[-1] <= 3.0 * self.gap_stderrs[-1] if self.gaps else True

    def to_dict(self) -> dict:
        return {
            "epsilons": list(self.epsilons),
            "estimates": [estimate.to_dict() for estimate in self.estimates],
            "gaps": list(self.gaps),
            "gap_stderrs": list(self.gap_stderrs),
            "gaps_shrinking": self.gaps_shrinking,
            "passed": self.passed,
        }


def epsilon_sweep(
    problem: GameProblem,
    policies: MarkovPolicy,
    x0: np.ndarray,
    epsilons: Sequence[float] = (0.2, 0.1, 0.05, 0.0),
    config: McConfig | None = None,
) -> EpsilonSweep:
    """Payoff estimates under decreasing auxiliary noise, all driven by the same noise."""
    config = config or McConfig()
    payoffs, estimates = [], []
    for epsilon in epsilons:
        run = replace(config, epsilon=epsilon)
        batch = simulate_batch(problem, policies, x0, run)
        payoffs.append(batch.payoff)
        estimates.append(
            McEstimate.from_samples(batch.payoff, config.seed, batch.censored, dt=config.dt, epsilon=epsilon)
        )
    gaps, stderrs = [], []
    for a, b in zip(payoffs, payoffs[1:]):
        difference = a - b
        gaps.append(float(abs(difference.mean())))
        stderrs.append(float(difference.std(ddof=1) / math.sqrt(difference.size)))
    return EpsilonSweep(tuple(epsilons), tuple(estimates), tuple(gaps), tuple(stderrs))


@dataclass(frozen=True)
class CouplingReport:
    shifts: tuple[float, ...]
    constants: tuple[float, ...]
    constants_half_dt: tuple[float, ...]

    @property
    def constant(self) -> float:
        return max(self.constants)

    @property
    def stable(self) -> bool:
        fine = max(self.constants_half_dt)
        return abs(fine - self.constant) <= 0.25 * max(fine, self.constant)

    def to_dict(self) -> dict:
        return {
            "shifts": list(self.shifts),
            "constants": list(self.constants),
            "constants_half_dt": list(self.constants_half_dt),
            "constant": self.constant,
            "stable": self.stable,
        }


def _coupled_sup_distance(
    problem: GameProblem,
    policies: MarkovPolicy,
    x: np.ndarray,
    shift: np.ndarray,
    config: McConfig,
    horizon: float,
) -> float:
    coefficients = problem.coefficients
    d, d1 = problem.dimension, coefficients.noise_dimension
    steps = int(round(horizon / config.dt))
    sizes = block_sizes(config.n_paths, config.block_size)

    def run(block: int) -> np.ndarray:
        n = sizes[block]
        stream = NoiseStream(config.seed, block, n, d1 + d)
        first = np.broadcast_to(x, (n, d)).copy()
        second = np.broadcast_to(x + shift, (n, d)).copy()
        worst = np.linalg.norm(second - first, axis=1)
        for step in range(steps):
            noise = stream.increments(step, config.dt)
            both = np.vstack([first, second])
            shared = np.vstack([noise, noise])
            sigma, b, _, _ = coefficients_along(coefficients, policies, both)
            both = euler_step(both, sigma, b, shared[:, :d1], shared[:, d1:], config.dt, config.epsilon)
            first, second = both[:n], both[n:]
            worst = np.maximum(worst, np.linalg.norm(second - first, axis=1))
        return worst

    return float(np.concatenate(run_blocks(run, len(sizes), config.threads)).mean())


def coupling_constant(
    problem: GameProblem,
    policies: MarkovPolicy,
    x: np.ndarray,
    shifts: Sequence[Sequence[float]],
    config: McConfig | None = None,
    horizon: float = 1.0,
) -> CouplingReport:
    """Fit C in E sup_{t <= horizon} |x_t - x'_t| <= C |y| for paths from x and x + y with shared noise.

    The fit is repeated at dt/2 to check its stability.
    """
    config = config or McConfig(n_paths=2000, dt=1e-2)
    x = as_points(x, problem.dimension)[0]
    norms, coarse, fine = [], [], []
    for shift in shifts:
        shift = np.asarray(shift, dtype=float).reshape(problem.dimension)
        size = float(np.linalg.norm(shift))
        if size == 0:
            raise ConfigurationError("coupling shifts must be nonzero")
        norms.append(size)
        coarse.append(_coupled_sup_distance(problem, policies, x, shift, config, horizon) / size)
        half = replace(config, dt=config.dt / 2)
        fine.append(_coupled_sup_distance(problem, policies, x, shift, half, horizon) / size)
    return CouplingReport(tuple(norms), tuple(coarse), tuple(fine))
