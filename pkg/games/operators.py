"""
Monotone finite-difference operators on uniform grids.

L^{ab} u = a_ij D_ij u + b_i D_i u - c u is discretized with diagonal
second differences for the cross terms and upwind first differences, so
every interior stencil reads

    L_h u(x) = sum_k w_k (u(x + h e_k) - u(x)) - c u(x).

The scheme is monotone iff all w_k >= 0, i.e. a_ii >= sum_{j != i} |a_ij|.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .base import ConfigurationError, DiscretizationError, ExtrapolationError, as_points
from .model import A2Family, ExtendedProblem, GameProblem

logger = logging.getLogger(__name__)


def stencil_offsets(dimension: int) -> np.ndarray:
    """Integer offsets: +-e_i, then +-(e_i + e_j), +-(e_i - e_j) for i < j."""
    eye = np.eye(dimension, dtype=int)
    offsets = []
    for i in range(dimension):
        offsets += [eye[i], -eye[i]]
    for i, j in itertools.combinations(range(dimension), 2):
        offsets += [eye[i] + eye[j], -eye[i] - eye[j], eye[i] - eye[j], eye[j] - eye[i]]
    return np.array(offsets, dtype=int).reshape(-1, dimension)


def second_order_weights(a: np.ndarray, h: float) -> np.ndarray:
    """Stencil weights of a_ij D_ij for a stack of matrices a with shape (n, d, d)."""
    n, d, _ = a.shape
    weights = np.zeros((n, 2 * d * d))
    off = np.abs(a)
    for i in range(d):
        diagonal = a[:, i, i] - (off[:, i, :].sum(axis=1) - off[:, i, i])
        weights[:, 2 * i] = weights[:, 2 * i + 1] = diagonal / h**2
    for k, (i, j) in enumerate(itertools.combinations(range(d), 2)):
        col = 2 * d + 4 * k
        plus = np.maximum(a[:, i, j], 0.0) / h**2
        minus = np.maximum(-a[:, i, j], 0.0) / h**2
        weights[:, col] = weights[:, col + 1] = plus
        weights[:, col + 2] = weights[:, col + 3] = minus
    return weights


def first_order_weights(b: np.ndarray, h: float) -> np.ndarray:
    """Upwind stencil weights of b_i D_i for drifts with shape (n, d)."""
    n, d = b.shape
    weights = np.zeros((n, 2 * d * d))
    weights[:, 0 : 2 * d : 2] = np.maximum(b, 0.0) / h
    weights[:, 1 : 2 * d : 2] = np.maximum(-b, 0.0) / h
    return weights


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform lattice h Z^d cut to a box, with nodes classified against the domain."""

    dimension: int
    h: float
    axis: np.ndarray
    points: np.ndarray
    psi: np.ndarray
    interior: np.ndarray
    band: np.ndarray
    offsets: np.ndarray
    neighbors: np.ndarray
    position: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.axis.size,) * self.dimension

    @property
    def n_nodes(self) -> int:
        return self.points.shape[0]

    @property
    def n_interior(self) -> int:
        return self.interior.size

    @property
    def interior_points(self) -> np.ndarray:
        return self.points[self.interior]

    def classify(self, node: int) -> str:
        if self.position[node] >= 0:
            return "interior"
        if node in set(self.band.tolist()):
            return "band"
        return "exterior"

    def node_at(self, x: np.ndarray) -> np.ndarray:
        """Flat index of the lattice node nearest to each point."""
        points = as_points(x, self.dimension)
        k = np.rint((points - self.axis[0]) / self.h).astype(int)
        k = np.clip(k, 0, self.axis.size - 1)
        return np.ravel_multi_index(tuple(k.T), self.shape)

    def colors(self) -> np.ndarray:
        """Red-black color (parity of the index sum) of every interior node."""
        index = np.array(np.unravel_index(self.interior, self.shape)).T
        return index.sum(axis=1) % 2

    @classmethod
    def build(cls, problem: GameProblem, h: float) -> "Grid":
        """Lattice covering the domain with one extra layer for the boundary band.

        Bounded domains classify nodes by the barrier sign. Whole-space problems
        are truncated to the box [-L, L]^d whose outer layer is the band.
        """
        if h <= 0:
            raise ConfigurationError(f"grid spacing must be positive, got {h}")
        d = problem.dimension
        radius = problem.domain.bounding_radius
        if problem.domain.is_whole_space:
            n = int(math.ceil(radius / h - 1e-9))
        else:
            n = int(math.ceil(radius / h)) + 1
        axis = h * np.arange(-n, n + 1)
        shape = (axis.size,) * d
        index = np.indices(shape).reshape(d, -1).T
        points = axis[index]

        if problem.domain.is_whole_space:
            centered = np.abs(index - n).max(axis=1)
            psi = (n - centered) * h
            inside = centered < n
        else:
            psi = problem.barrier.psi(points)
            inside = psi > 0

        offsets = stencil_offsets(d)
        interior = np.flatnonzero(inside)
        reach = index[interior][:, None, :] + offsets[None, :, :]
        outside = np.any((reach < 0) | (reach >= axis.size), axis=2)
        if outside.any():
            node = int(interior[np.argmax(outside.any(axis=1))])
            raise DiscretizationError(f"stencil of node {node} leaves the grid", node=node)
        neighbors = np.ravel_multi_index(tuple(np.moveaxis(reach, 2, 0)), shape)
        band = np.unique(neighbors[~inside[neighbors]])

        position = np.full(points.shape[0], -1, dtype=int)
        position[interior] = np.arange(interior.size)
        logger.debug(
            "grid h=%g: %d nodes, %d interior, %d band", h, points.shape[0], interior.size, band.size
        )
        return cls(
            dimension=d,
            h=float(h),
            axis=axis,
            points=points,
            psi=psi,
            interior=interior,
            band=band,
            offsets=offsets,
            neighbors=neighbors,
            position=position,
        )


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One finite value per grid node."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n_nodes,):
            raise ConfigurationError(
                f"field has shape {values.shape}, grid has {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise ConfigurationError("field values must be finite")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(grid.points), dtype=float))

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]

    def __mul__(self, scale: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * scale)

    __rmul__ = __mul__

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values)

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        axes = (self.grid.axis,) * self.grid.dimension
        return RegularGridInterpolator(
            axes, self.values.reshape(self.grid.shape), bounds_error=False, fill_value=np.nan
        )

    def interpolate(self, x: np.ndarray) -> np.ndarray:
        """Multilinear interpolation; raises when a point lies outside the lattice box."""
        points = as_points(x, self.grid.dimension)
        values = self._interpolator(points)
        if np.any(np.isnan(values)):
            bad = points[np.isnan(values)][0]
            raise ExtrapolationError(f"point {bad.tolist()} lies outside the field's grid")
        return values


class HamiltonianValue(NamedTuple):
    value: float
    alpha: int
    beta: int


def _check_interior(grid: Grid, node: int) -> int:
    position = int(grid.position[node])
    if position < 0:
        raise DiscretizationError(
            f"node {node} ({grid.classify(node)}) has no interior stencil", node=node
        )
    return position


def _differences(field: ScalarField, node: int) -> np.ndarray:
    grid = field.grid
    position = _check_interior(grid, node)
    return field.values[grid.neighbors[position]] - field.values[node]


def apply_L(problem: GameProblem, field: ScalarField, ia: int, ib: int, node: int) -> float:
    """Discrete L^{ab} u at one interior node."""
    grid = field.grid
    diffs = _differences(field, node)
    values = problem.coefficients.evaluate(ia, ib, grid.points[node])
    weights = second_order_weights(values.a, grid.h)[0] + first_order_weights(values.b, grid.h)[0]
    return float(np.dot(weights, diffs) - values.c[0] * field.values[node])


def isaacs_H(problem: GameProblem, field: ScalarField, node: int) -> HamiltonianValue:
    """max_alpha min_beta (L^{ab} u + f) at one node, lowest index winning ties."""
    coefficients = problem.coefficients
    x = field.grid.points[node]
    best = HamiltonianValue(-math.inf, 0, 0)
    for ia in range(len(coefficients.alpha)):
        row = [
            apply_L(problem, field, ia, ib, node) + float(coefficients.evaluate(ia, ib, x).f[0])
            for ib in range(len(coefficients.beta))
        ]
        ib = int(np.argmin(row))
        if row[ib] > best.value:
            best = HamiltonianValue(row[ib], ia, ib)
    return best


def discrete_hessian(diffs: np.ndarray, dimension: int, h: float) -> np.ndarray:
    """Central Hessian from stencil differences of shape (..., m)."""
    hessian = np.zeros(diffs.shape[:-1] + (dimension, dimension))
    for i in range(dimension):
        hessian[..., i, i] = (diffs[..., 2 * i] + diffs[..., 2 * i + 1]) / h**2
    for k, (i, j) in enumerate(itertools.combinations(range(dimension), 2)):
        col = 2 * dimension + 4 * k
        along = diffs[..., col] + diffs[..., col + 1]
        across = diffs[..., col + 2] + diffs[..., col + 3]
        hessian[..., i, j] = hessian[..., j, i] = (along - across) / (4 * h**2)
    return hessian


def upwind_gradient_norm(diffs: np.ndarray, dimension: int, h: float) -> np.ndarray:
    """Godunov magnitude sqrt(sum_i max(D+_i u, -D-_i u, 0)^2)."""
    forward = diffs[..., 0 : 2 * dimension : 2] / h
    backward = diffs[..., 1 : 2 * dimension : 2] / h
    return np.sqrt(np.sum(np.maximum(np.maximum(forward, backward), 0.0) ** 2, axis=-1))


def pucci_extremal(eigenvalues: np.ndarray, delta_hat: float) -> np.ndarray:
    positive = np.where(eigenvalues > 0, eigenvalues, 0.0).sum(axis=-1)
    negative = np.where(eigenvalues < 0, -eigenvalues, 0.0).sum(axis=-1)
    return positive / delta_hat - delta_hat * negative


def pucci_P(field: ScalarField, node: int, delta_hat: float) -> float:
    """M+_{delta_hat}(D^2_h u) + |D_h u| / delta_hat - delta_hat u at one node."""
    grid = field.grid
    diffs = _differences(field, node)
    eigenvalues = np.linalg.eigvalsh(discrete_hessian(diffs, grid.dimension, grid.h))
    gradient = upwind_gradient_norm(diffs, grid.dimension, grid.h)
    return float(
        pucci_extremal(eigenvalues, delta_hat)
        + gradient / delta_hat
        - delta_hat * field.values[node]
    )


def regularized_residual(
    problem: GameProblem, field: ScalarField, node: int, K: float, delta_hat: float
) -> float:
    return max(isaacs_H(problem, field, node).value, pucci_P(field, node, delta_hat) - K)


def a2_weights(family: A2Family, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Stencil weights of the penalized family's second-order and drift factors."""
    return second_order_weights(family.matrices, h), first_order_weights(family.drifts, h)


def extended_hamiltonian(ext: ExtendedProblem, field: ScalarField, node: int) -> HamiltonianValue:
    """Isaacs Hamiltonian over the extended maximizer controls A1 followed by A2."""
    base = isaacs_H(ext.base, field, node)
    grid = field.grid
    diffs = _differences(field, node)
    second, first = a2_weights(ext.a2, grid.h)
    s, q = second @ diffs, first @ diffs
    i, j = int(np.argmax(s)), int(np.argmax(q))
    value = s[i] + q[j] - ext.a2.rate * field.values[node] - ext.K
    if value > base.value:
        n_alpha = len(ext.base.coefficients.alpha)
        return HamiltonianValue(float(value), n_alpha + i * len(ext.a2.drifts) + j, 0)
    return base


@dataclass(frozen=True)
class MonotonicityReport:
    monotone: bool
    worst_weight: float
    node: int | None
    alpha: int | None
    beta: int | None

    def to_dict(self) -> dict:
        return {
            "monotone": self.monotone,
            "worst_weight": self.worst_weight,
            "node": self.node,
            "alpha": self.alpha,
            "beta": self.beta,
        }


def monotonicity_report(
    problem: GameProblem, grid: Grid, family: A2Family | None = None
) -> MonotonicityReport:
    """Smallest stencil weight over interior nodes and control pairs.

    With a penalized family its vertices are scanned too; they are reported
    under their extended maximizer index and beta 0.
    """
    worst = MonotonicityReport(True, math.inf, None, None, None)
    points = grid.interior_points
    for ia, ib in problem.coefficients.control_pairs:
        values = problem.coefficients.evaluate(ia, ib, points)
        weights = second_order_weights(values.a, grid.h) + first_order_weights(values.b, grid.h)
        flat = int(np.argmin(weights))
        k = flat // weights.shape[1]
        w = float(weights.flat[flat])
        if w < worst.worst_weight:
            worst = MonotonicityReport(w >= 0.0, w, int(grid.interior[k]), ia, ib)
    if family is not None and grid.n_interior:
        second, first = a2_weights(family, grid.h)
        combined = second[:, None, :] + first[None, :, :]
        i, j, _ = np.unravel_index(int(np.argmin(combined)), combined.shape)
        w = float(combined.min())
        if w < worst.worst_weight:
            index = len(problem.coefficients.alpha) + int(i) * len(family.drifts) + int(j)
            worst = MonotonicityReport(w >= 0.0, w, int(grid.interior[0]), index, 0)
    if not worst.monotone:
        logger.warning(
            "stencil loses monotonicity at node %s (weight %.3g, pair %s/%s)",
            worst.node,
            worst.worst_weight,
            worst.alpha,
            worst.beta,
        )
    return worst


@dataclass(frozen=True, eq=False)
class DiscreteGame:
    """Stencil tables of every control pair at every interior node.

    weights has shape (nA, nB, n_int, m); rates and costs (nA, nB, n_int);
    boundary holds the Dirichlet data on all nodes.
    """

    grid: Grid
    weights: np.ndarray
    rates: np.ndarray
    costs: np.ndarray
    boundary: np.ndarray

    @classmethod
    def assemble(cls, problem: GameProblem, grid: Grid) -> "DiscreteGame":
        coefficients = problem.coefficients
        n_alpha, n_beta = len(coefficients.alpha), len(coefficients.beta)
        m = grid.offsets.shape[0]
        weights = np.empty((n_alpha, n_beta, grid.n_interior, m))
        rates = np.empty((n_alpha, n_beta, grid.n_interior))
        costs = np.empty((n_alpha, n_beta, grid.n_interior))
        points = grid.interior_points
        for ia, ib in coefficients.control_pairs:
            values = coefficients.evaluate(ia, ib, points)
            weights[ia, ib] = second_order_weights(values.a, grid.h) + first_order_weights(
                values.b, grid.h
            )
            rates[ia, ib] = values.c
            costs[ia, ib] = values.f
        if problem.domain.is_whole_space:
            boundary = coefficients.frozen_value(grid.points)
        else:
            boundary = coefficients.g(grid.points)
        return cls(grid, weights, rates, costs, boundary)

    def differences(self, u: np.ndarray) -> np.ndarray:
        interior = self.grid.interior
        return u[self.grid.neighbors] - u[interior][:, None]

    def pair_values(self, u: np.ndarray) -> np.ndarray:
        """L^{ab}_h u + f at interior nodes for every pair, shape (nA, nB, n_int)."""
        diffs = self.differences(u)
        u_int = u[self.grid.interior]
        return np.einsum("abnm,nm->abn", self.weights, diffs) - self.rates * u_int + self.costs

    def hamiltonian(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized Isaacs Hamiltonian with first-index argmax/argmin."""
        values = self.pair_values(u)
        beta = np.argmin(values, axis=1)
        inner = np.take_along_axis(values, beta[:, None, :], axis=1)[:, 0, :]
        alpha = np.argmax(inner, axis=0)
        n = np.arange(inner.shape[1])
        return inner[alpha, n], alpha, beta[alpha, n]


def isaacs_field(problem: GameProblem, field: ScalarField) -> np.ndarray:
    """H_h[u] at all interior nodes, recomputed from the coefficients."""
    return DiscreteGame.assemble(problem, field.grid).hamiltonian(field.values)[0]


def pucci_field(field: ScalarField, delta_hat: float) -> np.ndarray:
    """P_h[u] at all interior nodes."""
    grid = field.grid
    diffs = field.values[grid.neighbors] - field.interior_values[:, None]
    eigenvalues = np.linalg.eigvalsh(discrete_hessian(diffs, grid.dimension, grid.h))
    gradient = upwind_gradient_norm(diffs, grid.dimension, grid.h)
    return (
        pucci_extremal(eigenvalues, delta_hat)
        + gradient / delta_hat
        - delta_hat * field.interior_values
    )


def sampled_pucci_field(field: ScalarField, family: A2Family) -> np.ndarray:
    """sup over the penalized family of L^{a2} u (without the -K), at all interior nodes."""
    grid = field.grid
    diffs = field.values[grid.neighbors] - field.interior_values[:, None]
    second, first = a2_weights(family, grid.h)
    return (
        (diffs @ second.T).max(axis=1)
        + (diffs @ first.T).max(axis=1)
        - family.rate * field.interior_values
    )
