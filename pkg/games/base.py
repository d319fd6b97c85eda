"""
Base types, errors, and shared records for the game laboratory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class IsaacsLabError(Exception):
    """Root of every error raised by the laboratory."""


class ConfigurationError(IsaacsLabError):
    """A problem, preset or parameter set is malformed or inconsistent."""


class DiscretizationError(IsaacsLabError):
    """A finite-difference stencil reaches outside the grid."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message)
        self.node = node


class BarrierConstructionError(IsaacsLabError):
    """The barrier parameter search ran out of iterations."""


class NonConvergenceError(IsaacsLabError):
    """An iterative solve exhausted its budget."""

    def __init__(self, message: str, residual_history: Sequence[float] = ()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class CrossCheckError(IsaacsLabError):
    """Two independent realizations of the same quantity disagree."""


class ExtrapolationError(IsaacsLabError):
    """A simulated state left the region covered by a grid field."""


class OutsideDomainError(IsaacsLabError):
    """A point expected inside the domain has Psi <= 0."""


class SurfaceBreachError(IsaacsLabError):
    """A lifted path reached Psi(x) < 0 while projection was on."""


class CalibrationError(IsaacsLabError):
    """No equator band satisfies the calibration conditions above the floor."""


class StudyAbortedError(IsaacsLabError):
    """A multi-solve study failed part way; carries the rows finished so far."""

    def __init__(self, message: str, partial: object = None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class ControlSet:
    """Finite ordered set of control labels.

    Iteration order is the declaration order; ties in max/min resolve to the
    lowest index.
    """

    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise ConfigurationError("control set must not be empty")
        if len(set(self.labels)) != len(self.labels):
            raise ConfigurationError(f"duplicate control labels: {self.labels}")

    @property
    def cardinality(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ConfigurationError(f"unknown control label {label!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self.labels)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class McEstimate:
    """Monte Carlo estimate of a path functional."""

    mean: float
    stderr: float
    n_paths: int
    seed: int
    censored_count: int = 0
    bias_bound: float = 0.0
    dt: float = 0.0
    epsilon: float = 0.0
    usable: bool = True
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(
        cls,
        samples: np.ndarray,
        seed: int,
        censored: np.ndarray | None = None,
        bias_bound: float = 0.0,
        dt: float = 0.0,
        epsilon: float = 0.0,
    ) -> "McEstimate":
        samples = np.asarray(samples, dtype=float)
        n = samples.size
        censored_count = int(np.count_nonzero(censored)) if censored is not None else 0
        stderr = float(samples.std(ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
        return cls(
            mean=float(samples.mean()),
            stderr=stderr,
            n_paths=n,
            seed=seed,
            censored_count=censored_count,
            bias_bound=float(bias_bound),
            dt=dt,
            epsilon=epsilon,
            usable=censored_count < n,
            samples=samples,
        )

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "dt": self.dt,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "censored_count": self.censored_count,
            "bias_bound": self.bias_bound,
            "usable": self.usable,
        }


def as_points(x: np.ndarray, dimension: int) -> np.ndarray:
    """Coerce a point or batch of points to shape (n, d)."""
    points = np.atleast_2d(np.asarray(x, dtype=float))
    if points.shape[-1] != dimension:
        if dimension == 1 and points.shape[0] == 1:
            points = points.reshape(-1, 1)
        else:
            raise ConfigurationError(
                f"expected points of dimension {dimension}, got shape {points.shape}"
            )
    return points
