"""
Problem files and experiment configuration.

Problem files are JSON documents validated by ProblemFile; unknown fields are
rejected. build_problem turns a validated file into a GameProblem, fitting the
barrier for bounded domains.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from games.barrier import make_barrier
from games.base import ConfigurationError, ControlSet
from games.model import (
    AffinePair,
    Domain,
    GameCoefficients,
    GameProblem,
    QuadraticCost,
    TableCost,
    TablePair,
    TrigonometricPair,
    constant_cost,
    linear_cost,
    zero_cost,
)

Matrix = list[list[float]]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Coefficient presets


class AffineParams(StrictModel):
    """sigma constant; b = b0 + b1 x; c = c0 + c1.x; f = f0 + f1.x."""

    sigma: Union[float, Matrix] = 1.0
    b0: list[float] | None = None
    b1: Matrix | None = None
    c0: float = 0.0
    c1: list[float] | None = None
    f0: float = 0.0
    f1: list[float] | None = None


class TrigonometricParams(StrictModel):
    """theta = omega.x + phase; sigma (1 + sigma_amp sin); b0 + b_amp cos; c0 + c_amp sin^2; f0 + f_amp cos."""

    sigma: Union[float, Matrix] = 1.0
    sigma_amp: float = 0.0
    omega: list[float] | None = None
    phase: float = 0.0
    b0: list[float] | None = None
    b_amp: list[float] | None = None
    c0: float = 0.0
    c_amp: float = 0.0
    f0: float = 0.0
    f_amp: float = 0.0


class TableParams(StrictModel):
    """Values tabulated at nodes of the first coordinate, linearly interpolated."""

    nodes: list[float]
    sigma_scale: list[float]
    b: Matrix
    c: list[float]
    f: list[float]

    @model_validator(mode="after")
    def _same_length(self) -> "TableParams":
        n = len(self.nodes)
        if any(len(column) != n for column in (self.sigma_scale, self.b, self.c, self.f)):
            raise ValueError("table columns must have one entry per node")
        if any(b <= a for a, b in zip(self.nodes, self.nodes[1:])):
            raise ValueError("table nodes must be strictly increasing")
        return self


PRESET_PARAMS = {
    "affine": AffineParams,
    "trigonometric": TrigonometricParams,
    "table": TableParams,
}


class CoefficientSpec(StrictModel):
    """One preset for every control pair; `pairs` overrides fields per "alpha/beta" label pair."""

    preset: Literal["affine", "trigonometric", "table"]
    default: dict = Field(default_factory=dict)
    pairs: dict[str, dict] = Field(default_factory=dict)

    def params(self, alpha: str, beta: str):
        merged = {**self.default, **self.pairs.get(f"{alpha}/{beta}", {})}
        return PRESET_PARAMS[self.preset].model_validate(merged)


class ControlSets(StrictModel):
    alpha: list[str] = Field(min_length=1)
    beta: list[str] = Field(min_length=1)


class DomainSpec(StrictModel):
    kind: Literal["ball", "ellipse", "whole_space"]
    radius: float | None = Field(default=None, gt=0)
    axes: list[float] | None = None
    half_width: float | None = Field(default=None, gt=0)
    barrier_mu: float | None = Field(default=None, gt=0)


class Constants(StrictModel):
    K0: float = Field(gt=0)
    delta: float = Field(gt=0, lt=1)
    delta1: float | None = Field(default=None, gt=0)


class TerminalSpec(StrictModel):
    preset: Literal["zero", "constant", "linear", "quadratic", "table"] = "zero"
    value: float = 0.0
    p: list[float] | None = None
    Q: Matrix | None = None
    r: float = 0.0
    nodes: list[float] | None = None
    values: list[float] | None = None


class ProblemFile(StrictModel):
    name: str = "problem"
    dimension: int = Field(ge=1)
    noise_dimension: int | None = Field(default=None, ge=1)
    control_sets: ControlSets
    coefficients: CoefficientSpec
    domain: DomainSpec
    constants: Constants
    terminal_cost: TerminalSpec = Field(default_factory=TerminalSpec)

    @model_validator(mode="after")
    def _check_pairs(self) -> "ProblemFile":
        known = {f"{a}/{b}" for a in self.control_sets.alpha for b in self.control_sets.beta}
        unknown = set(self.coefficients.pairs) - known
        if unknown:
            raise ValueError(f"coefficient overrides for unknown control pairs: {sorted(unknown)}")
        return self


# Building


def _vector(values: list[float] | None, size: int, name: str) -> np.ndarray:
    if values is None:
        return np.zeros(size)
    array = np.asarray(values, dtype=float)
    if array.shape != (size,):
        raise ConfigurationError(f"{name} must have length {size}, got {array.shape}")
    return array


def _matrix(values, rows: int, cols: int, name: str) -> np.ndarray:
    if values is None:
        return np.zeros((rows, cols))
    if isinstance(values, (int, float)):
        return float(values) * np.eye(rows, cols)
    array = np.asarray(values, dtype=float)
    if array.shape != (rows, cols):
        raise ConfigurationError(f"{name} must be {rows} x {cols}, got {array.shape}")
    return array


def _build_pair(params, d: int, d1: int):
    if isinstance(params, AffineParams):
        return AffinePair(
            sigma0=_matrix(params.sigma, d, d1, "sigma"),
            b0=_vector(params.b0, d, "b0"),
            b1=_matrix(params.b1, d, d, "b1"),
            c0=params.c0,
            c1=_vector(params.c1, d, "c1"),
            f0=params.f0,
            f1=_vector(params.f1, d, "f1"),
        )
    if isinstance(params, TrigonometricParams):
        return TrigonometricPair(
            sigma0=_matrix(params.sigma, d, d1, "sigma"),
            sigma_amp=params.sigma_amp,
            omega=_vector(params.omega, d, "omega"),
            phase=params.phase,
            b0=_vector(params.b0, d, "b0"),
            b_amp=_vector(params.b_amp, d, "b_amp"),
            c0=params.c0,
            c_amp=params.c_amp,
            f0=params.f0,
            f_amp=params.f_amp,
        )
    b = np.asarray(params.b, dtype=float)
    if b.shape != (len(params.nodes), d):
        raise ConfigurationError(f"table drift must be {len(params.nodes)} x {d}")
    return TablePair(
        nodes=np.asarray(params.nodes, dtype=float),
        sigma_scale=np.asarray(params.sigma_scale, dtype=float),
        b=b,
        c=np.asarray(params.c, dtype=float),
        f=np.asarray(params.f, dtype=float),
        noise_dimension=d1,
    )


def _build_terminal(spec: TerminalSpec, d: int):
    if spec.preset == "zero":
        return zero_cost(d)
    if spec.preset == "constant":
        return constant_cost(d, spec.value)
    if spec.preset == "linear":
        return linear_cost(_vector(spec.p, d, "p"), spec.r)
    if spec.preset == "quadratic":
        return QuadraticCost(_matrix(spec.Q, d, d, "Q"), _vector(spec.p, d, "p"), spec.r)
    if spec.nodes is None or spec.values is None or len(spec.nodes) != len(spec.values):
        raise ConfigurationError("table terminal cost needs nodes and values of equal length")
    return TableCost(np.asarray(spec.nodes, dtype=float), np.asarray(spec.values, dtype=float))


def build_coefficients(problem_file: ProblemFile) -> GameCoefficients:
    d = problem_file.dimension
    d1 = problem_file.noise_dimension or d
    alpha = ControlSet(tuple(problem_file.control_sets.alpha))
    beta = ControlSet(tuple(problem_file.control_sets.beta))
    pairs = tuple(
        tuple(_build_pair(problem_file.coefficients.params(a, b), d, d1) for b in beta)
        for a in alpha
    )
    constants = problem_file.constants
    return GameCoefficients(
        alpha=alpha,
        beta=beta,
        pairs=pairs,
        terminal=_build_terminal(problem_file.terminal_cost, d),
        dimension=d,
        noise_dimension=d1,
        K0=constants.K0,
        delta=constants.delta,
        delta1=constants.delta1,
    )


def build_problem(problem_file: ProblemFile) -> GameProblem:
    """Coefficients, domain and fitted barrier of a validated problem file."""
    coefficients = build_coefficients(problem_file)
    spec = problem_file.domain
    domain = Domain(
        kind=spec.kind,
        radius=spec.radius,
        axes=None if spec.axes is None else tuple(spec.axes),
        half_width=spec.half_width,
        barrier_mu=spec.barrier_mu,
    )
    return GameProblem(coefficients, domain, make_barrier(domain, coefficients), problem_file.name)


def load_problem_file(path: str | Path) -> ProblemFile:
    return ProblemFile.model_validate_json(Path(path).read_text(encoding="utf-8"))


def load_problem(path: str | Path) -> GameProblem:
    return build_problem(load_problem_file(path))


# Experiment configuration


class ExperimentConfig(StrictModel):
    """Parameters of one CLI command; embedded verbatim in its result document."""

    command: str
    problem: str
    out: str = "results"
    h: float = Field(default=2.0**-6, gt=0)
    K_list: list[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    K: float = Field(default=8.0, ge=0)
    delta_hat: float | None = Field(default=None, gt=0, le=1)
    rotations: int = Field(default=8, ge=1)
    mode: Literal["extended-game", "obstacle-residual"] = "extended-game"
    cross_check: bool = False
    reference_h: float | None = Field(default=None, gt=0)
    tolerance: float = Field(default=1e-8, gt=0)
    relaxation: float = Field(default=1.0, gt=0, le=1)
    linear_solver: Literal["spsolve", "gauss_seidel"] = "spsolve"
    allow_nonmonotone: bool = False
    dt: float = Field(default=1e-3, gt=0)
    n_paths: int = Field(default=10000, ge=2)
    seed: int = Field(default=0, ge=0, lt=2**64)
    threads: int = Field(default=1, ge=1)
    epsilon: float = Field(default=0.0, ge=0)
    epsilons: list[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05, 0.0])
    x0: list[list[float]] | None = None
    gamma: float = Field(default=1.0, ge=0)
    lambda0: float = Field(default=0.0, ge=0)
    allowance: float = Field(default=0.02, ge=0)
    psi_threshold: float = Field(default=0.2, ge=0)
    timings: bool = False
    policy: Literal["saddle", "constant"] = "saddle"

    @field_validator("problem")
    @classmethod
    def _problem_exists(cls, value: str) -> str:
        if not Path(value).is_file():
            raise ValueError(f"problem file not found: {value}")
        return value

    @field_validator("K_list")
    @classmethod
    def _increasing(cls, value: list[float]) -> list[float]:
        if not value or any(b <= a for a, b in zip(value, value[1:])):
            raise ValueError("K_list must be nonempty and strictly increasing")
        return value
