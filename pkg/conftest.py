"""
Shared fixtures: the shipped presets, loaded once per session.
"""

from pathlib import Path

import numpy as np
import pytest

from games.base import ControlSet
from games.model import AffinePair, Domain, GameCoefficients, GameProblem, zero_cost
from src.config import load_problem

PRESETS = Path(__file__).parent / "presets"


def preset_path(name: str) -> Path:
    return PRESETS / f"{name}.json"


def skewed_problem() -> GameProblem:
    """Whole-space 2D problem whose diffusion is far from diagonally dominant."""
    pair = AffinePair(
        sigma0=np.array([[1.0, 1.0], [0.0, 0.1]]),
        b0=np.zeros(2),
        b1=np.zeros((2, 2)),
        c0=1.0,
        c1=np.zeros(2),
        f0=1.0,
        f1=np.zeros(2),
    )
    coefficients = GameCoefficients(
        alpha=ControlSet(("a",)),
        beta=ControlSet(("b",)),
        pairs=((pair,),),
        terminal=zero_cost(2),
        dimension=2,
        noise_dimension=2,
        K0=2.0,
        delta=0.001,
        delta1=1.0,
    )
    return GameProblem(coefficients, Domain("whole_space", half_width=0.5))


@pytest.fixture(scope="session")
def linear_problem():
    """a = 1/2, f = 1, c = 0, g = 0 on (-1, 1); v = 1 - x^2."""
    return load_problem(preset_path("linear_1d"))


@pytest.fixture(scope="session")
def two_control_problem():
    return load_problem(preset_path("two_control_1d"))


@pytest.fixture(scope="session")
def drift_game_problem():
    """1/2 u'' + |u'| + 1 = 0 on (-1, 1), u(+-1) = 0; the minimizer has a single control."""
    return load_problem(preset_path("drift_game_1d"))


@pytest.fixture(scope="session")
def whole_space_problem():
    """c = 1 and the maximizer drifts right; v = 0.525 + 0.05 x away from the truncation layer.

    f is linear on [-8, 8] and constant beyond, so it stays bounded on R.
    """
    return load_problem(preset_path("whole_space_1d"))


@pytest.fixture(scope="session")
def ball_problem():
    return load_problem(preset_path("ball_2d"))
