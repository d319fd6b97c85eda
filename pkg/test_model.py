import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import preset_path
from games.barrier import barrier_mu_rule, verification_points, verify_barrier
from games.base import ConfigurationError, ControlSet
from games.model import (
    A2Family,
    PucciSpec,
    diagonally_dominant,
    diffusion_from_sigma,
    extend_problem,
    reduce_boundary_to_zero,
    validate_assumptions,
)
from games.operators import Grid
from games.solver import solve_isaacs
from src.config import ProblemFile, build_problem, load_problem

PRESET_NAMES = [
    "linear_1d",
    "two_control_1d",
    "drift_game_1d",
    "discounted_1d",
    "ball_2d",
    "ellipse_2d",
    "whole_space_1d",
    "trig_1d",
]


@pytest.mark.parametrize("name", PRESET_NAMES)
def test_presets_satisfy_their_declared_constants(name):
    report = validate_assumptions(load_problem(preset_path(name)))
    assert report.passed, [check.name for check in report.failures()]


def test_validation_names_the_violated_ellipticity(linear_problem):
    tight = replace(linear_problem.coefficients, delta=0.6)
    report = validate_assumptions(replace(linear_problem, coefficients=tight))
    assert not report.passed
    assert [check.name for check in report.failures()] == ["ellipticity:lower"]
    assert report.get("ellipticity:lower").value == pytest.approx(0.5)


def test_whole_space_validation_checks_delta1(whole_space_problem):
    report = validate_assumptions(whole_space_problem)
    assert report.get("discount:delta1").passed
    with pytest.raises(KeyError):
        report.get("barrier:supersolution")


def test_whole_space_coefficients_stay_bounded_far_out(whole_space_problem):
    report = validate_assumptions(whole_space_problem)
    assert report.get("bound:far_field").passed
    far = np.array([[-1e3], [1e3]])
    assert whole_space_problem.coefficients.sup_abs_f(far) <= whole_space_problem.coefficients.K0


def test_unbounded_running_cost_fails_the_far_field_check():
    problem_file = ProblemFile.model_validate(
        {
            "name": "unbounded",
            "dimension": 1,
            "control_sets": {"alpha": ["a0"], "beta": ["b0"]},
            "coefficients": {
                "preset": "affine",
                "default": {"sigma": 1.0, "c0": 1.0, "f0": 0.5, "f1": [0.05]},
            },
            "domain": {"kind": "whole_space", "half_width": 6.0},
            "constants": {"K0": 1.0, "delta": 0.5, "delta1": 1.0},
        }
    )
    report = validate_assumptions(build_problem(problem_file))
    assert [check.name for check in report.failures()] == ["bound:far_field"]
    assert report.get("bound:far_field").value > 10.0


def test_control_set_rejects_duplicates_and_unknown_labels():
    with pytest.raises(ConfigurationError):
        ControlSet(("a", "a"))
    with pytest.raises(ConfigurationError):
        ControlSet(())
    assert ControlSet(("a", "b")).index("b") == 1
    with pytest.raises(ConfigurationError):
        ControlSet(("a",)).index("z")


@given(hnp.arrays(np.float64, (3, 2, 4), elements=st.floats(-3, 3)))
def test_diffusion_is_symmetric_positive_semidefinite(sigma):
    a = diffusion_from_sigma(sigma)
    assert np.allclose(a, np.swapaxes(a, 1, 2))
    assert np.all(np.linalg.eigvalsh(a) >= -1e-9)


def test_diffusion_needs_enough_noise_columns():
    with pytest.raises(ConfigurationError):
        diffusion_from_sigma(np.ones((2, 1)))


# barrier


def test_linear_barrier_matches_closed_form(linear_problem):
    barrier = linear_problem.barrier
    assert barrier.mu == 1.0
    assert barrier.kappa == pytest.approx(1.0, rel=1e-6)
    assert barrier.sup_psi == pytest.approx(math.e - 1.0, rel=1e-6)
    assert barrier.psi(np.array([[1.0], [-1.0]])) == pytest.approx([0.0, 0.0], abs=1e-12)


def test_barrier_is_a_strict_supersolution(ball_problem):
    barrier = ball_problem.barrier
    points = verification_points(barrier.shape, barrier.level)
    assert verify_barrier(barrier, ball_problem.coefficients, points) <= 1e-9
    boundary = barrier.level_set_points(0.0, 32)
    assert np.all(np.linalg.norm(barrier.grad_psi(boundary), axis=1) >= 1.0 - 1e-9)


@given(fraction=st.floats(0.1, 0.9))
@settings(max_examples=25, deadline=None)
def test_level_set_points_lie_on_their_level(linear_problem, fraction):
    barrier = linear_problem.barrier
    level = fraction * barrier.sup_psi
    points = barrier.level_set_points(level, 4)
    assert np.allclose(barrier.psi(points), level, atol=1e-9)


def test_barrier_mu_rule_is_a_power_of_two():
    mu = barrier_mu_rule(1.0, 0.5)
    assert mu == 16.0
    assert barrier_mu_rule(0.1, 0.9) == 1.0


def test_level_above_sup_is_rejected(linear_problem):
    with pytest.raises(ConfigurationError):
        linear_problem.barrier.level_set_points(2 * linear_problem.barrier.sup_psi, 2)


# extended controls


def test_penalized_family_spans_the_ellipticity_window():
    family = A2Family.from_spec(2, PucciSpec(0.5, rotations=4))
    spectra = np.linalg.eigvalsh(family.matrices)
    assert spectra.min() == pytest.approx(0.5)
    assert spectra.max() == pytest.approx(2.0)
    assert np.allclose(np.linalg.norm(family.drifts[1:], axis=1), 2.0)
    assert family.size == len(family.labels)


def test_wide_window_keeps_every_rotation():
    family = A2Family.from_spec(2, PucciSpec(0.5, rotations=8))
    # four diagonal matrices and seven rotations of diag(2, 1/2)
    assert len(family.matrices) == 11
    assert all(diagonally_dominant(a) for a in family.matrices)


def test_narrow_window_drops_rotations_that_break_the_stencil():
    delta_hat = 0.3
    family = A2Family.from_spec(2, PucciSpec(delta_hat, rotations=8))
    assert all(diagonally_dominant(a) for a in family.matrices)
    off = family.matrices[:, 0, 1]
    # rotations by pi/4 and 3pi/4 survive
    assert off.max() == pytest.approx(0.5 * (1 / delta_hat - delta_hat))
    assert off.min() == pytest.approx(-0.5 * (1 / delta_hat - delta_hat))
    # diagonals plus the rotations by pi/4, pi/2 and 3pi/4
    assert len(family.matrices) == 7
    spectra = np.linalg.eigvalsh(family.matrices)
    assert spectra.min() == pytest.approx(delta_hat)
    assert spectra.max() == pytest.approx(1 / delta_hat)


@pytest.mark.parametrize("noise_dimension", [2, 3])
def test_vertex_volatility_reproduces_its_matrix(noise_dimension):
    family = A2Family.from_spec(2, PucciSpec(0.5, rotations=4))
    for index in range(0, family.size, len(family.drifts)):
        sigma = family.vertex_sigma(index, noise_dimension)
        assert sigma.shape == (2, noise_dimension)
        assert np.allclose(diffusion_from_sigma(sigma), family.vertex(index)[0])
    with pytest.raises(ConfigurationError):
        family.vertex_sigma(0, 1)


def test_extended_problem_costs(two_control_problem):
    ext = extend_problem(two_control_problem, PucciSpec(0.5), K=4.0)
    x = np.array([[0.0], [0.5]])
    assert np.allclose(ext.running_cost(0, 0, x), 1.0)
    assert np.allclose(ext.running_cost(len(ext.base.coefficients.alpha), 0, x), -4.0)
    assert ext.labels[:2] == ("plus", "minus")
    with pytest.raises(ConfigurationError):
        extend_problem(two_control_problem, PucciSpec(0.5), K=-1.0)


def test_pucci_window_must_be_proper():
    with pytest.raises(ConfigurationError):
        PucciSpec(1.0)


def test_zero_boundary_reduction_shifts_the_value():
    problem = load_problem(preset_path("discounted_1d"))
    reduced = reduce_boundary_to_zero(problem)
    assert reduced.coefficients.terminal.is_zero
    grid = Grid.build(problem, 2.0**-4)
    original = solve_isaacs(problem, grid).field.interior_values
    shifted = solve_isaacs(reduced, grid).field.interior_values
    assert np.max(np.abs(shifted - (original - 0.25))) <= 1e-6
