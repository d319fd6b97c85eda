import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import preset_path
from games.base import CalibrationError, ConfigurationError, OutsideDomainError
from games.operators import Grid
from games.simulator import MarkovPolicy, McConfig
from games.solver import solve_isaacs
from games.surface import (
    EQUATOR_BOUND,
    FIBER,
    InvarianceReport,
    LiftedGame,
    LiftedState,
    calibrate_equator_band,
    check_reduction,
    coupled_supermartingale_check,
    equator_exit_moment,
    equator_start,
    fiber_invariance,
    gamma_invariance_study,
    lift_point,
    lifted_dynamics,
    simulate_surface,
)
from src.config import load_problem


@pytest.fixture(scope="module")
def linear_game(linear_problem):
    return LiftedGame(linear_problem)


@pytest.fixture(scope="module")
def linear_band(linear_game):
    return calibrate_equator_band(linear_game)


@pytest.fixture(scope="module")
def linear_field(linear_problem):
    return solve_isaacs(linear_problem, Grid.build(linear_problem, 2.0**-4)).field


def test_lift_lands_on_the_surface(linear_problem):
    barrier = linear_problem.barrier
    state = lift_point(np.array([0.3]), barrier, fiber_axis=2)
    assert state.y[2] == pytest.approx(math.sqrt(barrier.psi(np.array([0.3]))[0]))
    assert np.count_nonzero(state.y) == 1
    assert state.surface_gap(barrier) == pytest.approx(0.0, abs=1e-12)
    assert state.z.shape == (1 + FIBER,)


def test_lift_refuses_points_outside(linear_problem):
    with pytest.raises(OutsideDomainError):
        lift_point(np.array([2.0]), linear_problem.barrier)
    with pytest.raises(ConfigurationError):
        LiftedState(np.zeros(1), np.zeros(3))


def test_whole_space_problems_cannot_be_lifted(whole_space_problem):
    with pytest.raises(ConfigurationError):
        LiftedGame(whole_space_problem)


def test_lifted_discount_is_floored(linear_game, linear_problem):
    x = np.linspace(-0.99, 0.99, 41)[:, None]
    assert np.all(linear_game.c_bar(0, 0, x) >= 0.5)
    # c_hat(0) = -tr(a D^2 Psi) = kappa for a = 1/2, Psi = kappa (e - e^{x^2})
    assert linear_game.c_hat(0, 0, np.array([0.0]))[0] == pytest.approx(linear_problem.barrier.kappa)


def test_off_surface_start_is_rejected(linear_game):
    state = LiftedState(np.array([0.0]), np.full(FIBER, 0.1))
    with pytest.raises(ConfigurationError):
        linear_game.check_on_surface(state)


@settings(max_examples=40, deadline=None)
@given(
    x=hnp.arrays(np.float64, (2,), elements=st.floats(-0.6, 0.6)),
    y=hnp.arrays(np.float64, (FIBER,), elements=st.floats(-1, 1)),
    pair=st.tuples(st.integers(0, 1), st.integers(0, 1)),
)
def test_generator_of_the_surface_gap_vanishes(ball_problem, x, y, pair):
    barrier = ball_problem.barrier
    points, fiber = x[None], y[None]
    values = ball_problem.coefficients.evaluate(*pair, points)
    drift, diffusion, _ = lifted_dynamics(barrier, values, points, fiber)
    d = 2
    grad, hess = barrier.grad_psi(points)[0], barrier.hess_psi(points)[0]
    first_order = grad @ drift[0, :d] - 2.0 * fiber[0] @ drift[0, d:]
    second_order = 0.0
    for k in range(FIBER):
        gx, gy = diffusion[0, :d, k, :], diffusion[0, d:, k, :]
        second_order += 0.5 * np.trace(hess @ gx @ gx.T) - np.sum(gy**2)
    scale = 1.0 + np.abs(drift).max() + np.abs(diffusion).max() ** 2
    assert first_order + second_order == pytest.approx(0.0, abs=1e-9 * scale)


def test_projected_path_stays_on_the_surface(linear_game, linear_problem):
    z0 = lift_point(np.array([0.0]), linear_problem.barrier)
    path = simulate_surface(linear_game, z0, MarkovPolicy.constant(), dt=1e-3, horizon=0.1, seed=6)
    assert path.steps == 100
    assert path.final_gap == pytest.approx(0.0, abs=1e-12)
    assert path.phi >= 0.5 * 0.1 - 1e-12


def test_equator_band_calibration(linear_game, linear_band, linear_problem):
    assert linear_band.margin >= 0.0
    assert 2.0 * linear_band.epsilon < linear_problem.barrier.sup_psi
    assert linear_band.N0 >= 0.5
    with pytest.raises(CalibrationError):
        calibrate_equator_band(linear_game, initial=1e-13)


def test_equator_exit_moment_is_below_the_bound(linear_game, linear_band):
    z0 = equator_start(linear_game, linear_band)
    config = McConfig(n_paths=500, dt=1e-3, seed=1)
    report = equator_exit_moment(linear_game, z0, [MarkovPolicy.constant()], config, band=linear_band)
    assert report.passed, report.to_dict()
    assert report.moments[0].estimate.mean <= EQUATOR_BOUND


def test_equator_exit_moment_needs_a_band(linear_game, linear_problem):
    z0 = lift_point(np.array([0.9]), linear_problem.barrier)
    with pytest.raises(ConfigurationError):
        equator_exit_moment(linear_game, z0, [MarkovPolicy.constant()], McConfig())


def test_reduction_requires_zero_boundary_data():
    problem = load_problem(preset_path("discounted_1d"))
    field = solve_isaacs(problem, Grid.build(problem, 0.125)).field
    with pytest.raises(ConfigurationError):
        check_reduction(LiftedGame(problem), [[0.0]], field, MarkovPolicy.constant(), McConfig())


def test_reduction_skips_points_near_the_boundary(linear_game, linear_field):
    report = check_reduction(linear_game, [[0.99]], linear_field, MarkovPolicy.constant(), McConfig())
    assert report.rows[0].skipped
    assert report.tested == 0
    assert report.passed


@pytest.mark.slow
def test_surface_value_reproduces_the_exit_time(linear_game, linear_field):
    config = McConfig(n_paths=2000, dt=1e-3, seed=3)
    report = check_reduction(linear_game, [[0.0]], linear_field, MarkovPolicy.constant(), config)
    row = report.rows[0]
    assert report.passed, report.to_dict()
    assert row.vbar_mean * row.psi == pytest.approx(1.0, abs=0.1)


@pytest.mark.slow
def test_surface_value_ignores_the_fiber_direction(linear_game):
    report = fiber_invariance(
        linear_game, np.array([0.2]), MarkovPolicy.constant(), McConfig(n_paths=500, dt=2e-3, seed=9)
    )
    assert report.passed, report.to_dict()


@pytest.mark.slow
def test_coupled_paths_give_a_supermartingale(linear_game, linear_band, linear_problem):
    barrier = linear_problem.barrier
    report = coupled_supermartingale_check(
        linear_game,
        lift_point(np.array([0.0]), barrier),
        lift_point(np.array([0.05]), barrier),
        MarkovPolicy.constant(),
        linear_band.N0,
        McConfig(n_paths=300, dt=1e-3, seed=12),
        checkpoints=(0.1, 0.2),
    )
    assert report.passed, report.to_dict()
    assert report.checkpoints == (0.0, 0.1, 0.2)
    assert report.distance > 0


@pytest.mark.slow
def test_surface_drift_shrinks_with_the_step(linear_game, linear_problem):
    z0 = lift_point(np.array([0.0]), linear_problem.barrier)
    report = gamma_invariance_study(
        linear_game,
        z0,
        MarkovPolicy.constant(),
        McConfig(n_paths=500, seed=5),
        dts=(1e-2, 5e-3, 2.5e-3),
        horizon=0.5,
    )
    assert report.strong[-1] < report.strong[0]
    assert len(report.weak) == 3
    assert 0.0 <= report.breach_fraction <= 1.0
    assert report.passed, report.to_dict()


def _invariance_report(strong):
    dts = (1e-2, 5e-3, 2.5e-3)
    zeros = (0.0,) * len(dts)
    return InvarianceReport(dts, tuple(strong), zeros, (0.2, 0.1, 0.05), zeros, 0.5, 1.0)


def test_invariance_gate_follows_the_strong_half_order():
    assert _invariance_report((0.1, 0.07, 0.049)).passed
    assert not _invariance_report((0.1, 0.045, 0.02)).passed
    assert not _invariance_report((0.1, 0.098, 0.096)).passed
    assert not _invariance_report((0.0, 0.0, 0.0)).passed
    summary = _invariance_report((0.1, 0.07, 0.049)).to_dict()
    assert summary["expected_order"] == 0.5
    assert summary["expected_ratios"] == pytest.approx([math.sqrt(0.5)] * 2)


def test_equator_exit_moment_rejects_starts_above_the_band(linear_game, linear_band, linear_problem):
    point = linear_problem.barrier.level_set_points(1.5 * linear_band.epsilon, 2)[0]
    z0 = lift_point(point, linear_problem.barrier)
    with pytest.raises(ConfigurationError):
        equator_exit_moment(linear_game, z0, [MarkovPolicy.constant()], McConfig(), band=linear_band)
