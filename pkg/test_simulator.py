import json
import math
from dataclasses import replace

import numpy as np
import pytest

from conftest import preset_path
from games.base import ConfigurationError
from games.model import PucciSpec, extend_problem
from games.noise import NoiseStream, block_sizes
from games.operators import Grid, ScalarField
from games.simulator import (
    Box,
    McConfig,
    MarkovPolicy,
    check_dpp,
    coupling_constant,
    epsilon_sweep,
    estimate_payoff,
    exponential_weight,
    saddle_check,
    simulate_batch,
    simulate_path,
)
from games.solver import solve_isaacs, solve_regularized
from src.config import ProblemFile, build_problem

RIGHT, LOW = 1, 0


@pytest.fixture(scope="module")
def whole_space_field(whole_space_problem):
    grid = Grid.build(whole_space_problem, 0.25)
    return solve_isaacs(whole_space_problem, grid).field


def test_noise_stream_is_keyed_by_seed_and_block():
    stream = NoiseStream(seed=7, block=3, n_paths=5, width=2)
    assert np.array_equal(stream.normals(4), stream.normals(4))
    assert not np.array_equal(stream.normals(4), stream.normals(5))
    assert not np.array_equal(stream.normals(4), NoiseStream(7, 4, 5, 2).normals(4))
    assert stream.increments(0, 0.04) == pytest.approx(0.2 * stream.normals(0))
    with pytest.raises(ConfigurationError):
        NoiseStream(seed=-1, block=0, n_paths=1, width=1)


def test_block_sizes_keep_the_remainder_last():
    assert block_sizes(10, 4) == [4, 4, 2]
    assert block_sizes(8, 4) == [4, 4]
    with pytest.raises(ConfigurationError):
        block_sizes(0, 4)


def test_exponential_weight():
    assert exponential_weight(np.array([0.0]), 0.1)[0] == pytest.approx(0.1)
    assert exponential_weight(np.array([1.0]), 1.0)[0] == pytest.approx(1.0 - math.exp(-1.0))


def test_mc_config_validation():
    with pytest.raises(ConfigurationError):
        McConfig(n_paths=1)
    with pytest.raises(ConfigurationError):
        McConfig(dt=0.0)
    with pytest.raises(ConfigurationError):
        McConfig(truncation=1.0)
    with pytest.raises(ConfigurationError):
        McConfig(epsilon=-0.1)


def test_overrides_apply_inside_their_box():
    policy = MarkovPolicy.constant(0, 0).with_override(Box.around([0.0], 0.5), alpha=1)
    x = np.array([[0.0], [0.9]])
    assert policy.alpha(x).tolist() == [1, 0]
    assert policy.beta(x, policy.alpha(x)).tolist() == [0, 0]


def test_exit_time_of_brownian_motion(linear_problem):
    config = McConfig(n_paths=2000, dt=1e-3, seed=11)
    estimate = estimate_payoff(linear_problem, MarkovPolicy.constant(), np.array([0.0]), config)
    assert estimate.usable
    assert estimate.censored_count == 0
    assert abs(estimate.mean - 1.0) <= 3 * estimate.stderr + 2 * math.sqrt(config.dt)


def test_thread_count_does_not_change_results(linear_problem):
    base = McConfig(n_paths=1000, dt=2e-3, seed=5, block_size=256)
    one = simulate_batch(linear_problem, MarkovPolicy.constant(), np.array([0.3]), base)
    three = simulate_batch(
        linear_problem, MarkovPolicy.constant(), np.array([0.3]), replace(base, threads=3)
    )
    assert np.array_equal(one.payoff, three.payoff)
    assert np.array_equal(one.tau, three.tau)


def test_single_path_is_reproducible(linear_problem):
    first = simulate_path(linear_problem, MarkovPolicy.constant(), np.array([0.2]), 1e-3, seed=3, path=9)
    second = simulate_path(linear_problem, MarkovPolicy.constant(), np.array([0.2]), 1e-3, seed=3, path=9)
    assert (first.payoff, first.tau) == (second.payoff, second.tau)
    assert np.array_equal(first.exit_state, second.exit_state)
    assert first.tau > 0
    assert not first.censored


def test_path_started_outside_exits_immediately(linear_problem):
    outcome = simulate_path(linear_problem, MarkovPolicy.constant(), np.array([2.0]), 1e-3)
    assert outcome.tau == 0.0
    assert outcome.payoff == 0.0
    assert outcome.exit_state.tolist() == [2.0]


def test_saddle_policies_survive_unilateral_deviations(two_control_problem):
    grid = Grid.build(two_control_problem, 2.0**-4)
    policies = solve_isaacs(two_control_problem, grid).policies()
    config = McConfig(n_paths=1000, dt=2e-3, seed=2)
    report = saddle_check(two_control_problem, policies, None, np.array([0.0]), config)
    assert len(report.results) == 4
    assert report.passed, report.to_dict()


def test_dpp_holds_on_the_whole_space_preset(whole_space_problem, whole_space_field):
    config = McConfig(n_paths=2000, dt=0.01, seed=4, allowance=0.05)
    policies = MarkovPolicy.constant(RIGHT, LOW)
    for lambda0 in (0.0, 1.0):
        report = check_dpp(
            whole_space_problem, whole_space_field, 0.5, lambda0, np.array([0.0]), policies, config
        )
        assert report.passed, report.to_dict()
        assert report.v_x0 == pytest.approx(0.525, abs=0.01)


def test_dpp_with_zero_horizon_is_exact(whole_space_problem, whole_space_field):
    report = check_dpp(
        whole_space_problem,
        whole_space_field,
        0.0,
        0.0,
        np.array([0.0]),
        MarkovPolicy.constant(),
        McConfig(n_paths=10, dt=0.01),
    )
    assert report.discrepancy == 0.0
    assert report.passed


def test_dpp_refuses_bounded_domains(linear_problem):
    grid = Grid.build(linear_problem, 0.25)
    field = ScalarField(grid, np.zeros(grid.n_nodes))
    with pytest.raises(ConfigurationError):
        check_dpp(linear_problem, field, 0.5, 0.0, np.array([0.0]), MarkovPolicy.constant(), McConfig())


def test_epsilon_sweep_reports_consecutive_gaps(linear_problem):
    sweep = epsilon_sweep(
        linear_problem,
        MarkovPolicy.constant(),
        np.array([0.0]),
        (0.2, 0.1, 0.0),
        McConfig(n_paths=500, dt=2e-3, seed=8),
    )
    assert sweep.epsilons == (0.2, 0.1, 0.0)
    assert len(sweep.gaps) == 2
    assert [estimate.epsilon for estimate in sweep.estimates] == [0.2, 0.1, 0.0]
    assert set(sweep.to_dict()) >= {"gaps", "gaps_shrinking", "passed"}


def test_constant_coefficients_couple_with_unit_constant(whole_space_problem):
    report = coupling_constant(
        whole_space_problem,
        MarkovPolicy.constant(RIGHT, LOW),
        np.array([0.0]),
        [[0.1], [0.2]],
        McConfig(n_paths=100, dt=0.05),
        horizon=0.5,
    )
    assert report.constant == pytest.approx(1.0, abs=1e-9)
    assert report.stable
    with pytest.raises(ConfigurationError):
        coupling_constant(whole_space_problem, MarkovPolicy.constant(), np.array([0.0]), [[0.0]])


BALL_POINTS = [[0.0, 0.0], [0.5, 0.0], [0.0, -0.5], [0.3, 0.4], [-0.6, -0.2]]


def _driftless_ball():
    raw = json.loads(preset_path("ball_2d").read_text(encoding="utf-8"))
    raw["coefficients"]["pairs"] = {}
    return build_problem(ProblemFile.model_validate(raw))


@pytest.mark.parametrize("x0", BALL_POINTS)
def test_exit_time_from_the_unit_disc(x0):
    problem = _driftless_ball()
    config = McConfig(n_paths=2000, dt=1e-3, seed=12)
    estimate = estimate_payoff(problem, MarkovPolicy.constant(), np.array(x0), config)
    exact = 0.5 * (1.0 - float(np.dot(x0, x0)))
    assert estimate.censored_count == 0
    assert abs(estimate.mean - exact) <= 3 * estimate.stderr + 2 * math.sqrt(config.dt)


@pytest.mark.parametrize("x0", BALL_POINTS)
def test_barrier_bounds_the_exit_time_on_the_ball(ball_problem, x0):
    config = McConfig(n_paths=1000, dt=1e-3, seed=13)
    estimate = estimate_payoff(ball_problem, MarkovPolicy.constant(0, 1), np.array(x0), config)
    psi = float(ball_problem.barrier.psi(np.array([x0]))[0])
    assert estimate.mean <= psi + 3 * estimate.stderr + 2 * math.sqrt(config.dt)


def test_doubling_the_horizon_stays_within_the_truncation_bias(whole_space_problem):
    policy = MarkovPolicy.constant(RIGHT, LOW)
    short = McConfig(n_paths=200, dt=0.01, seed=6, truncation=1e-3)
    long = replace(short, truncation=1e-6)
    first = simulate_batch(whole_space_problem, policy, np.array([0.0]), short)
    second = simulate_batch(whole_space_problem, policy, np.array([0.0]), long)
    assert first.truncated.all() and second.truncated.all()
    assert np.all(second.tau >= first.tau)
    extra = second.payoff - first.payoff
    assert np.all(extra >= -1e-12)
    assert np.all(extra <= first.bias + 1e-12)
    assert second.bias.max() < first.bias.min()
    estimates = [
        estimate_payoff(whole_space_problem, policy, np.array([0.0]), config)
        for config in (short, long)
    ]
    assert abs(estimates[1].mean - estimates[0].mean) <= estimates[0].bias_bound + 1e-12


def test_penalized_vertex_pays_minus_K_until_exit(linear_problem):
    K, delta_hat = 3.0, 0.5
    ext = extend_problem(linear_problem, PucciSpec(delta_hat), K=K)
    # vertex 0: the matrix delta_hat (unit volatility) with zero drift
    a, drift, rate = ext.a2.vertex(0)
    assert a[0, 0] == pytest.approx(0.5) and not drift.any() and rate == delta_hat
    policy = MarkovPolicy.constant(len(linear_problem.coefficients.alpha), 0)
    batch = simulate_batch(ext, policy, np.array([0.0]), McConfig(n_paths=500, dt=1e-3, seed=3))
    expected = -K * (1.0 - np.exp(-delta_hat * batch.tau)) / delta_hat
    assert np.allclose(batch.payoff, expected, rtol=1e-9, atol=1e-12)
    assert batch.tau.mean() == pytest.approx(1.0, abs=0.15)
    with pytest.raises(ConfigurationError):
        simulate_batch(linear_problem, policy, np.array([0.0]), McConfig(n_paths=10))


def test_regularized_saddle_policies_can_be_simulated(linear_problem):
    grid = Grid.build(linear_problem, 2.0**-4)
    reference = solve_isaacs(linear_problem, grid)
    result = solve_regularized(linear_problem, grid, 1.0, 0.5, initial=reference.field)
    assert np.any(result.alpha_star >= len(linear_problem.coefficients.alpha))
    ext = extend_problem(linear_problem, PucciSpec(0.5), K=1.0)
    config = McConfig(n_paths=1000, dt=1e-3, seed=9)
    estimate = estimate_payoff(ext, result.policies(), np.array([0.0]), config)
    assert estimate.censored_count == 0
    v_K = float(result.field.interpolate(np.array([[0.0]]))[0])
    assert abs(estimate.mean - v_K) <= 3 * estimate.stderr + 0.1
