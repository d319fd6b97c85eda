import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import skewed_problem
from games.base import ConfigurationError, DiscretizationError, ExtrapolationError
from games.model import A2Family, PucciSpec, extend_problem
from games.operators import (
    Grid,
    ScalarField,
    extended_hamiltonian,
    isaacs_H,
    isaacs_field,
    monotonicity_report,
    pucci_P,
    pucci_extremal,
    pucci_field,
    sampled_pucci_field,
    second_order_weights,
    stencil_offsets,
)

H = 2.0**-4


@pytest.fixture(scope="module")
def linear_grid(linear_problem):
    return Grid.build(linear_problem, H)


@pytest.mark.parametrize("dimension", [1, 2, 3])
def test_stencil_has_two_d_squared_offsets(dimension):
    offsets = stencil_offsets(dimension)
    assert offsets.shape == (2 * dimension**2, dimension)
    assert len({tuple(o) for o in offsets}) == offsets.shape[0]
    assert np.array_equal(offsets[0::2], -offsets[1::2])


@given(
    hnp.arrays(np.float64, (2, 2), elements=st.floats(-2, 2)),
    hnp.arrays(np.float64, (2, 2), elements=st.floats(-2, 2)),
    hnp.arrays(np.float64, (2,), elements=st.floats(-1, 1)),
)
def test_second_differences_are_exact_on_quadratics(a, q, x):
    a = 0.5 * (a + a.T)
    q = 0.5 * (q + q.T)
    h = 0.1
    offsets = stencil_offsets(2)

    def u(points):
        return 0.5 * np.einsum("ni,ij,nj->n", points, q, points)

    diffs = u(x + h * offsets) - u(x[None])
    weights = second_order_weights(a[None], h)[0]
    assert weights @ diffs == pytest.approx(np.trace(a @ q), abs=1e-9)


@given(hnp.arrays(np.float64, (3,), elements=st.floats(-5, 5)), st.floats(0.1, 0.9))
def test_pucci_extremal_dominates_the_trace(eigenvalues, delta_hat):
    value = pucci_extremal(eigenvalues, delta_hat)
    assert value >= eigenvalues.sum() - 1e-9
    assert value == pytest.approx(pucci_extremal(np.sort(eigenvalues)[::-1], delta_hat))


def test_grid_classifies_linear_domain(linear_grid):
    assert linear_grid.n_interior == 31
    assert np.all(np.abs(linear_grid.interior_points) < 1.0)
    assert linear_grid.classify(int(linear_grid.node_at(np.array([1.0]))[0])) == "band"
    assert linear_grid.classify(int(linear_grid.node_at(np.array([0.0]))[0])) == "interior"


def test_closed_form_solution_has_zero_hamiltonian(linear_problem, linear_grid):
    field = ScalarField.from_function(linear_grid, lambda x: 1.0 - x[:, 0] ** 2)
    assert np.max(np.abs(isaacs_field(linear_problem, field))) <= 1e-10
    node = int(linear_grid.node_at(np.array([0.5]))[0])
    value = isaacs_H(linear_problem, field, node)
    assert value.value == pytest.approx(0.0, abs=1e-10)
    assert (value.alpha, value.beta) == (0, 0)


def test_hamiltonian_of_constant_is_minus_c_times_constant():
    problem = skewed_problem()
    grid = Grid.build(problem, 0.25)
    field = ScalarField(grid, np.full(grid.n_nodes, 3.0))
    assert np.allclose(isaacs_field(problem, field), 1.0 - 3.0)


def test_hamiltonian_rejects_band_nodes(linear_problem, linear_grid):
    field = ScalarField(linear_grid, np.zeros(linear_grid.n_nodes))
    band = int(linear_grid.band[0])
    with pytest.raises(DiscretizationError) as error:
        isaacs_H(linear_problem, field, band)
    assert error.value.node == band


def test_pucci_of_parabola_at_the_origin(linear_grid):
    delta_hat = 0.5
    field = ScalarField.from_function(linear_grid, lambda x: x[:, 0] ** 2)
    node = int(linear_grid.node_at(np.array([0.0]))[0])
    # the upwind first difference of x^2 at the origin is h, so P_h = (2 + h) / delta_hat
    expected = (2.0 + H) / delta_hat
    value = pucci_P(field, node, delta_hat)
    assert value == pytest.approx(expected)
    assert value == pytest.approx(4.0, abs=H / delta_hat + 1e-12)
    position = int(linear_grid.position[node])
    assert pucci_field(field, delta_hat)[position] == pytest.approx(expected)


def test_presets_are_monotone(linear_problem, ball_problem, linear_grid):
    assert monotonicity_report(linear_problem, linear_grid).monotone
    assert monotonicity_report(ball_problem, Grid.build(ball_problem, 0.125)).monotone


def test_non_dominant_diffusion_is_flagged():
    problem = skewed_problem()
    report = monotonicity_report(problem, Grid.build(problem, 0.25))
    assert not report.monotone
    assert report.worst_weight < 0
    assert report.node is not None


def test_penalized_family_joins_the_monotonicity_scan(ball_problem):
    grid = Grid.build(ball_problem, 0.125)
    sampled = A2Family.from_spec(2, PucciSpec(0.3, rotations=8))
    assert second_order_weights(sampled.matrices, grid.h).min() >= 0.0
    assert monotonicity_report(ball_problem, grid, sampled).monotone

    # diag(1/0.3, 0.3) rotated by pi/8 is not diagonally dominant
    c, s = np.cos(np.pi / 8), np.sin(np.pi / 8)
    rotation = np.array([[c, -s], [s, c]])
    skewed = rotation @ np.diag([1 / 0.3, 0.3]) @ rotation.T
    family = A2Family(np.vstack([sampled.matrices, skewed[None]]), sampled.drifts, 0.3)
    report = monotonicity_report(ball_problem, grid, family)
    assert not report.monotone
    assert report.worst_weight < 0
    n_alpha = len(ball_problem.coefficients.alpha)
    assert report.alpha >= n_alpha
    assert divmod(report.alpha - n_alpha, len(family.drifts))[0] == len(sampled.matrices)


def test_field_interpolation_refuses_to_extrapolate(linear_grid):
    field = ScalarField.from_function(linear_grid, lambda x: 1.0 - x[:, 0] ** 2)
    assert field.interpolate(np.array([[0.25]]))[0] == pytest.approx(1.0 - 0.0625, abs=H**2)
    with pytest.raises(ExtrapolationError):
        field.interpolate(np.array([[5.0]]))


def test_field_must_be_finite(linear_grid):
    values = np.zeros(linear_grid.n_nodes)
    values[0] = np.nan
    with pytest.raises(ConfigurationError):
        ScalarField(linear_grid, values)


@settings(max_examples=10, deadline=None)
@given(h=st.sampled_from([2.0**-3, 2.0**-4, 2.0**-5]))
def test_every_interior_stencil_stays_on_the_grid(linear_problem, h):
    grid = Grid.build(linear_problem, h)
    assert grid.neighbors.shape == (grid.n_interior, 2)
    assert np.all(grid.neighbors >= 0) and np.all(grid.neighbors < grid.n_nodes)


@pytest.fixture(scope="module")
def ball_grid(ball_problem):
    return Grid.build(ball_problem, 0.25)


def _random_field(grid, values):
    return ScalarField(grid, np.resize(values, grid.n_nodes))


@settings(max_examples=20, deadline=None)
@given(values=hnp.arrays(np.float64, (17,), elements=st.floats(-1, 1)))
def test_assembled_hamiltonian_matches_enumeration(ball_problem, ball_grid, values):
    field = _random_field(ball_grid, values)
    assembled = isaacs_field(ball_problem, field)
    for position, node in enumerate(ball_grid.interior):
        assert assembled[position] == pytest.approx(isaacs_H(ball_problem, field, int(node)).value, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(
    first=hnp.arrays(np.float64, (13,), elements=st.floats(-1, 1)),
    second=hnp.arrays(np.float64, (11,), elements=st.floats(-1, 1)),
)
def test_pucci_is_convex_in_the_field(ball_grid, first, second):
    u, w = _random_field(ball_grid, first), _random_field(ball_grid, second)
    middle = (u + w) * 0.5
    assert np.all(
        pucci_field(middle, 0.5) <= 0.5 * (pucci_field(u, 0.5) + pucci_field(w, 0.5)) + 1e-9
    )


@settings(max_examples=30, deadline=None)
@given(
    q=hnp.arrays(np.float64, (2, 2), elements=st.floats(-3, 3)),
    p=hnp.arrays(np.float64, (2,), elements=st.floats(-1, 1)),
)
def test_sampled_family_never_exceeds_the_exact_operator(ball_grid, q, p):
    q = 0.5 * (q + q.T)
    field = ScalarField.from_function(
        ball_grid, lambda x: 0.5 * np.einsum("ni,ij,nj->n", x, q, x) + x @ p
    )
    family = A2Family.from_spec(2, PucciSpec(0.5, rotations=8))
    exact = pucci_field(field, 0.5)
    assert np.all(sampled_pucci_field(field, family) <= exact + 1e-9 * (1.0 + np.abs(exact)))


def test_extended_hamiltonian_dominates_and_then_coincides(linear_problem, linear_grid):
    field = ScalarField.from_function(linear_grid, lambda x: x[:, 0] ** 2)
    node = int(linear_grid.node_at(np.array([0.0]))[0])
    base = isaacs_H(linear_problem, field, node)
    low = extended_hamiltonian(extend_problem(linear_problem, PucciSpec(0.5), K=0.0), field, node)
    assert low.value >= base.value
    assert low.alpha >= len(linear_problem.coefficients.alpha)
    high = extended_hamiltonian(extend_problem(linear_problem, PucciSpec(0.5), K=100.0), field, node)
    assert high == base
