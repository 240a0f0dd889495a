import math

import numpy as np
import pytest

from controlled_paths import constant_field, linear_scalar_field, sine_field, zero_field
from errors import DivergenceError, DomainError, NumericError
from rde_solver import (AprioriReport, RDEProblem, StepSpec, apriori_report, backward_jacobian, continuity_radius,
                        jacobian_flow, solution_pvar_triple, solution_radius, solve_backward_rde, solve_pure_rde,
                        solve_rde_with_drift, step_indices, taylor_increment, theta1_value)
from rough_tensor import PiecewiseLinearPath, dyadic_signature_table, lift_sample
from tfbm_sampler import DyadicGrid, restrict, sample_tfbm

Y0 = np.array([0.5, -0.5])
H = 0.3
LAM = 1.0


def _random_problem(seed, level, scales):
    """A level-`level` TFBM lift, a sine field picked by seed and a random start in [-1, 1]²."""
    table = lift_sample(sample_tfbm(DyadicGrid(level), H, LAM, 2, seed=seed), level)
    field_ = sine_field(2, 2, scales[seed % len(scales)])
    y_a = np.random.default_rng(seed).uniform(-1.0, 1.0, 2)
    return field_, table, y_a


def _driver_values(table, indices):
    return table.prefix1[indices] - table.prefix1[indices[0]]


def test_constant_field_is_exact(table_l6_d2):
    """dy = σ dx gives y_t = y_a + σ x_{a,t}."""
    sigma = np.array([[1.0, 0.5], [-0.3, 2.0]])
    sol = solve_pure_rde(constant_field(sigma), table_l6_d2, Y0)
    expected = Y0 + _driver_values(table_l6_d2, sol.indices) @ sigma.T
    assert sol.values.shape == (65, 2)
    assert np.allclose(sol.values, expected, rtol=0.0, atol=1e-12)
    assert sol.method == "pure"


def test_linear_scalar_matches_exponential(table_l6_d1):
    """dy = a y dx along a piecewise-linear driver is y_a exp(a x_{0,t})."""
    a = 0.5
    sol = solve_pure_rde(linear_scalar_field(a), table_l6_d1, [1.0], step=StepSpec(substeps=16))
    exact = np.exp(a * _driver_values(table_l6_d1, sol.indices)[:, 0])
    assert np.allclose(sol.values[:, 0], exact, rtol=1e-4, atol=0.0)


def test_taylor_increment_of_constant_field():
    sigma = np.array([[2.0, -1.0]])
    field_ = constant_field(sigma)
    x1 = np.array([0.3, 0.1])
    inc = taylor_increment(field_.g(np.zeros(1)), field_.dg(np.zeros(1)), field_.d2g(np.zeros(1)),
                           x1, np.ones((2, 2)), np.ones((2, 2, 2)))
    assert np.allclose(inc, sigma @ x1)


def test_zero_drift_matches_pure_solve_bitwise(table_l6_d2, small_sine):
    pure = solve_pure_rde(small_sine, table_l6_d2, Y0)
    problem = RDEProblem(small_sine, Y0, table_l6_d2, drift=lambda y: np.zeros_like(y))
    drifted = solve_rde_with_drift(problem, "direct")
    assert np.array_equal(pure.values, drifted.values)


def test_doss_sussmann_without_noise_is_rk4(table_l6_d1):
    """With g ≡ 0 and f(y) = -y the transformed scheme is RK4 on y' = -y."""
    problem = RDEProblem(zero_field(1, 1), [1.0], table_l6_d1, drift=lambda y: -y, drift_lipschitz=1.0)
    sol = solve_rde_with_drift(problem, "doss_sussmann")
    assert sol.method == "doss_sussmann"
    assert np.allclose(sol.values[:, 0], np.exp(-sol.times), rtol=0.0, atol=1e-8)


def test_direct_and_doss_sussmann_agree(table_l6_d2, small_sine):
    problem = RDEProblem(small_sine, Y0, table_l6_d2, drift=lambda y: 1.0 - y, drift_lipschitz=1.0)
    step = StepSpec(substeps=8)
    direct = solve_rde_with_drift(problem, "direct", step)
    transformed = solve_rde_with_drift(problem, "doss_sussmann", step)
    assert np.max(np.abs(direct.values - transformed.values)) <= 1e-2


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_drift_methods_converge_under_refinement(seed):
    """On the built-in problem the two drift treatments agree at level 8 and the gap at least halves by level 10."""
    sample = sample_tfbm(DyadicGrid(10), H, LAM, 2, seed=seed)
    field_ = sine_field(2, 2, 0.2)
    gaps = []
    for table in (lift_sample(restrict(sample, 8), 8), lift_sample(sample, 10)):
        problem = RDEProblem(field_, Y0, table, drift=lambda y: 1.0 - y, drift_lipschitz=1.0)
        direct = solve_rde_with_drift(problem, "direct")
        transformed = solve_rde_with_drift(problem, "doss_sussmann")
        gaps.append(np.max(np.abs(direct.values - transformed.values)))
    coarse, fine = gaps
    assert coarse <= 1e-2
    assert fine <= coarse / 2


def test_unknown_method_is_rejected(table_l6_d2, small_sine):
    with pytest.raises(DomainError):
        solve_rde_with_drift(RDEProblem(small_sine, Y0, table_l6_d2), "euler")


def test_jacobian_matches_finite_differences(table_l6_d2, small_sine):
    """∂y_T/∂y_a from the variational system agrees with central differences."""
    problem = RDEProblem(small_sine, Y0, table_l6_d2)
    flow = jacobian_flow(problem)
    assert np.array_equal(flow.jacobians[0], np.eye(2))
    eps = 1e-6
    for l in range(2):
        shift = np.zeros(2)
        shift[l] = eps
        plus = solve_pure_rde(small_sine, table_l6_d2, Y0 + shift).final
        minus = solve_pure_rde(small_sine, table_l6_d2, Y0 - shift).final
        column = (plus - minus) / (2 * eps)
        assert np.allclose(flow.jacobians[-1][:, l], column, rtol=1e-4, atol=1e-8)
    assert np.allclose(flow.values, solve_pure_rde(small_sine, table_l6_d2, Y0).values, atol=1e-12)


@pytest.mark.parametrize("seed", range(20))
def test_jacobian_matches_finite_differences_on_random_problems(seed):
    field_, table, y_a = _random_problem(seed, 6, (0.1, 0.2, 0.3))
    flow = jacobian_flow(RDEProblem(field_, y_a, table))
    eps = 1e-6
    for l in range(2):
        shift = np.zeros(2)
        shift[l] = eps
        column = (solve_pure_rde(field_, table, y_a + shift).final
                  - solve_pure_rde(field_, table, y_a - shift).final) / (2 * eps)
        assert np.allclose(flow.jacobians[-1][:, l], column, rtol=1e-4, atol=1e-8)


def test_jacobian_flow_rejects_drift(table_l6_d2, small_sine):
    problem = RDEProblem(small_sine, Y0, table_l6_d2, drift=lambda y: -y)
    with pytest.raises(DomainError):
        jacobian_flow(problem)


def test_backward_solve_inverts_forward(table_l6_d2, small_sine):
    """Solving backwards from y_T recovers y_a, and the Jacobians are inverse to each other."""
    step = StepSpec(substeps=32)
    forward = jacobian_flow(RDEProblem(small_sine, Y0, table_l6_d2), step=step)
    back = backward_jacobian(small_sine, table_l6_d2, forward.final, step=step)
    assert np.array_equal(back.jacobians[-1], np.eye(2))
    assert np.max(np.abs(back.values[0] - Y0)) <= 1e-6
    assert np.allclose(back.jacobians[0] @ forward.jacobians[-1], np.eye(2), atol=1e-5)


def test_backward_constant_field(table_l6_d2):
    """h_t = h_b - σ x_{t,b}."""
    sigma = np.array([[1.0, -1.0], [0.5, 0.25]])
    h_b = np.array([1.0, 2.0])
    sol = solve_backward_rde(constant_field(sigma), table_l6_d2, h_b, interval=(0.25, 1.0))
    assert np.array_equal(sol.values[-1], h_b)
    expected = h_b - sigma @ table_l6_d2.query(16, 64).level1
    assert np.allclose(sol.values[0], expected, atol=1e-12)
    assert sol.times[0] == 0.25


def test_divergence_cap(table_l6_d2):
    with pytest.raises(DivergenceError) as excinfo:
        solve_pure_rde(constant_field(np.full((2, 2), 1e3)), table_l6_d2, Y0, cap=10.0)
    assert excinfo.value.diagnostics["cap"] == 10.0
    assert "time" in excinfo.value.diagnostics
    assert isinstance(excinfo.value, NumericError)


def test_flow_property(table_l6_d2, small_sine):
    """Solving on [0, 1/2] and restarting on [1/2, 1] reproduces the one-shot solve."""
    whole = solve_pure_rde(small_sine, table_l6_d2, Y0)
    first = solve_pure_rde(small_sine, table_l6_d2, Y0, interval=(0.0, 0.5))
    second = solve_pure_rde(small_sine, table_l6_d2, first.final, interval=(0.5, 1.0))
    assert np.array_equal(first.final, whole.at(0.5))
    assert np.array_equal(second.final, whole.final)


def test_solution_lookup(table_l6_d2, small_sine):
    sol = solve_pure_rde(small_sine, table_l6_d2, Y0, step=StepSpec(level=3))
    assert sol.times.size == 9
    assert np.array_equal(sol.at(0.0), Y0)
    with pytest.raises(DomainError):
        sol.at(0.1)


def test_step_grid_options(table_l6_d2):
    uniform = step_indices(table_l6_d2, (0.0, 1.0), StepSpec(level=4))
    assert np.array_equal(uniform, np.arange(0, 65, 4))
    merged = step_indices(table_l6_d2, (0.0, 1.0), StepSpec(level=2, greedy_gamma=0.3))
    assert set(np.arange(0, 65, 16)) <= set(merged)
    assert merged[0] == 0 and merged[-1] == 64
    with pytest.raises(DomainError):
        step_indices(table_l6_d2, (0.0, 1.0 / 64), StepSpec(level=4))


def test_substeps_need_linear_steps(table_l6_d2, small_sine):
    with pytest.raises(DomainError):
        solve_pure_rde(small_sine, table_l6_d2, Y0, step=StepSpec(level=4, substeps=2))
    problem = RDEProblem(small_sine, Y0, table_l6_d2, drift=lambda y: -y)
    with pytest.raises(DomainError):
        solve_rde_with_drift(problem, "doss_sussmann", StepSpec(level=4))


@pytest.mark.parametrize("kwargs", [dict(substeps=0), dict(substeps=1.5), dict(greedy_gamma=-1.0)])
def test_step_spec_checks(kwargs):
    with pytest.raises(DomainError):
        StepSpec(**kwargs)


def test_problem_checks(table_l6_d2, small_sine):
    with pytest.raises(DomainError):
        RDEProblem(small_sine, [1.0, 2.0, 3.0], table_l6_d2)
    with pytest.raises(DomainError):
        RDEProblem(sine_field(2, 3), Y0, table_l6_d2)
    with pytest.raises(DomainError):
        RDEProblem(small_sine, Y0, table_l6_d2, interval=(0.5, 0.25))
    with pytest.raises(DomainError):
        RDEProblem(small_sine, Y0, table_l6_d2, drift_lipschitz=-1.0)
    assert RDEProblem(small_sine, Y0, table_l6_d2).interval == (0.0, 1.0)


def test_theta_helpers():
    assert solution_radius(0.5) is None
    assert solution_radius(0.25) == pytest.approx(1.0)
    assert continuity_radius(1.0 / 12.0) == pytest.approx(1.0)
    assert theta1_value(0.05, 1.0, 1.0, 3.5) == pytest.approx(0.22778125, rel=1e-12)


def test_apriori_report_for_a_still_driver():
    """A constant driver needs a single greedy step and adds nothing to the bounds."""
    path = PiecewiseLinearPath(np.linspace(0.0, 1.0, 17), np.zeros((17, 2)))
    table = dyadic_signature_table(path, 4)
    report = apriori_report(RDEProblem(sine_field(2, 2, 0.05), Y0, table))
    assert report.status == "ok"
    assert report.driver_norm == 0.0
    assert report.theta == report.theta1
    assert report.greedy_count == 1
    ratio = report.theta1 / (1.0 - report.theta1)
    assert report.sup_bound == pytest.approx(np.linalg.norm(Y0) + ratio)


def test_apriori_bounds_dominate_realized_solution(table_l6_d2):
    field_ = sine_field(2, 2, 0.05)
    problem = RDEProblem(field_, Y0, table_l6_d2)
    report = apriori_report(problem)
    assert report.status == "ok"
    assert report.radius == pytest.approx(1.0611, rel=1e-3)
    assert report.greedy_count <= report.count_bound
    assert report.continuity_count <= report.continuity_count_bound
    sol = solve_pure_rde(field_, table_l6_d2, Y0)
    assert np.max(np.linalg.norm(sol.values, axis=1)) <= report.sup_bound
    assert solution_pvar_triple(sol, field_, table_l6_d2) <= report.triple_bound
    assert report.contraction_factor == 2.0 ** report.continuity_count


@pytest.mark.parametrize("seed", range(100))
def test_apriori_bounds_on_random_problems(seed):
    """Realized sup and triple norms stay under the bounds; a perturbed start moves the path by at most 2^N̄ |δ|."""
    field_, table, y_a = _random_problem(seed, 6, (0.02, 0.035, 0.05))
    report = apriori_report(RDEProblem(field_, y_a, table))
    assert report.status == "ok"
    assert report.greedy_count <= report.count_bound
    assert report.continuity_count <= report.continuity_count_bound
    sol = solve_pure_rde(field_, table, y_a)
    assert np.max(np.linalg.norm(sol.values, axis=1)) <= report.sup_bound
    assert solution_pvar_triple(sol, field_, table) <= report.triple_bound

    direction = np.random.default_rng(1000 + seed).normal(size=2)
    delta = 1e-3 * direction / np.linalg.norm(direction)
    moved = solve_pure_rde(field_, table, y_a + delta)
    ratio = np.max(np.linalg.norm(moved.values - sol.values, axis=1)) / np.linalg.norm(delta)
    assert ratio <= report.contraction_factor


def test_apriori_report_vacuous(table_l6_d2, small_sine):
    """Large fields leave Θ₁ >= 1/2: the report says so instead of bounding."""
    report = apriori_report(RDEProblem(small_sine, Y0, table_l6_d2))
    assert report.status == "vacuous"
    assert report.theta1 > 0.5
    assert report.radius is None and report.sup_bound is None
    assert report.contraction_factor is None
    linear = apriori_report(RDEProblem(linear_scalar_field(), [1.0], dyadic_signature_table(
        PiecewiseLinearPath(np.linspace(0.0, 1.0, 5), np.linspace(0.0, 1.0, 5)[:, None]), 2)))
    assert linear.status == "vacuous" and math.isinf(linear.theta1)


def test_apriori_report_as_dict(table_l6_d2):
    report = apriori_report(RDEProblem(sine_field(2, 2, 0.05), Y0, table_l6_d2))
    out = report.as_dict()
    assert out["interval"] == [0.0, 1.0]
    assert isinstance(out["notes"], list)
    assert out["contraction_factor"] == report.contraction_factor
    assert set(AprioriReport.__dataclass_fields__) <= set(out)
