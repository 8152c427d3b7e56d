import math

import numpy as np
import pytest

from conftest import round_polygon
from fuzzympc.fuzzy import FuzzyObstacleField
from fuzzympc.planner import (
    CONVERGED,
    INFEASIBLE_FALLBACK,
    MAX_ITER,
    ControlInput,
    MPCPlanner,
    PlannerConfig,
    RobotState,
    build_problem,
    make_field,
    plan_cycle,
    reference_window,
    solve,
    step_dynamics,
    with_fuzzy,
    wrap_angle,
)
from fuzzympc.polygon import build_halfspaces, distance_to_polygon
from fuzzympc.preprocessing import InflationConfig, preprocess_all

STRAIGHT = [(0.0, 0.0), (20.0, 0.0)]


def empty_field(cfg=PlannerConfig()):
    return make_field(cfg).fit([])


def box(x0, y0, x1, y1):
    return build_halfspaces([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


# -- model -------------------------------------------------------------------

def test_zero_state_is_fixed_point():
    x = step_dynamics(RobotState(0, 0), ControlInput(), 0.1)
    assert x == RobotState(0, 0)


def test_straight_step():
    x = step_dynamics(RobotState(0, 0, 0, 1.0), ControlInput(), 0.1)
    assert x.px == pytest.approx(0.1, abs=1e-15) and x.py == 0.0


def test_two_euler_steps_on_arc():
    x = RobotState(0, 0, 0, 1.0, math.pi / 0.4)
    for _ in range(2):
        x = step_dynamics(x, ControlInput(), 0.1)
    # heading pi/4 after the first step, so the second moves along the diagonal
    assert x.theta == pytest.approx(math.pi / 2, abs=1e-15)
    assert x.px == pytest.approx(0.1 + 0.1 * math.sqrt(0.5), abs=1e-15)
    assert x.py == pytest.approx(0.1 * math.sqrt(0.5), abs=1e-15)


def test_inputs_integrate_into_rates():
    x = step_dynamics(RobotState(0, 0, 0, 0.2, 0.1), ControlInput(0.5, -1.0), 0.1)
    assert x.v == pytest.approx(0.25) and x.omega == pytest.approx(0.0)


@pytest.mark.parametrize("theta,expected", [
    (0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi, math.pi),
    (2 * math.pi + 0.1, 0.1), (-0.1, -0.1),
])
def test_wrap_angle(theta, expected):
    assert wrap_angle(theta) == pytest.approx(expected, abs=1e-12)


def test_state_rejects_non_finite():
    with pytest.raises(ValueError):
        RobotState(float("nan"), 0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(horizon=1)
    with pytest.raises(ValueError):
        PlannerConfig(dt=0.0)


# -- problem -----------------------------------------------------------------

def test_empty_reference_rejected():
    with pytest.raises(ValueError):
        build_problem(RobotState(0, 0), [], empty_field(), PlannerConfig())


def test_reference_window_progress():
    cfg = PlannerConfig(horizon=5, dt=0.1, v_ref=0.5)
    ref, vref, heading = reference_window(RobotState(1.0, 0.3), STRAIGHT, cfg)
    np.testing.assert_allclose(ref[:, 0], 1.0 + 0.05 * np.arange(1, 6))
    np.testing.assert_allclose(ref[:, 1], 0.0)
    assert np.all(vref == 0.5) and np.all(heading == 0.0)


def test_reference_window_holds_goal():
    cfg = PlannerConfig(horizon=5)
    ref, vref, _ = reference_window(RobotState(19.9, 0.0), STRAIGHT, cfg)
    np.testing.assert_allclose(ref[-1], (20.0, 0.0))
    assert vref[-1] == 0.0


def test_tracking_feasible_reference_costs_nothing():
    cfg = PlannerConfig()
    res = solve(build_problem(RobotState(0, 0, 0, cfg.v_ref), STRAIGHT, empty_field(cfg), cfg))
    assert res.solve_status == CONVERGED
    assert res.cost < 1e-12
    assert np.abs(res.input_array).max() < 1e-6


def test_far_obstacle_matches_obstacle_free():
    cfg = PlannerConfig()
    x0 = RobotState(0, 0.1, 0.05, 0.3)
    far = make_field(cfg).fit([box(0.0, 50.0, 1.0, 51.0)], x0.position)
    p_far = build_problem(x0, STRAIGHT, far, cfg)
    p_free = build_problem(x0, STRAIGHT, empty_field(cfg), cfg)
    r_far, r_free = solve(p_far), solve(p_free)
    assert r_far.g_values.max() < 1e-6
    np.testing.assert_allclose(r_far.input_array, r_free.input_array, atol=1e-9)


def test_reference_through_obstacle_keeps_constraint():
    # stiff slack so violations are priced above any tracking gain
    cfg = PlannerConfig(slack_weight=1e4)
    x0 = RobotState(0, 0, 0, 0.5)
    # slightly off-centre: a box centred on the path is a saddle for a
    # first-order solver started from zero inputs
    polys = preprocess_all([box(0.8, -0.35, 1.2, 0.25)], InflationConfig())
    field = make_field(cfg).fit(polys, x0.position)
    res = solve(build_problem(x0, STRAIGHT, field, cfg))
    assert field.decision_function(reference_window(x0, STRAIGHT, cfg)[0]).max() > 0.9
    assert np.all(res.slack >= 0)
    assert np.all(res.g_values - res.slack <= cfg.fuzzy.threshold + 1e-6)
    assert res.slack.sum() < 0.01


def test_least_squares_oracle_n3():
    cfg = PlannerConfig(horizon=3, dt=0.1, v_ref=0.5, w_heading=0.0, grad_tol=1e-10, cost_tol=0.0)
    v0, dt = 0.3, cfg.dt
    res = solve(build_problem(RobotState(0, 0, 0, v0), STRAIGHT, empty_field(cfg), cfg))
    # with zero heading and yaw rate the problem is linear least squares in a
    # (alpha stays 0 by symmetry); build it directly
    P = dt * np.array([[0, 0, 0], [dt, 0, 0], [2 * dt, dt, 0]])
    p_off = dt * v0 * np.array([1, 2, 3])
    V = dt * np.tril(np.ones((3, 3)))
    v_off = np.full(3, v0)
    ref = 0.05 * np.array([1, 2, 3])
    wp, wv, (wa, _) = cfg.w_position, cfg.w_velocity, cfg.w_input
    A = np.vstack([math.sqrt(wp) * P, math.sqrt(wv) * V, math.sqrt(wa) * np.eye(3)])
    b = np.concatenate([math.sqrt(wp) * (ref - p_off), math.sqrt(wv) * (0.5 - v_off), np.zeros(3)])
    a_star = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(res.input_array[:, 0], a_star, atol=1e-6)
    np.testing.assert_allclose(res.input_array[:, 1], 0.0, atol=1e-6)


def test_warm_start_at_optimum():
    cfg = PlannerConfig()
    x0 = RobotState(0, 0.2, 0.1, 0.2)
    polys = preprocess_all([box(1.0, -0.6, 1.4, 0.0)], InflationConfig())
    problem = build_problem(x0, STRAIGHT, make_field(cfg).fit(polys, x0.position), cfg)
    first = solve(problem)
    again = solve(problem, warm_start=first, shift=False)
    assert again.iterations <= 2
    assert again.cost <= first.cost + 1e-12


def test_warm_start_shifts_inputs():
    cfg = PlannerConfig(horizon=4, max_iter=0)
    problem = build_problem(RobotState(0, 0), STRAIGHT, empty_field(cfg), cfg)
    U = np.array([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8]])
    prev = solve(problem, initial_inputs=U)
    res = solve(problem, warm_start=prev)
    np.testing.assert_allclose(res.input_array, [[0.3, 0.4], [0.5, 0.6], [0.7, 0.8], [0.7, 0.8]])


def test_bad_initial_guess_decreases_cost():
    cfg = PlannerConfig()
    x0 = RobotState(0, 0, 0, 0.8)
    polys = preprocess_all([box(0.5, -0.5, 1.5, 0.5)], InflationConfig())
    problem = build_problem(x0, STRAIGHT, make_field(cfg).fit(polys, x0.position), cfg)
    U0 = np.tile([0.5, 0.0], (cfg.horizon, 1))
    assert np.sum(problem.constraint_values(U0) > 0.9) >= 3
    res = solve(problem, initial_inputs=U0)
    assert res.solve_status in (CONVERGED, MAX_ITER)
    hist = np.array(res.cost_history)
    assert np.all(np.diff(hist) <= 0)
    assert hist[-1] < hist[0]


def test_non_finite_start_falls_back_to_braking():
    cfg = PlannerConfig(horizon=5)
    problem = build_problem(RobotState(0, 0, 0, 0.5, 0.2), STRAIGHT, empty_field(cfg), cfg)
    res = solve(problem, initial_inputs=np.full((5, 2), np.nan))
    assert res.solve_status == INFEASIBLE_FALLBACK
    assert res.solve_time >= 0
    assert res.states[-1].v == pytest.approx(0.0) and res.states[-1].omega == pytest.approx(0.0)


def _random_problem(rng, cfg):
    x0 = RobotState(*rng.uniform(-0.5, 0.5, 2), rng.uniform(-0.5, 0.5), rng.uniform(0.1, 0.8), rng.uniform(-0.5, 0.5))
    raw = [round_polygon(rng, int(rng.integers(3, 7)), 0.4, center=(rng.uniform(0.5, 2.0), rng.uniform(-0.6, 0.6)))
           for _ in range(3)]
    field = make_field(cfg).fit(preprocess_all(raw, InflationConfig()), x0.position)
    return build_problem(x0, [(-1.0, 0.0), (2.0, 0.3), (4.0, 1.5)], field, cfg)


def test_objective_gradient_matches_differences():
    rng = np.random.default_rng(5)
    cfg = PlannerConfig(w_heading=0.5)
    for _ in range(20):
        problem = _random_problem(rng, cfg)
        U = rng.uniform(-0.8, 0.8, (cfg.horizon, 2))
        _, grad = problem.objective_and_gradient(U)
        h = 1e-6
        fd = np.zeros_like(U)
        for idx in np.ndindex(U.shape):
            e = np.zeros_like(U)
            e[idx] = h
            fd[idx] = (problem.objective(U + e) - problem.objective(U - e)) / (2 * h)
        assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(fd)


def test_solution_respects_input_box_and_dynamics():
    rng = np.random.default_rng(8)
    cfg = PlannerConfig()
    for _ in range(5):
        problem = _random_problem(rng, cfg)
        res = solve(problem)
        U = res.input_array
        assert np.all(np.abs(U[:, 0]) <= cfg.a_max) and np.all(np.abs(U[:, 1]) <= cfg.alpha_max)
        chain = [problem.x0] + res.states
        for k, u in enumerate(res.inputs):
            pred = step_dynamics(chain[k], u, cfg.dt).as_array()
            diff = pred - chain[k + 1].as_array()
            diff[2] = wrap_angle(diff[2])
            assert np.abs(diff).max() < 1e-8
        assert np.all(res.slack >= 0)


def test_deterministic():
    cfg = PlannerConfig()
    a = solve(_random_problem(np.random.default_rng(3), cfg))
    b = solve(_random_problem(np.random.default_rng(3), cfg))
    assert np.array_equal(a.input_array, b.input_array)
    assert np.array_equal(a.g_values, b.g_values)
    assert a.cost == b.cost and a.iterations == b.iterations


def test_clearance_from_low_slack():
    # a planned point with g below threshold + eps can only sit inside an
    # inflated polygon by the sigmoid transition depth
    rng = np.random.default_rng(21)
    cfg = PlannerConfig()
    infl = InflationConfig()
    c, thr = cfg.fuzzy.c, cfg.fuzzy.threshold
    checked = 0
    for _ in range(15):
        x0 = RobotState(0.0, rng.uniform(-0.3, 0.3), 0.0, 0.5)
        raw = [round_polygon(rng, int(rng.integers(3, 7)), 0.3, center=(rng.uniform(0.8, 1.8), rng.uniform(-0.5, 0.5)))]
        inflated = preprocess_all(raw, infl)
        field = make_field(cfg).fit(inflated, x0.position)
        res = solve(build_problem(x0, STRAIGHT, field, cfg))
        eps = float(res.slack.max())
        if eps > 0.05:
            continue
        V = inflated[0].n_vertices
        q = (thr + eps) ** (1.0 / V)
        delta = math.log(q / (1 - q)) / c
        d = distance_to_polygon(raw[0], res.positions)
        assert np.all(d >= infl.shift - delta - 1e-9)
        checked += 1
    assert checked >= 10


def test_plan_cycle_records_timings():
    res = plan_cycle(RobotState(0, 0), STRAIGHT, [], PlannerConfig())
    assert set(res.timings) == {"preprocess", "load", "build", "solve", "total"}
    assert all(v >= 0 for v in res.timings.values())
    assert len(res.states) == len(res.inputs) == 20


def test_disabled_constraints_ignore_obstacles():
    cfg = with_fuzzy(PlannerConfig(), max_obstacles=0)
    x0 = RobotState(0, 0, 0, 0.5)
    res = plan_cycle(x0, STRAIGHT, [box(0.5, -0.5, 1.5, 0.5)], cfg)
    free = plan_cycle(x0, STRAIGHT, [], cfg)
    np.testing.assert_array_equal(res.input_array, free.input_array)


def test_planner_estimator_warm_starts():
    planner = MPCPlanner(PlannerConfig(horizon=10)).fit([box(2.0, -0.5, 2.5, 0.5)])
    assert planner.get_params()["config"].horizon == 10
    x = RobotState(0, 0, 0, 0.5)
    first = planner.predict(x, STRAIGHT)
    assert planner.last_result_ is first
    x = step_dynamics(x, first.inputs[0], 0.1)
    second = planner.predict(x, STRAIGHT)
    assert second.iterations <= first.iterations
    assert isinstance(second.field, FuzzyObstacleField)
