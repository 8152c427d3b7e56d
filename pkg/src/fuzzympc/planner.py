"""Receding-horizon trajectory planner with a fuzzy obstacle soft constraint.

The robot is a unicycle with acceleration-level inputs.  States are
eliminated by forward rollout (single shooting), so the decision variables
are the ``N`` inputs.  The soft obstacle constraint
``g(p_i) - eps_i <= threshold, eps_i >= 0`` is handled by eliminating the
slack: for fixed inputs the cheapest feasible slack is
``eps_i = max(0, g(p_i) - threshold)``, which enters the cost as
``slack_weight * eps_i**2``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .fuzzy import FuzzyObstacleField, FuzzyParams
from .polygon import ConvexPolygon
from .preprocessing import InflationConfig, preprocess_all

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"
INFEASIBLE_FALLBACK = "infeasible_fallback"


def wrap_angle(theta: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class RobotState:
    px: float
    py: float
    theta: float = 0.0
    v: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        vals = (self.px, self.py, self.theta, self.v, self.omega)
        if not all(math.isfinite(float(x)) for x in vals):
            raise ValueError(f"non-finite robot state {vals}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.theta, self.v, self.omega])

    @classmethod
    def from_array(cls, x) -> "RobotState":
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class ControlInput:
    a: float = 0.0
    alpha: float = 0.0


@dataclass(frozen=True)
class PlannerConfig:
    """Horizon, bounds and weights of the tracking problem.

    Velocity bounds are enforced with a quadratic penalty of weight
    ``bound_weight``; input bounds by projection onto the box.
    """

    horizon: int = 20
    dt: float = 0.1
    v_ref: float = 0.5
    v_max: float = 1.0
    v_min: float = 0.0
    omega_max: float = 1.5
    a_max: float = 1.0
    alpha_max: float = 3.0
    w_position: float = 10.0
    w_heading: float = 0.0
    w_velocity: float = 1.0
    w_input: tuple[float, float] = (0.1, 0.05)
    slack_weight: float = 50.0
    bound_weight: float = 1e3
    max_iter: int = 200
    grad_tol: float = 1e-6
    cost_tol: float = 1e-10
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)

    def __post_init__(self):
        if self.horizon < 2:
            raise ValueError("horizon must be >= 2")
        for name in ("dt", "v_max", "omega_max", "a_max", "alpha_max"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.v_min > self.v_max:
            raise ValueError("v_min must not exceed v_max")
        if min(self.w_position, self.w_heading, self.w_velocity, *self.w_input,
               self.slack_weight, self.bound_weight) < 0:
            raise ValueError("weights must be >= 0")


@dataclass
class PlanResult:
    states: list[RobotState]
    inputs: list[ControlInput]
    slack: np.ndarray
    solve_status: str
    solve_time: float
    cost: float
    iterations: int = 0
    g_values: Optional[np.ndarray] = None
    cost_history: list[float] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    field: Optional[FuzzyObstacleField] = None

    @property
    def input_array(self) -> np.ndarray:
        return np.array([(u.a, u.alpha) for u in self.inputs])

    @property
    def positions(self) -> np.ndarray:
        return np.array([(s.px, s.py) for s in self.states])


def step_dynamics(x: RobotState, u: ControlInput, dt: float) -> RobotState:
    """One explicit Euler step of the unicycle."""
    return RobotState(
        x.px + x.v * math.cos(x.theta) * dt,
        x.py + x.v * math.sin(x.theta) * dt,
        x.theta + x.omega * dt,
        x.v + u.a * dt,
        x.omega + u.alpha * dt,
    )


def _polyline(waypoints) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(waypoints, dtype=float).reshape(-1, 2)
    seg = np.diff(pts, axis=0)
    arc = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    return pts, arc


def project_onto_path(p, waypoints) -> float:
    """Arc length of the point on the polyline closest to ``p``."""
    pts, arc = _polyline(waypoints)
    if len(pts) == 1:
        return 0.0
    p = np.asarray(p, dtype=float)
    a, b = pts[:-1], pts[1:]
    ab = b - a
    L2 = np.sum(ab * ab, axis=1)
    t = np.clip(np.sum((p - a) * ab, axis=1) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    d = np.hypot(*(a + t[:, None] * ab - p).T)
    k = int(np.argmin(d))
    return float(arc[k] + t[k] * math.sqrt(L2[k]))


def reference_window(x0: RobotState, waypoints, cfg: PlannerConfig):
    """Reference positions, speeds and headings for steps ``1..N``.

    Step ``i`` targets the path point ``v_ref * dt * i`` ahead (in arc
    length) of the point closest to the robot; beyond the end of the path
    the last waypoint is held with zero reference speed.
    """
    pts, arc = _polyline(waypoints)
    if len(pts) == 0:
        raise ValueError("reference needs at least one waypoint")
    N = cfg.horizon
    if len(pts) == 1:
        return np.repeat(pts, N, axis=0), np.zeros(N), np.full(N, x0.theta)
    s0 = project_onto_path(x0.position, pts)
    s = s0 + cfg.v_ref * cfg.dt * np.arange(1, N + 1)
    total = arc[-1]
    vref = np.where(s < total, cfg.v_ref, 0.0)
    s = np.minimum(s, total)
    ref = np.column_stack([np.interp(s, arc, pts[:, 0]), np.interp(s, arc, pts[:, 1])])
    seg = np.clip(np.searchsorted(arc, s, side="right") - 1, 0, len(pts) - 2)
    d = pts[seg + 1] - pts[seg]
    heading = np.arctan2(d[:, 1], d[:, 0])
    return ref, vref, heading


class MPCProblem:
    """Single-shooting objective over the input sequence ``U`` (shape ``(N, 2)``)."""

    def __init__(self, x0: RobotState, ref, vref, href, field: FuzzyObstacleField, cfg: PlannerConfig):
        self.x0 = x0
        self.ref = np.asarray(ref, dtype=float)
        self.vref = np.asarray(vref, dtype=float)
        self.href = np.asarray(href, dtype=float)
        self.field = field
        self.cfg = cfg
        self.lower = np.tile([-cfg.a_max, -cfg.alpha_max], (cfg.horizon, 1))
        self.upper = np.tile([cfg.a_max, cfg.alpha_max], (cfg.horizon, 1))
        self.threshold = float(field.threshold)
        self._active = bool(np.any(field.obstacle_active_)) if hasattr(field, "obstacle_active_") else False

    @property
    def n_steps(self) -> int:
        return self.cfg.horizon

    def project(self, U: np.ndarray) -> np.ndarray:
        return np.clip(U, self.lower, self.upper)

    def rollout(self, U) -> np.ndarray:
        """States ``x_0..x_N`` as rows ``(px, py, theta, v, omega)``; theta unwrapped."""
        dt = self.cfg.dt
        X = np.empty((self.n_steps + 1, 5))
        px, py, th, v, om = self.x0.as_array()
        X[0] = px, py, th, v, om
        for i in range(self.n_steps):
            a, al = U[i]
            px, py, th, v, om = (px + v * math.cos(th) * dt, py + v * math.sin(th) * dt,
                                 th + om * dt, v + a * dt, om + al * dt)
            X[i + 1] = px, py, th, v, om
        return X

    def constraint_values(self, U) -> np.ndarray:
        """``g(p_i)`` for steps ``1..N``."""
        X = self.rollout(U)
        if not self._active:
            return np.zeros(self.n_steps)
        return self.field.decision_function(X[1:, :2])

    def slack(self, U) -> np.ndarray:
        return np.maximum(0.0, self.constraint_values(U) - self.threshold)

    def _stage_terms(self, X, U, with_gradient):
        cfg = self.cfg
        P = X[1:, :2]
        th, v, om = X[1:, 2], X[1:, 3], X[1:, 4]
        dpos = P - self.ref
        dv = v - self.vref
        dth = th - self.href
        over_v = np.maximum(0.0, v - cfg.v_max)
        under_v = np.maximum(0.0, cfg.v_min - v)
        over_om = np.maximum(0.0, np.abs(om) - cfg.omega_max)
        wa, wal = cfg.w_input
        cost = (cfg.w_position * np.sum(dpos * dpos)
                + cfg.w_velocity * np.sum(dv * dv)
                + 2.0 * cfg.w_heading * np.sum(1.0 - np.cos(dth))
                + cfg.bound_weight * np.sum(over_v ** 2 + under_v ** 2 + over_om ** 2)
                + wa * np.sum(U[:, 0] ** 2) + wal * np.sum(U[:, 1] ** 2))
        if self._active:
            if with_gradient:
                g, dg = self.field.value_and_gradient(P)
            else:
                g = self.field.decision_function(P)
            viol = np.maximum(0.0, g - self.threshold)
            cost += cfg.slack_weight * np.sum(viol * viol)
        if not with_gradient:
            return float(cost), None, None
        lx = np.zeros_like(X[1:])
        lx[:, :2] = 2.0 * cfg.w_position * dpos
        if self._active:
            lx[:, :2] += (2.0 * cfg.slack_weight * viol)[:, None] * dg
        lx[:, 2] = 2.0 * cfg.w_heading * np.sin(dth)
        lx[:, 3] = 2.0 * cfg.w_velocity * dv + 2.0 * cfg.bound_weight * (over_v - under_v)
        lx[:, 4] = 2.0 * cfg.bound_weight * over_om * np.sign(om)
        lu = np.column_stack([2.0 * wa * U[:, 0], 2.0 * wal * U[:, 1]])
        return float(cost), lx, lu

    def objective(self, U) -> float:
        U = np.asarray(U, dtype=float)
        return self._stage_terms(self.rollout(U), U, with_gradient=False)[0]

    def objective_and_gradient(self, U) -> tuple[float, np.ndarray]:
        """Cost and its exact gradient by a backward (adjoint) sweep."""
        U = np.asarray(U, dtype=float)
        dt = self.cfg.dt
        X = self.rollout(U)
        cost, lx, lu = self._stage_terms(X, U, with_gradient=True)
        grad = np.empty_like(U)
        lam = np.zeros(5)
        for i in range(self.n_steps, 0, -1):
            # lam <- dJ/dx_i = l_x(x_i) + (df/dx at x_i)^T dJ/dx_{i+1}
            if i < self.n_steps:
                _, _, th, v, _ = X[i]
                c, s = math.cos(th), math.sin(th)
                lam = np.array([
                    lam[0],
                    lam[1],
                    lam[2] + dt * v * (-s * lam[0] + c * lam[1]),
                    lam[3] + dt * (c * lam[0] + s * lam[1]),
                    lam[4] + dt * lam[2],
                ])
            lam = lam + lx[i - 1]
            grad[i - 1, 0] = lu[i - 1, 0] + dt * lam[3]
            grad[i - 1, 1] = lu[i - 1, 1] + dt * lam[4]
        return cost, grad


def build_problem(x0: RobotState, reference, field: FuzzyObstacleField, cfg: PlannerConfig) -> MPCProblem:
    if reference is None or len(reference) == 0:
        raise ValueError("reference needs at least one waypoint")
    ref, vref, href = reference_window(x0, reference, cfg)
    return MPCProblem(x0, ref, vref, href, field, cfg)


def shift_inputs(previous: PlanResult) -> np.ndarray:
    """Drop the first input and repeat the last one."""
    U = previous.input_array
    return np.vstack([U[1:], U[-1:]])


def _lbfgs_direction(grad, mem_s, mem_y):
    q = grad.copy()
    alphas = []
    for s, y in reversed(list(zip(mem_s, mem_y))):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        alphas.append((rho, a, s, y))
        q -= a * y
    if mem_s:
        s, y = mem_s[-1], mem_y[-1]
        q *= np.dot(s, y) / np.dot(y, y)
    for rho, a, s, y in reversed(alphas):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def _braking_plan(problem: MPCProblem) -> np.ndarray:
    cfg = problem.cfg
    U = np.zeros((problem.n_steps, 2))
    v, om = problem.x0.v, problem.x0.omega
    for i in range(problem.n_steps):
        a = float(np.clip(-v / cfg.dt, -cfg.a_max, cfg.a_max))
        al = float(np.clip(-om / cfg.dt, -cfg.alpha_max, cfg.alpha_max))
        U[i] = a, al
        v += a * cfg.dt
        om += al * cfg.dt
    return U


def _result(problem: MPCProblem, U, status, t0, cost, iterations, history) -> PlanResult:
    X = problem.rollout(U)
    states = [RobotState.from_array(x) for x in X[1:]]
    g = problem.constraint_values(U)
    return PlanResult(
        states=states,
        inputs=[ControlInput(float(a), float(al)) for a, al in U],
        slack=np.maximum(0.0, g - problem.threshold),
        solve_status=status,
        solve_time=time.perf_counter() - t0,
        cost=float(cost),
        iterations=iterations,
        g_values=g,
        cost_history=history,
        field=problem.field,
    )


def solve(problem: MPCProblem, warm_start: Optional[PlanResult] = None, shift: bool = True,
          initial_inputs=None) -> PlanResult:
    """Minimize the penalized cost over the input box.

    Projected descent with an L-BFGS search direction (steepest descent
    when that is not a descent direction) and Armijo backtracking along the
    projection arc.  Stops when the projected gradient norm drops below
    ``grad_tol``, an accepted step decreases the cost by less than
    ``cost_tol``, no decreasing step exists, or after ``max_iter``
    iterations.
    """
    t0 = time.perf_counter()
    cfg = problem.cfg
    N = problem.n_steps
    if initial_inputs is not None:
        U = np.asarray(initial_inputs, dtype=float).reshape(N, 2)
    elif warm_start is not None:
        U = shift_inputs(warm_start) if shift else warm_start.input_array
    else:
        U = np.zeros((N, 2))
    U = problem.project(U)

    f, g = problem.objective_and_gradient(U)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        U = _braking_plan(problem)
        return _result(problem, U, INFEASIBLE_FALLBACK, t0, problem.objective(U), 0, [])

    history = [f]
    mem_s: list[np.ndarray] = []
    mem_y: list[np.ndarray] = []
    status = MAX_ITER
    it = 0
    for it in range(1, cfg.max_iter + 1):
        pg = U - problem.project(U - g)
        if np.linalg.norm(pg) < cfg.grad_tol:
            status = CONVERGED
            it -= 1
            break
        x, gx = U.ravel(), g.ravel()
        # variables held at a bound by the gradient stay fixed
        at_bound = ((U <= problem.lower) & (g > 0)) | ((U >= problem.upper) & (g < 0))
        free = ~at_bound.ravel()
        d = np.where(free, _lbfgs_direction(np.where(free, gx, 0.0), mem_s, mem_y), 0.0)
        if np.dot(d, gx) >= -1e-16 * np.linalg.norm(d) * np.linalg.norm(gx) or not mem_s:
            d = -gx
            step = 1.0 if mem_s else min(1.0, 1.0 / max(np.linalg.norm(gx), 1e-12))
        else:
            step = 1.0
        accepted = False
        for _ in range(50):
            trial = problem.project((x + step * d).reshape(N, 2))
            f_trial = problem.objective(trial)
            if math.isfinite(f_trial) and f_trial <= f + 1e-4 * np.dot(gx, trial.ravel() - x):
                accepted = True
                break
            step *= 0.5
        if not accepted or f_trial >= f:
            status = CONVERGED
            break
        f_new, g_new = problem.objective_and_gradient(trial)
        s_vec = trial.ravel() - x
        y_vec = g_new.ravel() - gx
        if np.dot(s_vec, y_vec) > 1e-12 * np.dot(s_vec, s_vec):
            mem_s.append(s_vec)
            mem_y.append(y_vec)
            if len(mem_s) > 10:
                mem_s.pop(0)
                mem_y.pop(0)
        decrease = f - f_new
        U, f, g = trial, f_new, g_new
        history.append(f)
        if decrease < cfg.cost_tol:
            status = CONVERGED
            break
    return _result(problem, U, status, t0, f, it, history)


def make_field(cfg: PlannerConfig) -> FuzzyObstacleField:
    fp = cfg.fuzzy
    return FuzzyObstacleField(c=fp.c, max_obstacles=fp.max_obstacles, max_edges=fp.max_edges,
                              threshold=fp.threshold)


def plan_cycle(x0: RobotState, reference, raw_polygons: Sequence[ConvexPolygon], cfg: PlannerConfig,
               inflation: InflationConfig = InflationConfig(), warm_start: Optional[PlanResult] = None) -> PlanResult:
    """One MPC cycle: preprocess, load the field, build and solve."""
    t = time.perf_counter()
    polys = preprocess_all(list(raw_polygons), inflation)
    t_pre = time.perf_counter()
    field = make_field(cfg).fit(polys, x0.position)
    t_load = time.perf_counter()
    problem = build_problem(x0, reference, field, cfg)
    t_build = time.perf_counter()
    result = solve(problem, warm_start)
    t_end = time.perf_counter()
    result.timings = {
        "preprocess": t_pre - t,
        "load": t_load - t_pre,
        "build": t_build - t_load,
        "solve": t_end - t_build,
        "total": t_end - t,
    }
    return result


class MPCPlanner(BaseEstimator):
    """Stateful planner: ``fit`` stores the obstacle polygons, ``predict``
    plans from a state and keeps the result as the next warm start."""

    def __init__(self, config: Optional[PlannerConfig] = None, inflation: Optional[InflationConfig] = None):
        self.config = config
        self.inflation = inflation

    def fit(self, polygons: Sequence[ConvexPolygon], y=None):
        self.polygons_ = list(polygons)
        self.last_result_ = None
        return self

    def predict(self, state: RobotState, reference) -> PlanResult:
        cfg = self.config or PlannerConfig()
        infl = self.inflation or InflationConfig()
        self.last_result_ = plan_cycle(state, reference, self.polygons_, cfg, infl, self.last_result_)
        return self.last_result_


def with_fuzzy(cfg: PlannerConfig, **changes) -> PlannerConfig:
    """Copy of ``cfg`` with fields of its ``FuzzyParams`` replaced."""
    return replace(cfg, fuzzy=replace(cfg.fuzzy, **changes))
