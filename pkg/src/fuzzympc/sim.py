"""Closed-loop scenario simulation and artifact output."""
from __future__ import annotations

import configparser
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .fuzzy import FuzzyObstacleField, FuzzyParams, sample_field, threshold_contours, write_contour_csv, write_field_csv
from .gridmap import DEFAULT_OCCUPIED_THRESHOLD, OccupancyGrid, extract_polygons, parse_grid
from .planner import ControlInput, PlannerConfig, PlanResult, RobotState, make_field, plan_cycle, step_dynamics
from .polygon import ConvexPolygon, contains, distance_to_polygon, write_polygons
from .preprocessing import InflationConfig, preprocess_all

logger = logging.getLogger(__name__)

GOAL_REACHED = "goal_reached"
COLLISION = "collision"
TIMEOUT = "timeout"

EXIT_CODES = {GOAL_REACHED: 0, COLLISION: 2, TIMEOUT: 3}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    grid: OccupancyGrid
    reference: np.ndarray
    start: RobotState
    goal_tolerance: float = 0.15
    max_cycles: int = 300
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    inflation: InflationConfig = field(default_factory=InflationConfig)
    occupied_threshold: int = DEFAULT_OCCUPIED_THRESHOLD
    field_step: float = 0.1

    def __post_init__(self):
        if len(self.reference) == 0:
            raise ScenarioError("reference needs at least one waypoint")
        xmin, ymin, xmax, ymax = self.grid.bounds
        if not (xmin <= self.start.px <= xmax and ymin <= self.start.py <= ymax):
            raise ScenarioError("start position lies outside the map")

    @property
    def goal(self) -> np.ndarray:
        return np.asarray(self.reference[-1], dtype=float)


_PLANNER_KEYS = {
    "horizon": int, "dt": float, "v_ref": float, "v_max": float, "v_min": float,
    "omega_max": float, "a_max": float, "alpha_max": float, "w_position": float,
    "w_heading": float, "w_velocity": float, "slack_weight": float,
    "bound_weight": float, "max_iter": int,
}
_FUZZY_KEYS = {"c_scale": ("c", float), "max_obstacles": ("max_obstacles", int),
               "max_edges": ("max_edges", int), "threshold": ("threshold", float)}
_INFLATION_KEYS = {"robot_radius": float, "safety_margin": float, "min_vertex_distance": float,
                   "sharpness_cos_limit": float}


def _parse_waypoints(text: str) -> np.ndarray:
    pts = []
    for tok in text.replace("\n", "").split(";"):
        tok = tok.strip()
        if not tok:
            continue
        try:
            x, y = tok.split(",")
            pts.append((float(x), float(y)))
        except ValueError as exc:
            raise ScenarioError(f"bad waypoint {tok!r}") from exc
    if not pts:
        raise ScenarioError("reference has no waypoints")
    return np.array(pts)


def parse_scenario(text: str, base_dir: Path | str = ".") -> Scenario:
    """Parse scenario text; ``[map] file`` is resolved relative to ``base_dir``."""
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError(str(exc)) from exc
    for section in ("map", "reference", "start"):
        if not cp.has_section(section):
            raise ScenarioError(f"missing [{section}] section")
    try:
        map_path = Path(base_dir) / cp.get("map", "file")
        grid = parse_grid(map_path.read_bytes())
        occ = cp.getint("map", "occupied_threshold", fallback=DEFAULT_OCCUPIED_THRESHOLD)
        reference = _parse_waypoints(cp.get("reference", "waypoints"))
        st = cp["start"]
        start = RobotState(float(st["x"]), float(st["y"]), float(st.get("theta", 0.0)),
                           float(st.get("v", 0.0)), float(st.get("omega", 0.0)))

        planner = PlannerConfig()
        fuzzy = FuzzyParams()
        if cp.has_section("planner"):
            sec = cp["planner"]
            changes = {k: conv(sec[k]) for k, conv in _PLANNER_KEYS.items() if k in sec}
            if "w_input" in sec:
                changes["w_input"] = tuple(float(v) for v in sec["w_input"].split(","))
            fchanges = {name: conv(sec[k]) for k, (name, conv) in _FUZZY_KEYS.items() if k in sec}
            fuzzy = replace(fuzzy, **fchanges)
            unknown = set(sec) - set(_PLANNER_KEYS) - set(_FUZZY_KEYS) - {"w_input"}
            if unknown:
                raise ScenarioError(f"unknown [planner] keys: {sorted(unknown)}")
            planner = replace(planner, fuzzy=fuzzy, **changes)
        inflation = InflationConfig()
        if cp.has_section("inflation"):
            sec = cp["inflation"]
            unknown = set(sec) - set(_INFLATION_KEYS)
            if unknown:
                raise ScenarioError(f"unknown [inflation] keys: {sorted(unknown)}")
            inflation = replace(inflation, **{k: conv(sec[k]) for k, conv in _INFLATION_KEYS.items() if k in sec})
        sim = cp["sim"] if cp.has_section("sim") else {}
        return Scenario(
            grid=grid,
            reference=reference,
            start=start,
            goal_tolerance=float(sim.get("goal_tolerance", 0.15)),
            max_cycles=int(sim.get("max_cycles", 300)),
            planner=planner,
            inflation=inflation,
            occupied_threshold=occ,
            field_step=float(sim.get("field_step", 0.1)),
        )
    except (KeyError, ValueError, OSError, configparser.Error) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"invalid scenario: {exc}") from exc


def load_scenario(path: Path | str) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from exc
    return parse_scenario(text, path.parent)


def bundled_scenario_path(name: str = "corner") -> Path:
    return Path(__file__).parent / "data" / f"{name}.scn"


def clearance(polygons, p, robot_radius: float) -> float:
    """Distance from a circular robot at ``p`` to the nearest polygon.

    Negative when the footprint overlaps an obstacle.  Uses the brute-force
    segment distance, not the fuzzy field.
    """
    if not polygons:
        return math.inf
    return min(float(distance_to_polygon(poly, p)[0]) for poly in polygons) - robot_radius


@dataclass
class CycleRecord:
    cycle: int
    state: RobotState
    control: Optional[ControlInput]
    status: str
    solve_time: float
    iterations: int
    min_dist: float
    g: float
    max_slack: float


@dataclass
class SimLog:
    scenario: Scenario
    records: list[CycleRecord]
    outcome: str
    polygons: list[ConvexPolygon]
    inflated: list[ConvexPolygon]
    fields: list[FuzzyObstacleField] = field(default_factory=list, repr=False)

    @property
    def positions(self) -> np.ndarray:
        return np.array([(r.state.px, r.state.py) for r in self.records])

    @property
    def solve_times(self) -> np.ndarray:
        return np.array([r.solve_time for r in self.records[1:]])


def run_scenario(scn: Scenario, keep_fields: bool = False) -> SimLog:
    """Closed-loop simulation; the plant is the prediction model itself.

    Stops on reaching the goal, on a collision (negative oracle clearance)
    or after ``max_cycles`` cycles.
    """
    cfg = scn.planner
    r_bot = scn.inflation.robot_radius
    x = scn.start
    polys = extract_polygons(scn.grid, scn.occupied_threshold)
    field0 = make_field(cfg).fit(preprocess_all(polys, scn.inflation), x.position)
    g0 = float(field0.decision_function(x.position)[0])
    records = [CycleRecord(0, x, None, "", 0.0, 0, clearance(polys, x.position, r_bot), g0, 0.0)]
    fields = []
    outcome = TIMEOUT
    warm: Optional[PlanResult] = None
    if np.hypot(*(x.position - scn.goal)) <= scn.goal_tolerance:
        outcome = GOAL_REACHED
    else:
        for cycle in range(1, scn.max_cycles + 1):
            # static map: re-extraction yields identical polygons every cycle
            polys = extract_polygons(scn.grid, scn.occupied_threshold)
            result = plan_cycle(x, scn.reference, polys, cfg, scn.inflation, warm)
            warm = result
            u = result.inputs[0]
            x = step_dynamics(x, u, cfg.dt)
            g = float(result.field.decision_function(x.position)[0])
            dist = clearance(polys, x.position, r_bot)
            records.append(CycleRecord(cycle, x, u, result.solve_status, result.timings.get("total", result.solve_time),
                                       result.iterations, dist, g, float(np.max(result.slack, initial=0.0))))
            if keep_fields:
                fields.append(result.field)
            if dist < 0:
                outcome = COLLISION
                break
            if np.hypot(*(x.position - scn.goal)) <= scn.goal_tolerance:
                outcome = GOAL_REACHED
                break
    inflated = preprocess_all(polys, scn.inflation)
    return SimLog(scn, records, outcome, polys, inflated, fields)


def field_for_scenario(scn: Scenario) -> FuzzyObstacleField:
    polys = preprocess_all(extract_polygons(scn.grid, scn.occupied_threshold), scn.inflation)
    return make_field(scn.planner).fit(polys, scn.start.position)


def write_field_artifacts(scn: Scenario, out_dir: Path | str) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fld = field_for_scenario(scn)
    xs, ys, G = sample_field(fld, scn.grid.bounds, scn.field_step)
    write_field_csv(out / "field.csv", xs, ys, G)
    write_contour_csv(out / "contour.csv", threshold_contours(xs, ys, G, fld.threshold))
    return [out / "field.csv", out / "contour.csv"]


def _fmt(v: float) -> str:
    return f"{v:.9f}" if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _svg(log: SimLog) -> str:
    scale = 100.0
    xmin, ymin, xmax, ymax = log.scenario.grid.bounds
    w, h = (xmax - xmin) * scale, (ymax - ymin) * scale

    def pt(x, y):
        return f"{(x - xmin) * scale:.1f},{(ymax - y) * scale:.1f}"

    def poly(p, style):
        return f'<polygon points="{" ".join(pt(x, y) for x, y in p.vertices)}" style="{style}"/>'

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0f}" height="{h:.0f}" '
             f'viewBox="0 0 {w:.1f} {h:.1f}">',
             f'<rect width="{w:.1f}" height="{h:.1f}" fill="white"/>']
    parts += [poly(p, "fill:none;stroke:red;stroke-width:2") for p in log.inflated]
    parts += [poly(p, "fill:gray;stroke:black;stroke-width:1") for p in log.polygons]
    ref = " ".join(pt(x, y) for x, y in log.scenario.reference)
    parts.append(f'<polyline points="{ref}" style="fill:none;stroke:green;stroke-width:2;stroke-dasharray:6,4"/>')
    traj = " ".join(pt(x, y) for x, y in log.positions)
    parts.append(f'<polyline points="{traj}" style="fill:none;stroke:blue;stroke-width:2"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_artifacts(log: SimLog, out_dir: Path | str) -> list[Path]:
    """Write trajectory.csv, field.csv, contour.csv, summary.txt and plot.svg."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    paths = []
    traj = out / "trajectory.csv"
    with open(traj, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("cycle,x,y,theta,v,omega,g,min_dist,solve_time\n")
        for r in log.records:
            s = r.state
            fh.write(",".join([str(r.cycle), _fmt(s.px), _fmt(s.py), _fmt(s.theta), _fmt(s.v), _fmt(s.omega),
                               f"{r.g:.9g}", _fmt(r.min_dist), f"{r.solve_time:.6f}"]) + "\n")
    paths.append(traj)
    paths += write_field_artifacts(log.scenario, out)

    times = log.solve_times
    pct = {q: (float(np.percentile(times, q)) if len(times) else 0.0) for q in (50, 90, 99)}
    dists = [r.min_dist for r in log.records]
    summary = out / "summary.txt"
    lines = [
        f"outcome {log.outcome}",
        f"cycles {len(log.records) - 1}",
        f"final_position {log.records[-1].state.px:.6f} {log.records[-1].state.py:.6f}",
        f"min_clearance {_fmt(min(dists))}",
        f"max_g {max(r.g for r in log.records):.9g}",
        f"fallback_cycles {sum(r.status == 'infeasible_fallback' for r in log.records)}",
        f"total_time {float(times.sum()) if len(times) else 0.0:.6f}",
        f"cycle_time_p50 {pct[50]:.6f}",
        f"cycle_time_p90 {pct[90]:.6f}",
        f"cycle_time_p99 {pct[99]:.6f}",
    ]
    summary.write_text("\n".join(lines) + "\n", encoding="utf-8")
    paths.append(summary)
    plot = out / "plot.svg"
    plot.write_text(_svg(log), encoding="utf-8")
    paths.append(plot)
    return paths


def write_extracted(grid: OccupancyGrid, out_dir: Path | str, occupied_threshold: int = DEFAULT_OCCUPIED_THRESHOLD) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "polygons.txt"
    path.write_text(write_polygons(extract_polygons(grid, occupied_threshold)), encoding="utf-8")
    return path


def make_corner_grid(resolution: float = 0.05) -> OccupancyGrid:
    """Corridor turning left around an inner corner; every wall is its own obstacle."""
    from .gridmap import grid_from_array

    origin = (-1.0, -1.0)
    width, height = int(round(6.0 / resolution)), int(round(6.5 / resolution))
    occ = np.zeros((height, width), dtype=np.uint8)

    def fill(x0, x1, y0, y1):
        c0, c1 = int(round((x0 - origin[0]) / resolution)), int(round((x1 - origin[0]) / resolution))
        r0, r1 = int(round((y0 - origin[1]) / resolution)), int(round((y1 - origin[1]) / resolution))
        occ[r0:r1, c0:c1] = 100

    fill(1.0, 3.0, 1.0, 1.2)     # inner wall, south face
    fill(2.8, 3.0, 1.3, 5.5)     # inner wall, east face
    fill(-1.0, 4.3, -0.6, -0.4)  # south wall
    fill(4.4, 4.6, -0.3, 5.5)    # east wall
    return grid_from_array(occ, resolution, origin)
