"""Smooth polygonal obstacle constraints for MPC trajectory planning.

Occupancy grids are turned into convex polygons, the polygons into a single
smooth function ``g(p)`` via sigmoid memberships with product-AND and
sum-OR, and ``g(p) < threshold`` is used as a soft constraint in a
receding-horizon planner.
"""
from .fuzzy import FieldEvaluation, FuzzyObstacleField, FuzzyParams, evaluate, is_allowed, load_polygons, sigmoid
from .gridmap import OccupancyGrid, ObstacleCluster, PolygonExtractor, cluster_to_polygon, extract_clusters, parse_grid
from .planner import (ControlInput, MPCPlanner, MPCProblem, PlannerConfig, PlanResult, RobotState, build_problem,
                      plan_cycle, solve, step_dynamics)
from .polygon import ConvexPolygon, PolygonError, build_halfspaces, canonicalize, contains, signed_edge_distance
from .preprocessing import InflationConfig, PolygonInflater, inflate, preprocess_all, split_sharp_vertex
from .sim import Scenario, SimLog, emit_artifacts, load_scenario, run_scenario

__version__ = "0.1.0"

__all__ = [
    "ConvexPolygon", "PolygonError", "build_halfspaces", "canonicalize", "contains", "signed_edge_distance",
    "FuzzyParams", "FuzzyObstacleField", "FieldEvaluation", "sigmoid", "load_polygons", "evaluate", "is_allowed",
    "InflationConfig", "PolygonInflater", "inflate", "split_sharp_vertex", "preprocess_all",
    "OccupancyGrid", "ObstacleCluster", "PolygonExtractor", "parse_grid", "extract_clusters", "cluster_to_polygon",
    "RobotState", "ControlInput", "PlannerConfig", "PlanResult", "MPCProblem", "MPCPlanner", "step_dynamics",
    "build_problem", "solve", "plan_cycle",
    "Scenario", "SimLog", "load_scenario", "run_scenario", "emit_artifacts",
]
