import math

import numpy as np
import pytest
from scipy.spatial import ConvexHull

from fuzzympc.polygon import build_halfspaces


def random_hull(rng, n_points=8, center=(0.0, 0.0), scale=1.0):
    """Convex hull of a random point cloud (scipy gives CCW order in 2D)."""
    while True:
        pts = rng.uniform(-1, 1, size=(n_points, 2)) * scale + np.asarray(center)
        hull = ConvexHull(pts)
        verts = pts[hull.vertices]
        try:
            return build_halfspaces(verts)
        except ValueError:
            continue


def round_polygon(rng, n_vertices, radius, center=(0.0, 0.0), min_angle_deg=60.0, min_edge=0.0,
                  max_angle_deg=180.0):
    """Polygon with vertices on a circle, interior angles >= ``min_angle_deg``."""
    # a triangle cannot have every angle >= 60 degrees unless equilateral
    min_angle = math.radians(min(min_angle_deg, 180.0 * (n_vertices - 2) / n_vertices - 15.0))
    while True:
        gaps = rng.dirichlet(np.full(n_vertices, 4.0)) * 2 * math.pi
        # interior angle at a vertex on a circle is pi - (gap_prev + gap_next) / 2
        interior = math.pi - (gaps + np.roll(gaps, 1)) / 2
        if interior.min() < min_angle or interior.max() > math.radians(max_angle_deg) or gaps.max() >= math.pi:
            continue
        ang = rng.uniform(0, 2 * math.pi) + np.concatenate([[0.0], np.cumsum(gaps[:-1])])
        pts = np.column_stack([np.cos(ang), np.sin(ang)]) * radius + np.asarray(center)
        edges = np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)
        if edges.min() < min_edge:
            continue
        return build_halfspaces(pts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_square():
    return build_halfspaces([(0, 0), (1, 0), (1, 1), (0, 1)])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
