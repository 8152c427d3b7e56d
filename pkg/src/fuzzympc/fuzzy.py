"""Smooth obstacle field built from polygons with fuzzy AND/OR.

Each half-space statement ``b - a @ p >= 0`` is fuzzified with a sigmoid of
slope ``c``; the statements of one polygon are joined with a product (AND)
and the polygons with a plain sum (OR)::

    g(p) = sum_s c_s * prod_r ((1 - d_sr) + d_sr * sig(c * (b_sr - a_sr @ p)))

``c_s`` and ``d_sr`` are 0/1 activation flags so the problem dimensions
(``max_obstacles`` x ``max_edges``) stay fixed while the number of obstacles
and edges changes.  A position is allowed when ``g(p) < threshold``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from ._validation import check_points, check_positive, check_position
from .polygon import ConvexPolygon, build_halfspaces, distance_to_polygon

logger = logging.getLogger(__name__)


def sigmoid(x):
    """Logistic function ``1 / (1 + exp(-x))`` without overflow.

    Accepts scalars or arrays.  Negative arguments use the equivalent form
    ``exp(x) / (1 + exp(x))``.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FuzzyParams:
    c: float = 7.0
    max_obstacles: int = 3
    max_edges: int = 8
    threshold: float = 0.25

    def __post_init__(self):
        check_positive(self.c, "c")
        if self.max_obstacles < 0:
            raise ValueError("max_obstacles must be >= 0")
        if self.max_edges < 3:
            raise ValueError("max_edges must be >= 3")
        if not 0.0 < self.threshold <= 0.5:
            raise ValueError(f"threshold must lie in (0, 0.5], got {self.threshold}")


class FieldEvaluation(NamedTuple):
    value: float
    gradient: np.ndarray


def reduce_vertices(poly: ConvexPolygon, max_edges: int) -> ConvexPolygon:
    """Approximate a polygon with more than ``max_edges`` edges by one that fits.

    Vertices are dropped greedily, each time removing the one whose removal
    loses the least area.  The reduced polygon lies inside the original, so
    its edges are pushed out by the largest distance from a dropped vertex to
    the reduced polygon; the result covers the original.
    """
    if poly.n_vertices <= max_edges:
        return poly
    from .preprocessing import offset_edges

    pts = [np.asarray(v) for v in poly.vertices]
    while len(pts) > max_edges:
        n = len(pts)
        losses = []
        for i in range(n):
            a, v, b = pts[i - 1], pts[i], pts[(i + 1) % n]
            losses.append(abs((v[0] - a[0]) * (b[1] - a[1]) - (v[1] - a[1]) * (b[0] - a[0])))
        pts.pop(int(np.argmin(losses)))
    reduced = build_halfspaces(np.array(pts))
    gap = float(np.max(distance_to_polygon(reduced, poly.vertices)))
    return offset_edges(reduced, max(gap, 0.0))


class FuzzyObstacleField(BaseEstimator):
    """Fixed-size fuzzy obstacle field ``g(p)`` with analytic gradient.

    Parameters
    ----------
    c : float
        Sigmoid slope in 1/m; the transition band is roughly ``1/c`` wide.
    max_obstacles : int
        Number of obstacle slots.  With more polygons, the nearest ones to
        the robot are loaded.
    max_edges : int
        Number of edge slots per obstacle.
    threshold : float
        Positions with ``g(p) < threshold`` are allowed.

    Attributes
    ----------
    normals_ : ndarray of shape (max_obstacles, max_edges, 2)
    offsets_ : ndarray of shape (max_obstacles, max_edges)
    obstacle_active_ : ndarray of shape (max_obstacles,), 0.0 or 1.0
    edge_active_ : ndarray of shape (max_obstacles, max_edges), 0.0 or 1.0
    polygons_ : list of ConvexPolygon
        The polygons occupying the active slots, in slot order.
    """

    def __init__(self, c=7.0, max_obstacles=3, max_edges=8, threshold=0.25):
        self.c = c
        self.max_obstacles = max_obstacles
        self.max_edges = max_edges
        self.threshold = threshold

    @property
    def params(self) -> FuzzyParams:
        return FuzzyParams(self.c, self.max_obstacles, self.max_edges, self.threshold)

    def fit(self, polygons: Sequence[ConvexPolygon], robot_position=None):
        """Load polygons into the slots.

        When there are more polygons than slots, the ones with the smallest
        vertex distance to ``robot_position`` are kept (ties keep input
        order).  Loaded slots are filled nearest first.
        """
        prm = self.params
        O, V = prm.max_obstacles, prm.max_edges
        polygons = list(polygons)
        if robot_position is not None:
            robot = check_position(robot_position)
            dist = [float(np.min(np.hypot(*(p.vertices - robot).T))) for p in polygons]
            order = sorted(range(len(polygons)), key=lambda i: (dist[i], i))
        else:
            order = list(range(len(polygons)))
        chosen = [reduce_vertices(polygons[i], V) for i in order[:O]]

        normals = np.zeros((O, V, 2))
        offsets = np.zeros((O, V))
        obstacle_active = np.zeros(O)
        edge_active = np.zeros((O, V))
        for s, poly in enumerate(chosen):
            k = poly.n_vertices
            normals[s, :k] = poly.normals
            offsets[s, :k] = poly.offsets
            edge_active[s, :k] = 1.0
            obstacle_active[s] = 1.0
        self.normals_ = normals
        self.offsets_ = offsets
        self.obstacle_active_ = obstacle_active
        self.edge_active_ = edge_active
        self.polygons_ = chosen
        if len(polygons) > O:
            logger.debug("kept %d of %d polygons", O, len(polygons))
        return self

    def _terms(self, P: np.ndarray, with_gradient: bool):
        check_is_fitted(self, "normals_")
        c = float(self.c)
        n = len(P)
        O, V = self.offsets_.shape
        value = np.zeros(n)
        grad = np.zeros((n, 2)) if with_gradient else None
        if O == 0:
            return value, grad
        # z[k, s, r] = c * (b_sr - a_sr . p_k)
        z = c * (self.offsets_[None] - (P[:, 0, None, None] * self.normals_[None, :, :, 0]
                                          + P[:, 1, None, None] * self.normals_[None, :, :, 1]))
        d = self.edge_active_[None]
        factor = (1.0 - d) + d * sigmoid(z)
        if with_gradient:
            # d factor / dp = d * sig(z) * sig(-z) * c * (-a); sig(-z) avoids 1 - sig(z) cancellation
            slope = d * sigmoid(z) * sigmoid(-z) * c
            dfactor = -slope[..., None] * self.normals_[None]
            prefix = np.ones((n, O, V + 1))
            suffix = np.ones((n, O, V + 1))
            for r in range(V):
                prefix[:, :, r + 1] = prefix[:, :, r] * factor[:, :, r]
            for r in range(V - 1, -1, -1):
                suffix[:, :, r] = suffix[:, :, r + 1] * factor[:, :, r]
            prod = prefix[:, :, V]
            others = prefix[:, :, :V] * suffix[:, :, 1:]
            dprod = np.zeros((n, O, 2))
            for r in range(V):
                dprod += others[:, :, r, None] * dfactor[:, :, r]
        else:
            prod = np.ones((n, O))
            for r in range(V):
                prod = prod * factor[:, :, r]
        for s in range(O):
            value = value + self.obstacle_active_[s] * prod[:, s]
            if with_gradient:
                grad = grad + self.obstacle_active_[s] * dprod[:, s]
        return value, grad

    def decision_function(self, points) -> np.ndarray:
        """``g`` at each row of ``points``."""
        return self._terms(check_points(points), with_gradient=False)[0]

    def value_and_gradient(self, points) -> tuple[np.ndarray, np.ndarray]:
        return self._terms(check_points(points), with_gradient=True)

    def evaluate(self, p) -> FieldEvaluation:
        value, grad = self._terms(check_position(p)[None], with_gradient=True)
        return FieldEvaluation(float(value[0]), grad[0])

    def predict(self, points) -> np.ndarray:
        """Boolean mask of allowed points, ``g(p) < threshold``."""
        return self.decision_function(points) < self.threshold

    def is_allowed(self, p) -> bool:
        return bool(self.predict(check_position(p)[None])[0])


def load_polygons(field: FuzzyObstacleField, polygons, robot_position) -> FuzzyObstacleField:
    """Return a new field with ``polygons`` loaded; ``field`` is left untouched."""
    return clone(field).fit(polygons, robot_position)


def evaluate(field: FuzzyObstacleField, p) -> FieldEvaluation:
    return field.evaluate(p)


def is_allowed(field: FuzzyObstacleField, p) -> bool:
    return field.is_allowed(p)


def sample_field(field: FuzzyObstacleField, bounds, step: float):
    """Sample ``g`` on a regular grid.

    Returns ``(xs, ys, G)`` with ``G[j, i] = g(xs[i], ys[j])``.
    """
    xmin, ymin, xmax, ymax = bounds
    xs = np.arange(xmin, xmax + 0.5 * step, step)
    ys = np.arange(ymin, ymax + 0.5 * step, step)
    X, Y = np.meshgrid(xs, ys)
    G = field.decision_function(np.column_stack([X.ravel(), Y.ravel()])).reshape(X.shape)
    return xs, ys, G


def threshold_contours(xs, ys, G, level: float) -> list[np.ndarray]:
    """Polylines of the ``g = level`` iso-contour in world coordinates."""
    from skimage.measure import find_contours

    if G.shape[0] < 2 or G.shape[1] < 2 or not (G.min() < level < G.max()):
        return []
    out = []
    for c in find_contours(G, level):
        rows, cols = c[:, 0], c[:, 1]
        out.append(np.column_stack([np.interp(cols, np.arange(len(xs)), xs),
                                    np.interp(rows, np.arange(len(ys)), ys)]))
    return out


def write_field_csv(path, xs, ys, G) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,g\n")
        for j, y in enumerate(ys):
            for i, x in enumerate(xs):
                fh.write(f"{float(x):.6f},{float(y):.6f},{float(G[j, i]):.12g}\n")


def write_contour_csv(path, contours) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("contour,x,y\n")
        for k, line in enumerate(contours):
            for x, y in line:
                fh.write(f"{k},{x:.6f},{y:.6f}\n")
