"""Polygon inflation by the robot radius and splitting of sharp corners."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_positive
from .polygon import ConvexPolygon, PolygonError, build_halfspaces, min_vertex_distance

logger = logging.getLogger(__name__)

MIN_COS_ALPHA = 1e-9


@dataclass(frozen=True)
class InflationConfig:
    """Settings for :func:`inflate` and :func:`split_sharp_vertex`.

    ``min_vertex_distance`` is the width of the cap that replaces a sharp
    vertex; ``None`` uses the smallest vertex spacing of the polygon being
    split.  A vertex is sharp when the cosine of its interior angle exceeds
    ``sharpness_cos_limit`` (default: interior angle below 30 degrees).
    ``safety_margin`` is added to ``robot_radius`` when shifting edges.
    """

    robot_radius: float = 0.3
    min_vertex_distance: Optional[float] = None
    sharpness_cos_limit: float = math.cos(math.radians(30.0))
    safety_margin: float = 0.05

    def __post_init__(self):
        check_positive(self.robot_radius, "robot_radius")
        if self.min_vertex_distance is not None:
            check_positive(self.min_vertex_distance, "min_vertex_distance")
        if not 0.0 < self.sharpness_cos_limit < 1.0:
            raise ValueError("sharpness_cos_limit must lie in (0, 1)")
        check_positive(self.safety_margin, "safety_margin", strict=False)

    @property
    def shift(self) -> float:
        """Total edge shift: robot radius plus safety margin."""
        return self.robot_radius + self.safety_margin


def edge_units(vertices: np.ndarray) -> np.ndarray:
    """``e[r]``: unit vector along the edge arriving at vertex ``r``."""
    delta = vertices - np.roll(vertices, 1, axis=0)
    return delta / np.hypot(delta[:, 0], delta[:, 1])[:, None]


def corner_cosines(poly: ConvexPolygon) -> np.ndarray:
    """Cosine of the interior angle at each vertex, ``e_in . (-e_out)``."""
    e_in = edge_units(poly.vertices)
    e_out = np.roll(e_in, -1, axis=0)
    return -np.sum(e_in * e_out, axis=1)


def offset_edges(poly: ConvexPolygon, distance: float) -> ConvexPolygon:
    """Move every edge outward by ``distance`` by shifting the vertices.

    Each vertex moves to ``v + d * (e_in - e_out)`` with
    ``d = distance / cos(alpha)`` and ``cos(pi/2 - alpha) = e_in . (-e_out)``.
    """
    distance = check_positive(distance, "distance", strict=False)
    e_in = edge_units(poly.vertices)
    e_out = np.roll(e_in, -1, axis=0)
    cos_interior = -np.sum(e_in * e_out, axis=1)
    alpha = math.pi / 2 - np.arccos(np.clip(cos_interior, -1.0, 1.0))
    cos_alpha = np.cos(alpha)
    if np.any(cos_alpha <= MIN_COS_ALPHA):
        raise PolygonError("vertex too sharp to inflate; split it first")
    shift = distance / cos_alpha
    return build_halfspaces(poly.vertices + shift[:, None] * (e_in - e_out))


def inflate(poly: ConvexPolygon, cfg: InflationConfig) -> ConvexPolygon:
    """Inflate by ``cfg.robot_radius + cfg.safety_margin``."""
    return offset_edges(poly, cfg.shift)


def is_sharp(poly: ConvexPolygon, vertex_index: int, cfg: InflationConfig) -> bool:
    return bool(corner_cosines(poly)[vertex_index] > cfg.sharpness_cos_limit)


def split_sharp_vertex(poly: ConvexPolygon, vertex_index: int, cfg: InflationConfig) -> ConvexPolygon:
    """Replace a sharp vertex by two points across its bisector.

    The new points sit at ``v -/+ 0.5 * d_min * o`` where ``o`` is the inward
    bisector rotated clockwise by 90 degrees.  If that would break convexity
    at a neighbour, the half-width is halved until it does not.
    Non-sharp vertices are returned unchanged with a warning.
    """
    n = poly.n_vertices
    if not 0 <= vertex_index < n:
        raise IndexError(f"vertex index {vertex_index} out of range")
    if not is_sharp(poly, vertex_index, cfg):
        warnings.warn(f"vertex {vertex_index} is not sharp; polygon left unchanged", stacklevel=2)
        return poly
    pts = poly.vertices
    e_in = edge_units(pts)
    v = pts[vertex_index]
    half = -e_in[vertex_index] + e_in[(vertex_index + 1) % n]
    half = half / np.hypot(*half)
    o = np.array([half[1], -half[0]])
    d_min = cfg.min_vertex_distance if cfg.min_vertex_distance is not None else min_vertex_distance(poly)
    width = 0.5 * d_min
    for _ in range(30):
        new = np.vstack([pts[:vertex_index], v - width * o, v + width * o, pts[vertex_index + 1:]])
        try:
            return build_halfspaces(new)
        except PolygonError:
            width *= 0.5
    raise PolygonError(f"could not split vertex {vertex_index} without breaking convexity")


def split_all_sharp(poly: ConvexPolygon, cfg: InflationConfig) -> ConvexPolygon:
    sharp = np.flatnonzero(corner_cosines(poly) > cfg.sharpness_cos_limit)
    # right to left so the remaining indices stay valid
    for idx in sharp[::-1]:
        poly = split_sharp_vertex(poly, int(idx), cfg)
    return poly


def _bbox_fallback(poly: ConvexPolygon, cfg: InflationConfig) -> ConvexPolygon:
    lo = poly.vertices.min(axis=0) - cfg.shift
    hi = poly.vertices.max(axis=0) + cfg.shift
    return build_halfspaces([(lo[0], lo[1]), (hi[0], lo[1]), (hi[0], hi[1]), (lo[0], hi[1])])


def preprocess_all(polys: Sequence[ConvexPolygon], cfg: InflationConfig) -> list[ConvexPolygon]:
    """Split sharp vertices, then inflate, for every polygon.

    A polygon that cannot be processed is replaced by its inflated bounding
    box.
    """
    out = []
    for k, poly in enumerate(polys):
        try:
            out.append(inflate(split_all_sharp(poly, cfg), cfg))
        except PolygonError as exc:
            logger.warning("polygon %d: %s; using inflated bounding box", k, exc)
            out.append(_bbox_fallback(poly, cfg))
    return out


class PolygonInflater(TransformerMixin, BaseEstimator):
    """Transformer wrapper around :func:`preprocess_all`."""

    def __init__(self, robot_radius=0.3, safety_margin=0.05, min_vertex_distance=None,
                 sharpness_cos_limit=math.cos(math.radians(30.0))):
        self.robot_radius = robot_radius
        self.safety_margin = safety_margin
        self.min_vertex_distance = min_vertex_distance
        self.sharpness_cos_limit = sharpness_cos_limit

    @property
    def config(self) -> InflationConfig:
        return InflationConfig(self.robot_radius, self.min_vertex_distance,
                               self.sharpness_cos_limit, self.safety_margin)

    def fit(self, X=None, y=None):
        self.config_ = self.config
        return self

    def transform(self, X):
        return preprocess_all(list(X), self.config)
