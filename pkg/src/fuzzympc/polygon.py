"""Convex polygons represented as intersections of normalized half-spaces.

A polygon is stored as its counterclockwise vertex list together with one
row ``(a, b)`` per edge.  A point ``p`` lies inside the polygon iff
``b - a @ p >= 0`` for every row, and because every ``a`` has unit length
``b - a @ p`` is the signed distance from ``p`` to the edge line (positive
on the interior side).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ALGEBRA_TOL = 1e-12
INVARIANT_TOL = 1e-9


class PolygonError(ValueError):
    """Raised for vertex lists that do not describe a valid convex CCW polygon."""


def _as_vertices(vertices) -> np.ndarray:
    pts = np.asarray(vertices, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise PolygonError(f"expected an (n, 2) vertex array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise PolygonError("vertex coordinates must be finite")
    return pts


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def raw_halfspaces(vertices) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized edge rows for a CCW vertex list.

    Edge ``r`` runs from vertex ``r`` to vertex ``r + 1`` (wrapping) and gives
    ``a_r = (dy, -dx)`` and ``b_r = x_r * dy - y_r * dx``.
    """
    pts = _as_vertices(vertices)
    delta = np.roll(pts, -1, axis=0) - pts
    A = np.column_stack([delta[:, 1], -delta[:, 0]])
    b = pts[:, 0] * delta[:, 1] - pts[:, 1] * delta[:, 0]
    return A, b


def normalize_rows(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale each row so that ``||a||_2 = 1``."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    norms = np.hypot(A[:, 0], A[:, 1])
    if np.any(norms <= 0.0):
        raise PolygonError("cannot normalize a zero-length row")
    return A / norms[:, None], b / norms


def _check_convex_ccw(pts: np.ndarray) -> None:
    n = len(pts)
    if n < 3:
        raise PolygonError(f"a polygon needs at least 3 vertices, got {n}")
    edges = np.roll(pts, -1, axis=0) - pts
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    if np.any(lengths <= ALGEBRA_TOL):
        raise PolygonError("zero-length edge (repeated consecutive vertex)")
    nxt = np.roll(edges, -1, axis=0)
    turns = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    # relative test so the collinearity check does not depend on scale
    scale = lengths * np.roll(lengths, -1)
    rel = turns / scale
    if np.any(np.abs(rel) <= ALGEBRA_TOL):
        raise PolygonError("degenerate (collinear) vertex triple")
    if np.any(rel < 0):
        if np.all(rel < 0):
            raise PolygonError("vertices are in clockwise order")
        raise PolygonError("polygon is not convex")
    # a star polygon turns left everywhere but winds more than once
    winding = np.sum(np.arctan2(turns, np.sum(edges * nxt, axis=1)))
    if winding > 2 * math.pi + 1e-6:
        raise PolygonError("polygon is self-intersecting")


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Convex polygon with CCW vertices and unit-normal edge rows.

    ``normals[r]`` and ``offsets[r]`` describe the edge from ``vertices[r]``
    to ``vertices[r + 1]``.
    """

    vertices: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        for arr in (self.vertices, self.normals, self.offsets):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def centroid(self) -> np.ndarray:
        """Area centroid (shoelace formula)."""
        pts = self.vertices
        nxt = np.roll(pts, -1, axis=0)
        cross = pts[:, 0] * nxt[:, 1] - nxt[:, 0] * pts[:, 1]
        area = cross.sum() / 2.0
        cx = np.sum((pts[:, 0] + nxt[:, 0]) * cross) / (6.0 * area)
        cy = np.sum((pts[:, 1] + nxt[:, 1]) * cross) / (6.0 * area)
        return np.array([cx, cy])

    @property
    def area(self) -> float:
        pts = self.vertices
        nxt = np.roll(pts, -1, axis=0)
        return float(np.sum(pts[:, 0] * nxt[:, 1] - nxt[:, 0] * pts[:, 1]) / 2.0)

    def slack(self, points) -> np.ndarray:
        """Signed edge distances ``b - A p``, shape ``(n_points, n_edges)``."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        return self.offsets[None, :] - P @ self.normals.T

    def __eq__(self, other):
        if not isinstance(other, ConvexPolygon):
            return NotImplemented
        return np.array_equal(self.vertices, other.vertices)

    def __hash__(self):
        return hash(self.vertices.tobytes())

    def __repr__(self):
        return f"ConvexPolygon({format_polygon(self)!r})"


def build_halfspaces(vertices) -> ConvexPolygon:
    """Build the normalized half-space description of a CCW convex polygon.

    Raises
    ------
    PolygonError
        For fewer than 3 vertices, clockwise or non-convex input, zero-length
        edges or collinear vertex triples.
    """
    pts = _as_vertices(vertices).copy()
    _check_convex_ccw(pts)
    A, b = normalize_rows(*raw_halfspaces(pts))
    return ConvexPolygon(pts, A, b)


def canonicalize(vertices) -> ConvexPolygon:
    """Accept either orientation; clockwise input is reversed.

    Repeated consecutive vertices are dropped.  Self-intersecting or
    non-convex input is still rejected.
    """
    pts = _as_vertices(vertices)
    keep = [p for i, p in enumerate(pts) if i == 0 or not np.array_equal(p, pts[i - 1])]
    if len(keep) > 1 and np.array_equal(keep[0], keep[-1]):
        keep.pop()
    pts = np.array(keep)
    if len(pts) >= 3:
        signed_area = np.sum(pts[:, 0] * np.roll(pts[:, 1], -1) - np.roll(pts[:, 0], -1) * pts[:, 1])
        if signed_area < 0:
            pts = pts[::-1].copy()
    return build_halfspaces(pts)


def signed_edge_distance(poly: ConvexPolygon, edge_index: int, p) -> float:
    """Signed distance from ``p`` to the line through edge ``edge_index``.

    Positive on the interior side of the edge.
    """
    if not 0 <= edge_index < poly.n_vertices:
        raise IndexError(f"edge index {edge_index} out of range for {poly.n_vertices} edges")
    p = np.asarray(p, dtype=float)
    return float(poly.offsets[edge_index] - poly.normals[edge_index] @ p)


def contains(poly: ConvexPolygon, p) -> bool:
    """Crisp membership test, boundary included."""
    return bool(np.all(poly.slack(p)[0] >= 0.0))


def contains_points(poly: ConvexPolygon, points) -> np.ndarray:
    return np.all(poly.slack(points) >= 0.0, axis=1)


def point_segment_distance(p, a, b) -> float:
    p, a, b = (np.asarray(v, dtype=float) for v in (p, a, b))
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.hypot(*(p - (a + t * ab))))


def distance_to_polygon(poly: ConvexPolygon, points) -> np.ndarray:
    """Brute-force signed Euclidean distance from points to the polygon.

    Positive outside, negative inside.  Computed from the closest point on
    every boundary segment; it does not use the half-space rows except for
    the inside test, so it serves as an oracle for the fuzzy field and for
    inflation.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    a = poly.vertices
    b = np.roll(a, -1, axis=0)
    ab = b - a  # (m, 2)
    ap = P[:, None, :] - a[None, :, :]  # (n, m, 2)
    t = np.clip(np.sum(ap * ab[None], axis=2) / np.sum(ab * ab, axis=1)[None], 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    d = np.min(np.hypot(*(P[:, None, :] - closest).transpose(2, 0, 1)), axis=1)
    # inside test by winding of cross products (independent of stored rows)
    cross = ab[None, :, 0] * ap[..., 1] - ab[None, :, 1] * ap[..., 0]
    inside = np.all(cross >= 0.0, axis=1)
    return np.where(inside, -d, d)


def min_vertex_distance(poly: ConvexPolygon) -> float:
    """Smallest pairwise distance between the vertices of one polygon."""
    pts = poly.vertices
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.hypot(diff[..., 0], diff[..., 1])
    return float(np.min(d[np.triu_indices(len(pts), k=1)]))


def format_polygon(poly: ConvexPolygon | np.ndarray) -> str:
    """Serialize to the ``poly: x1,y1 x2,y2 ...`` text form."""
    pts = poly.vertices if isinstance(poly, ConvexPolygon) else np.asarray(poly)
    return "poly: " + " ".join(f"{float(x)!r},{float(y)!r}" for x, y in pts)


def parse_polygon(line: str) -> ConvexPolygon:
    line = line.strip()
    if not line.startswith("poly:"):
        raise PolygonError(f"polygon record must start with 'poly:': {line!r}")
    pts = []
    for token in line[len("poly:"):].split():
        try:
            x, y = token.split(",")
            pts.append((float(x), float(y)))
        except ValueError as exc:
            raise PolygonError(f"bad vertex token {token!r}") from exc
    return build_halfspaces(pts)


def write_polygons(polys: Iterable[ConvexPolygon]) -> str:
    return "".join(format_polygon(p) + "\n" for p in polys)


def read_polygons(text: str) -> list[ConvexPolygon]:
    return [parse_polygon(line) for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]


def bounding_box(polys: Sequence[ConvexPolygon]) -> tuple[float, float, float, float]:
    pts = np.vstack([p.vertices for p in polys])
    return float(pts[:, 0].min()), float(pts[:, 1].min()), float(pts[:, 0].max()), float(pts[:, 1].max())
