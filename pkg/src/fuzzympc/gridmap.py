"""Occupancy grid ingestion and per-obstacle convex hull extraction.

Map file format (UTF-8 text)::

    grid <width> <height> <resolution> <origin_x> <origin_y>
    <height rows of width integers 0-100, first row = top (max y)>

Internally ``cells[i, j]`` is row ``i`` counted from the bottom, so cell
``(0, 0)`` has its lower-left corner at ``origin``.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .polygon import ConvexPolygon, build_halfspaces, write_polygons

DEFAULT_OCCUPIED_THRESHOLD = 50
_FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


class GridParseError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    width: int
    height: int
    resolution: float
    origin: tuple[float, float]
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be > 0")
        if self.cells.shape != (self.height, self.width):
            raise ValueError(f"cells shape {self.cells.shape} does not match {self.height}x{self.width}")
        self.cells.setflags(write=False)

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return ox, oy, ox + self.width * self.resolution, oy + self.height * self.resolution

    def cell_corners(self, row: int, col: int) -> np.ndarray:
        ox, oy = self.origin
        lattice = np.array([(col, row), (col + 1, row), (col + 1, row + 1), (col, row + 1)], dtype=float)
        return np.column_stack([ox + lattice[:, 0] * self.resolution, oy + lattice[:, 1] * self.resolution])

    def cell_centers(self, indices) -> np.ndarray:
        idx = np.asarray(indices, dtype=float).reshape(-1, 2)
        ox, oy = self.origin
        return np.column_stack([ox + (idx[:, 1] + 0.5) * self.resolution,
                                oy + (idx[:, 0] + 0.5) * self.resolution])

    def occupied(self, threshold: int = DEFAULT_OCCUPIED_THRESHOLD) -> np.ndarray:
        return self.cells >= threshold


def parse_grid(data: bytes | str) -> OccupancyGrid:
    """Parse a map file.

    Raises
    ------
    GridParseError
        On a missing or malformed header, non-numeric or out-of-range cells,
        or a row/column count that disagrees with the header.
    """
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise GridParseError("empty map file")
    header = lines[0].split()
    if len(header) != 6 or header[0] != "grid":
        raise GridParseError("header must be 'grid <width> <height> <resolution> <origin_x> <origin_y>'")
    try:
        width, height = int(header[1]), int(header[2])
        resolution, ox, oy = float(header[3]), float(header[4]), float(header[5])
    except ValueError as exc:
        raise GridParseError(f"bad header field: {exc}") from exc
    if width <= 0 or height <= 0:
        raise GridParseError("grid dimensions must be positive")
    if not resolution > 0:
        raise GridParseError("resolution must be > 0")
    rows = lines[1:]
    if len(rows) != height:
        raise GridParseError(f"header declares {height} rows, found {len(rows)}")
    values = []
    for k, row in enumerate(rows):
        try:
            vals = [int(tok) for tok in row.split()]
        except ValueError as exc:
            raise GridParseError(f"row {k}: non-numeric cell") from exc
        if len(vals) != width:
            raise GridParseError(f"row {k}: expected {width} cells, found {len(vals)}")
        values.append(vals)
    cells = np.array(values, dtype=np.int64)
    if cells.min() < 0 or cells.max() > 100:
        raise GridParseError("cell values must lie in 0..100")
    return OccupancyGrid(width, height, resolution, (ox, oy), cells[::-1].astype(np.uint8))


def format_grid(grid: OccupancyGrid) -> str:
    ox, oy = grid.origin
    head = f"grid {grid.width} {grid.height} {grid.resolution!r} {float(ox)!r} {float(oy)!r}\n"
    body = "".join(" ".join(str(int(v)) for v in row) + "\n" for row in grid.cells[::-1])
    return head + body


def grid_from_array(occ: np.ndarray, resolution: float, origin=(0.0, 0.0), top_first: bool = False) -> OccupancyGrid:
    """Build a grid from a 2D array (``top_first`` for file row order)."""
    cells = np.asarray(occ, dtype=np.uint8)
    if top_first:
        cells = cells[::-1]
    return OccupancyGrid(cells.shape[1], cells.shape[0], float(resolution),
                         (float(origin[0]), float(origin[1])), cells.copy())


@dataclass(frozen=True)
class ObstacleCluster:
    cell_indices: frozenset


def extract_clusters(grid: OccupancyGrid, occupied_threshold: int = DEFAULT_OCCUPIED_THRESHOLD) -> list[ObstacleCluster]:
    """Maximal 4-connected components of occupied cells.

    Clusters are ordered by their first cell in file scan order (top row
    first, left to right).
    """
    occ_top = grid.occupied(occupied_threshold)[::-1]
    labels, count = ndimage.label(occ_top, structure=_FOUR_CONNECTED)
    clusters = []
    for lab in range(1, count + 1):
        rows, cols = np.nonzero(labels == lab)
        rows = grid.height - 1 - rows
        clusters.append(ObstacleCluster(frozenset(zip(rows.tolist(), cols.tolist()))))
    return clusters


def graham_scan(points) -> np.ndarray:
    """Convex hull in CCW order, collinear points dropped.

    Graham scan around the lowest (then leftmost) point, sorting the others
    by polar angle with exact cross-product comparisons.
    """
    pts = sorted({(float(x), float(y)) for x, y in np.asarray(points, dtype=float)}, key=lambda p: (p[1], p[0]))
    if len(pts) < 3:
        return np.array(pts)
    pivot = pts[0]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    def by_angle(a, b):
        c = cross(pivot, a, b)
        if c > 0:
            return -1
        if c < 0:
            return 1
        da = (a[0] - pivot[0]) ** 2 + (a[1] - pivot[1]) ** 2
        db = (b[0] - pivot[0]) ** 2 + (b[1] - pivot[1]) ** 2
        return -1 if da < db else (1 if da > db else 0)

    rest = sorted(pts[1:], key=functools.cmp_to_key(by_angle))
    hull = [pivot]
    for p in rest:
        while len(hull) > 1 and cross(hull[-2], hull[-1], p) <= 0:
            hull.pop()
        hull.append(p)
    # points collinear with the pivot on the closing edge
    while len(hull) > 2 and cross(hull[-2], hull[-1], pivot) <= 0:
        hull.pop()
    return np.array(hull)


def cluster_to_polygon(cluster: ObstacleCluster, grid: OccupancyGrid) -> ConvexPolygon:
    """Convex hull of the corners of every cell in the cluster."""
    if not cluster.cell_indices:
        raise ValueError("empty cluster")
    # hull on the integer corner lattice is exact; scale afterwards
    lattice = np.array([(c + dc, r + dr) for r, c in sorted(cluster.cell_indices)
                        for dc, dr in ((0, 0), (1, 0), (1, 1), (0, 1))])
    hull = graham_scan(lattice)
    ox, oy = grid.origin
    return build_halfspaces(np.column_stack([ox + hull[:, 0] * grid.resolution,
                                             oy + hull[:, 1] * grid.resolution]))


def extract_polygons(grid: OccupancyGrid, occupied_threshold: int = DEFAULT_OCCUPIED_THRESHOLD) -> list[ConvexPolygon]:
    return [cluster_to_polygon(c, grid) for c in extract_clusters(grid, occupied_threshold)]


class PolygonExtractor(TransformerMixin, BaseEstimator):
    """Grid to polygon-list transformer."""

    def __init__(self, occupied_threshold=DEFAULT_OCCUPIED_THRESHOLD):
        self.occupied_threshold = occupied_threshold

    def fit(self, X=None, y=None):
        return self

    def transform(self, X: OccupancyGrid) -> list[ConvexPolygon]:
        return extract_polygons(X, self.occupied_threshold)


def polygons_text(polys: Sequence[ConvexPolygon]) -> str:
    return write_polygons(polys)
