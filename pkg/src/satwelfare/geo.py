"""Coordinates, distances, grid cells and pixel-polygon geometry.

Pixel polygons live in the coordinate frame of a Web Mercator image tile:
``x`` grows east, ``y`` grows south, and the origin is the tile's top-left
corner. The tile is georeferenced by its center and zoom level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EARTH_RADIUS_M = 6_371_000.0
# Ground meters per pixel at the equator for zoom 0 (256 px world).
MERCATOR_M_PER_PX_Z0 = 156543.03392
TILE_PX = 256

# Relative distance below which a coordinate is treated as lying on a grid line.
_BOUNDARY_EPS = 1e-9


class GeometryError(ValueError):
    """Raised for degenerate or invalid polygon geometry."""


class ConfigurationError(ValueError):
    """Raised for invalid numeric parameters such as a non-positive resolution."""


@dataclass(frozen=True)
class GeoPoint:
    lon: float
    lat: float

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"non-finite coordinate ({self.lon}, {self.lat})")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")


@dataclass(frozen=True)
class CellId:
    col: int
    row: int
    res: float

    @property
    def center(self) -> GeoPoint:
        return GeoPoint((self.col + 0.5) * self.res, (self.row + 0.5) * self.res)


# ---------------------------------------------------------------------------
# distances


def haversine(lon1, lat1, lon2, lat2):
    """Great-circle distance in meters; broadcasts over numpy arrays."""
    lon1, lat1, lon2, lat2 = (np.radians(np.asarray(v, dtype=float))
                              for v in (lon1, lat1, lon2, lat2))
    s_lat = np.sin((lat2 - lat1) / 2.0)
    s_lon = np.sin((lon2 - lon1) / 2.0)
    h = s_lat * s_lat + np.cos(lat1) * np.cos(lat2) * s_lon * s_lon
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in meters."""
    return float(haversine(a.lon, a.lat, b.lon, b.lat))


def unit_vectors(lon, lat) -> np.ndarray:
    """Points on the unit sphere, shape (n, 3).

    Euclidean (chord) distance between unit vectors is a monotone function of
    great-circle distance, so a k-d tree over these answers haversine
    neighbour queries.
    """
    lon = np.radians(np.asarray(lon, dtype=float))
    lat = np.radians(np.asarray(lat, dtype=float))
    cl = np.cos(lat)
    return np.column_stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)])


def chord_for_distance(meters: float) -> float:
    """Unit-sphere chord length equivalent to a great-circle distance."""
    return 2.0 * math.sin(min(meters / (2.0 * EARTH_RADIUS_M), math.pi / 2))


# ---------------------------------------------------------------------------
# grid cells


def _floor_index(q: np.ndarray) -> np.ndarray:
    r = np.rint(q)
    on_line = np.abs(q - r) <= _BOUNDARY_EPS * np.maximum(1.0, np.abs(q))
    return np.where(on_line, r, np.floor(q)).astype(np.int64)


def cell_indices(lon, lat, res: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`cell_index`; returns ``(cols, rows)``."""
    if not res > 0:
        raise ConfigurationError(f"grid resolution must be positive, got {res}")
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    return _floor_index(lon / res), _floor_index(lat / res)


def cell_index(p: GeoPoint, res: float) -> CellId:
    """Grid cell containing ``p``.

    Cells are half-open: the west and south edges belong to the cell, the east
    and north edges to the neighbour. Points within floating-point noise of a
    grid line are snapped onto it.
    """
    cols, rows = cell_indices(p.lon, p.lat, res)
    return CellId(int(cols), int(rows), res)


def cell_centers(cols, rows, res: float) -> tuple[np.ndarray, np.ndarray]:
    return (np.asarray(cols) + 0.5) * res, (np.asarray(rows) + 0.5) * res


# ---------------------------------------------------------------------------
# Web Mercator


def meters_per_pixel_at_equator(zoom: float) -> float:
    return MERCATOR_M_PER_PX_Z0 / 2.0 ** zoom


def lonlat_to_world_px(lon, lat, zoom: float):
    """Web Mercator world pixel coordinates (origin north-west, y down)."""
    size = TILE_PX * 2.0 ** zoom
    lon = np.asarray(lon, dtype=float)
    s = np.sin(np.radians(np.asarray(lat, dtype=float)))
    x = (lon + 180.0) / 360.0 * size
    y = (0.5 - np.log((1.0 + s) / (1.0 - s)) / (4.0 * math.pi)) * size
    return x, y


def world_px_to_lonlat(x, y, zoom: float):
    size = TILE_PX * 2.0 ** zoom
    lon = np.asarray(x, dtype=float) / size * 360.0 - 180.0
    lat = np.degrees(np.arctan(np.sinh(math.pi * (1.0 - 2.0 * np.asarray(y, dtype=float) / size))))
    return lon, lat


# ---------------------------------------------------------------------------
# polygons


def signed_area(ring: Sequence[tuple[float, float]]) -> float:
    """Shoelace area; positive for counter-clockwise rings in a y-up frame."""
    n = len(ring)
    s = 0.0
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def ring_centroid(ring: Sequence[tuple[float, float]]) -> tuple[float, float]:
    n = len(ring)
    a = cx = cy = 0.0
    for i in range(n):
        x0, y0 = ring[i]
        x1, y1 = ring[(i + 1) % n]
        cross = x0 * y1 - x1 * y0
        a += cross
        cx += (x0 + x1) * cross
        cy += (y0 + y1) * cross
    if a == 0.0:
        raise GeometryError("zero-area ring has no centroid")
    return cx / (3.0 * a), cy / (3.0 * a)


@dataclass(frozen=True)
class PixelPolygon:
    """A polygon in tile pixel coordinates plus the tile's georeference.

    ``zoom`` may be fractional; integer zooms are what imagery providers serve.
    """

    ring: tuple[tuple[float, float], ...]
    tile_lon: float
    tile_lat: float
    zoom: float
    width: int = 640
    height: int = 640

    def __post_init__(self):
        ring = tuple((float(x), float(y)) for x, y in self.ring)
        if len(ring) >= 2 and ring[0] == ring[-1]:
            ring = ring[:-1]
        object.__setattr__(self, "ring", ring)
        if len(ring) < 3:
            raise GeometryError(f"ring has {len(ring)} vertices, need at least 3")
        # a sum is finite only if every term is (barring overflow, also rejected)
        if not math.isfinite(math.fsum(v for xy in ring for v in xy)):
            raise GeometryError("ring has non-finite vertices")
        if signed_area(ring) == 0.0:
            raise GeometryError("ring has zero area")

    @property
    def meters_per_pixel_at_equator(self) -> float:
        return meters_per_pixel_at_equator(self.zoom)

    def with_ring(self, ring) -> "PixelPolygon":
        return PixelPolygon(tuple(ring), self.tile_lon, self.tile_lat, self.zoom,
                            self.width, self.height)

    def pixel_to_lonlat(self, x, y):
        cx, cy = lonlat_to_world_px(self.tile_lon, self.tile_lat, self.zoom)
        return world_px_to_lonlat(cx + (np.asarray(x) - self.width / 2.0),
                                  cy + (np.asarray(y) - self.height / 2.0), self.zoom)

    @classmethod
    def from_lonlat_ring(cls, ring, zoom: float = 19, width: int = 640,
                         height: int = 640) -> "PixelPolygon":
        """Project a degree-space ring into a tile centred on its bounding box."""
        pts = np.asarray(ring, dtype=float)
        wx, wy = lonlat_to_world_px(pts[:, 0], pts[:, 1], zoom)
        cx = 0.5 * (wx.min() + wx.max())
        cy = 0.5 * (wy.min() + wy.max())
        tile_lon, tile_lat = world_px_to_lonlat(cx, cy, zoom)
        px = wx - cx + width / 2.0
        py = wy - cy + height / 2.0
        return cls(tuple(zip(px.tolist(), py.tolist())), float(tile_lon), float(tile_lat),
                   zoom, width, height)


def _segment_distance(px, py, ax, ay, bx, by) -> float:
    dx = bx - ax
    dy = by - ay
    L2 = dx * dx + dy * dy
    if L2 == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / L2
    t = 0.0 if t < 0.0 else (1.0 if t > 1.0 else t)
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _dp_chain(pts, first: int, last: int, tol: float, keep: list[bool]) -> None:
    stack = [(first, last)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        ax, ay = pts[i]
        bx, by = pts[j]
        dmax = -1.0
        idx = -1
        for k in range(i + 1, j):
            d = _segment_distance(pts[k][0], pts[k][1], ax, ay, bx, by)
            if d > dmax:
                dmax = d
                idx = k
        if dmax > tol:
            keep[idx] = True
            stack.append((idx, j))
            stack.append((i, idx))


def simplify_ring(ring: Sequence[tuple[float, float]], tolerance: float = 3.0):
    """Douglas-Peucker on a closed ring (closure implicit).

    The ring is split at vertex 0 and the vertex farthest from it; each chain is
    simplified independently. Returns the kept vertices in their original
    order. Vertices are dropped only when within ``tolerance`` of the replacing
    segment, so the result is within ``tolerance`` (Hausdorff) of the input.
    """
    pts = list(ring)
    n = len(pts)
    if n <= 3:
        return pts
    x0, y0 = pts[0]
    far = 0
    dfar = -1.0
    for k in range(1, n):
        d = math.hypot(pts[k][0] - x0, pts[k][1] - y0)
        if d > dfar:
            dfar = d
            far = k
    ext = pts + [pts[0]]
    keep = [False] * (n + 1)
    keep[0] = keep[far] = keep[n] = True
    _dp_chain(ext, 0, far, tolerance, keep)
    _dp_chain(ext, far, n, tolerance, keep)
    return [pts[k] for k in range(n) if keep[k]]


def simplify_polygon(poly: PixelPolygon, tolerance: float = 3.0) -> PixelPolygon:
    """Douglas-Peucker simplification with a pixel tolerance.

    Raises :class:`GeometryError` when fewer than three vertices (or zero
    area) survive; callers drop such polygons and count them.
    """
    out = simplify_ring(poly.ring, tolerance)
    if len(out) == len(poly.ring):
        return poly
    if len(out) < 3:
        raise GeometryError(f"simplification left {len(out)} vertices")
    if signed_area(out) == 0.0:
        raise GeometryError("simplification left a zero-area ring")
    # vertices are a validated subset, so skip re-validation
    new = object.__new__(PixelPolygon)
    for name, value in (("ring", tuple(out)), ("tile_lon", poly.tile_lon),
                        ("tile_lat", poly.tile_lat), ("zoom", poly.zoom),
                        ("width", poly.width), ("height", poly.height)):
        object.__setattr__(new, name, value)
    return new


def polygon_area_m2(poly: PixelPolygon) -> float:
    """Ground area in square meters, corrected for Web Mercator scale at the tile latitude."""
    mpp = poly.meters_per_pixel_at_equator
    c = math.cos(math.radians(poly.tile_lat))
    area = abs(signed_area(poly.ring)) * mpp * mpp * c * c
    if not area > 0.0:
        raise GeometryError("zero-area polygon")
    return area


def tile_pixels_to_lonlat(tile_lon, tile_lat, zoom, width, height, x, y):
    """Vectorized pixel-to-degree conversion for points on (possibly different) tiles."""
    zoom = np.asarray(zoom, dtype=float)
    cx, cy = lonlat_to_world_px(tile_lon, tile_lat, zoom)
    return world_px_to_lonlat(cx + (np.asarray(x, dtype=float) - np.asarray(width) / 2.0),
                              cy + (np.asarray(y, dtype=float) - np.asarray(height) / 2.0), zoom)


def polygon_centroid(poly: PixelPolygon) -> GeoPoint:
    """Area-weighted centroid, converted to degrees through the tile georeference."""
    cx, cy = ring_centroid(poly.ring)
    lon, lat = poly.pixel_to_lonlat(cx, cy)
    return GeoPoint(float(lon), float(lat))
