"""Roof material classification from representative roof colors.

Colors are projected from sRGB into CIELAB (D65) and clustered with k-means;
each cluster is then mapped to one of three roof materials.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .geo import (GeoPoint, GeometryError, polygon_area_m2, ring_centroid, simplify_polygon,
                  tile_pixels_to_lonlat)
from .ingest import BuildingFeatureRaw

MATERIALS = ("tin", "thatched", "painted")

# sRGB (D65) -> XYZ
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_D65 = np.array([0.95047, 1.00000, 1.08883])
_DELTA = 6.0 / 29.0

# default material heuristic (see default_material_map)
TIN_MIN_L = 60.0
TIN_MAX_CHROMA = 25.0
THATCH_MAX_L = 55.0
THATCH_HUE_BAND = (40.0, 100.0)


class RoofModelError(ValueError):
    pass


@dataclass(frozen=True)
class LabColor:
    L: float
    a: float
    b: float

    @property
    def chroma(self) -> float:
        return math.hypot(self.a, self.b)

    @property
    def hue_deg(self) -> float:
        return math.degrees(math.atan2(self.b, self.a)) % 360.0

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.L, self.a, self.b)


def rgb_to_lab_array(rgb) -> np.ndarray:
    """Convert an ``(..., 3)`` array of sRGB values in [0, 255] to CIELAB."""
    c = np.asarray(rgb, dtype=float) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE_D65
    f = np.where(xyz > _DELTA ** 3, np.cbrt(xyz), xyz / (3 * _DELTA ** 2) + 4.0 / 29.0)
    L = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def rgb_to_lab(rgb: Sequence[float]) -> LabColor:
    if len(rgb) != 3 or not all(0.0 <= v <= 255.0 for v in rgb):
        raise ValueError(f"rgb {tuple(rgb)} must be three channels in [0, 255]")
    L, a, b = rgb_to_lab_array(rgb).tolist()
    return LabColor(L, a, b)


# ---------------------------------------------------------------------------
# k-means


def _sq_dist(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(points, weights, k, rng) -> np.ndarray:
    idx = [int(rng.choice(len(points), p=weights / weights.sum()))]
    d2 = ((points - points[idx[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        p = weights * d2
        nxt = int(rng.choice(len(points), p=p / p.sum()))
        idx.append(nxt)
        d2 = np.minimum(d2, ((points - points[nxt]) ** 2).sum(axis=1))
    return points[idx].copy()


def weighted_kmeans(points: np.ndarray, weights: np.ndarray, k: int, seed: int,
                    max_iter: int = 300):
    """Lloyd's algorithm with k-means++ seeding on weighted points.

    An empty cluster is re-seeded at the point farthest from its current
    centroid. Returns ``(centers, labels, n_iter, wcss_history)`` where the
    history starts with the WCSS of the seeding.
    """
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(points, weights, k, rng)
    labels = np.argmin(_sq_dist(points, centers), axis=1)
    d2 = _sq_dist(points, centers)[np.arange(len(points)), labels]
    history = [float(weights @ d2)]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new = centers.copy()
        for j in range(k):
            m = labels == j
            if m.any():
                w = weights[m]
                new[j] = (w[:, None] * points[m]).sum(axis=0) / w.sum()
            else:
                far = int(np.argmax(d2))
                new[j] = points[far]
                d2[far] = 0.0
        centers = new
        dist = _sq_dist(points, centers)
        new_labels = np.argmin(dist, axis=1)
        d2 = dist[np.arange(len(points)), new_labels]
        history.append(float(weights @ d2))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels, n_iter, history


@dataclass
class RoofClusterModel:
    k: int
    centroids: list[LabColor]
    cluster_to_material: dict[int, str]
    seed: int
    n_iter: int = 0
    wcss_history: list[float] = field(default_factory=list)
    sizes: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.centroids) != self.k:
            raise RoofModelError(f"model has {len(self.centroids)} centroids, expected {self.k}")
        missing = [j for j in range(self.k) if j not in self.cluster_to_material]
        if missing:
            raise RoofModelError(f"clusters {missing} have no material")
        bad = {m for m in self.cluster_to_material.values() if m not in MATERIALS}
        if bad:
            raise RoofModelError(f"unknown materials {sorted(bad)}")

    @property
    def centroid_array(self) -> np.ndarray:
        return np.array([c.as_tuple() for c in self.centroids], dtype=float)

    def with_materials(self, mapping: Mapping[int, str]) -> "RoofClusterModel":
        return RoofClusterModel(self.k, list(self.centroids), {int(j): m for j, m in mapping.items()},
                                self.seed, self.n_iter, list(self.wcss_history), list(self.sizes))

    def predict(self, lab) -> np.ndarray:
        """Nearest-centroid cluster for an ``(n, 3)`` Lab array; ties go to the lower index."""
        lab = np.atleast_2d(np.asarray(lab, dtype=float))
        return np.argmin(_sq_dist(lab, self.centroid_array), axis=1)

    def materials(self, lab) -> list[str]:
        return [self.cluster_to_material[int(j)] for j in self.predict(lab)]


def default_material_map(centroids: Sequence[LabColor]) -> dict[int, str]:
    """Heuristic starting map, meant to be reviewed against the palette report.

    Bright, low-chroma clusters are tin; dark clusters with a brown/tan hue are
    thatched; everything else is painted.
    """
    out = {}
    for j, c in enumerate(centroids):
        if c.L > TIN_MIN_L and c.chroma < TIN_MAX_CHROMA:
            out[j] = "tin"
        elif c.L < THATCH_MAX_L and THATCH_HUE_BAND[0] <= c.hue_deg <= THATCH_HUE_BAND[1]:
            out[j] = "thatched"
        else:
            out[j] = "painted"
    return out


def fit_roof_clusters(colors, k: int = 8, seed: int = 0, max_iter: int = 300,
                      material_map: Optional[Mapping[int, str]] = None) -> RoofClusterModel:
    """Cluster Lab roof colors with k-means.

    Identical colors are collapsed into weighted points before seeding, so the
    fit depends only on the multiset of colors. ``material_map`` overrides the
    heuristic default.
    """
    lab = np.array([c.as_tuple() if isinstance(c, LabColor) else tuple(c) for c in colors],
                   dtype=float).reshape(-1, 3)
    uniq, counts = np.unique(lab, axis=0, return_counts=True)
    if len(uniq) < k:
        raise RoofModelError(f"need at least {k} distinct colors, got {len(uniq)}")
    centers, labels, n_iter, history = weighted_kmeans(uniq, counts.astype(float), k, seed,
                                                       max_iter)
    cents = [LabColor(*map(float, row)) for row in centers]
    sizes = np.bincount(labels, weights=counts, minlength=k).astype(int).tolist()
    mapping = dict(material_map) if material_map is not None else default_material_map(cents)
    return RoofClusterModel(k, cents, mapping, seed, n_iter, history, sizes)


def assign_material(model: RoofClusterModel, lab: LabColor) -> str:
    return model.cluster_to_material[int(model.predict(lab.as_tuple())[0])]


# ---------------------------------------------------------------------------
# model persistence (plain key = value text)


def save_model(model: RoofClusterModel, path) -> None:
    lines = [f"k = {model.k}", f"seed = {model.seed}", f"n_iter = {model.n_iter}"]
    for j, c in enumerate(model.centroids):
        lines.append(f"centroid.{j} = {c.L!r} {c.a!r} {c.b!r}")
    for j in range(model.k):
        lines.append(f"material.{j} = {model.cluster_to_material[j]}")
    for j, s in enumerate(model.sizes):
        lines.append(f"size.{j} = {s}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_model(path) -> RoofClusterModel:
    kv = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    try:
        k = int(kv["k"])
        cents = [LabColor(*(float(v) for v in kv[f"centroid.{j}"].split())) for j in range(k)]
    except (KeyError, ValueError, TypeError) as exc:
        raise RoofModelError(f"{path}: malformed model file ({exc})") from None
    mapping = {j: kv[f"material.{j}"] for j in range(k) if f"material.{j}" in kv}
    sizes = [int(kv[f"size.{j}"]) for j in range(k) if f"size.{j}" in kv]
    return RoofClusterModel(k, cents, mapping, int(kv.get("seed", 0)),
                            int(kv.get("n_iter", 0)), [], sizes)


def palette_rows(model: RoofClusterModel) -> list[dict]:
    """Per-cluster summary for analyst review of the material map."""
    rows = []
    for j, c in enumerate(model.centroids):
        rows.append({"cluster": j, "L": c.L, "a": c.a, "b": c.b, "chroma": c.chroma,
                     "hue_deg": c.hue_deg,
                     "size": model.sizes[j] if j < len(model.sizes) else "",
                     "material": model.cluster_to_material[j]})
    return rows


# ---------------------------------------------------------------------------
# enrichment


@dataclass(frozen=True)
class BuildingFeature:
    building_id: str
    polygon: object
    mean_rgb: tuple[float, float, float]
    confidence: Optional[float]
    footprint_m2: float
    centroid: GeoPoint
    material: str
    lab: LabColor


@dataclass
class EnrichReport:
    n_input: int = 0
    n_output: int = 0
    dropped: dict = field(default_factory=dict)


def enrich_buildings(raw: Sequence[BuildingFeatureRaw], model: Optional[RoofClusterModel] = None,
                     tolerance: float = 3.0, k: int = 8, seed: int = 0):
    """Simplify, measure, locate and classify each building, preserving order.

    When ``model`` is None a cluster model is fitted on the buildings' colors.
    Returns ``(buildings, model, report)``; buildings whose geometry degenerates
    are dropped and counted in the report.
    """
    report = EnrichReport(n_input=len(raw))
    kept = []
    for b in raw:
        try:
            poly = simplify_polygon(b.polygon, tolerance)
            area = polygon_area_m2(poly)
            cen_px = ring_centroid(poly.ring)
        except GeometryError as exc:
            kind = "degenerate_after_simplify" if "simplif" in str(exc) else "degenerate"
            report.dropped[kind] = report.dropped.get(kind, 0) + 1
            continue
        kept.append((b, poly, area, cen_px))
    # centroids to degrees in one vectorized pass
    geo = np.array([(p.tile_lon, p.tile_lat, p.zoom, p.width, p.height, c[0], c[1])
                    for _, p, _, c in kept], dtype=float).reshape(-1, 7)
    clon, clat = tile_pixels_to_lonlat(*geo.T)
    kept = [(b, poly, area, GeoPoint(lo, la))
            for (b, poly, area, _), lo, la in zip(kept, clon.tolist(), clat.tolist())]
    lab = rgb_to_lab_array(np.array([b.mean_rgb for b, *_ in kept], dtype=float).reshape(-1, 3))
    if model is None:
        model = fit_roof_clusters(lab, k=k, seed=seed)
    clusters = model.predict(lab) if len(kept) else np.zeros(0, dtype=int)
    out = []
    for (b, poly, area, cen), row, j in zip(kept, lab.tolist(), clusters.tolist()):
        out.append(BuildingFeature(b.building_id, poly, b.mean_rgb, b.confidence, area, cen,
                                   model.cluster_to_material[j], LabColor(*row)))
    report.n_output = len(out)
    return out, model, report


# ---------------------------------------------------------------------------
# canonical enriched-building table


@dataclass(frozen=True)
class BuildingRow:
    """Enriched building as exchanged between pipeline stages (no polygon)."""

    building_id: str
    centroid: GeoPoint
    footprint_m2: float
    material: str
    lab: LabColor


ENRICHED_COLUMNS = ("building_id", "lon", "lat", "footprint_m2", "material", "L", "a", "b")


def write_enriched(path, buildings) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ENRICHED_COLUMNS)
        for b in buildings:
            w.writerow([b.building_id, repr(b.centroid.lon), repr(b.centroid.lat),
                        repr(b.footprint_m2), b.material, repr(b.lab.L), repr(b.lab.a),
                        repr(b.lab.b)])


def read_enriched(path) -> list[BuildingRow]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [BuildingRow(r["building_id"], GeoPoint(float(r["lon"]), float(r["lat"])),
                        float(r["footprint_m2"]), r["material"],
                        LabColor(float(r["L"]), float(r["a"]), float(r["b"]))) for r in rows]
