"""Readers and writers for census, village, survey, building and night-light inputs.

Every loader returns canonical records plus an :class:`IngestReport` listing
each repaired or skipped row by identifier. Input files are never modified.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .geo import GeoPoint, GeometryError, PixelPolygon, haversine

ARMS = ("treatment", "control", "ineligible")

CENSUS_COLUMNS = {
    "household_id": "household_id",
    "village_id": "village_id",
    "lon": "lon",
    "lat": "lat",
    "eligible": "eligible",
    "treated": "treated",
}
VILLAGE_COLUMNS = {
    "village_id": "village_id",
    "lon": "lon",
    "lat": "lat",
    "saturation_group_id": "saturation_group_id",
}
SURVEY_COLUMNS = {
    "survey_id": "survey_id",
    "lon": "lon",
    "lat": "lat",
    "annual_expenditure": "annual_expenditure",
    "housing_assets": "housing_assets",
    "non_housing_assets": "non_housing_assets",
    "total_assets": "total_assets",
    "is_renter": "is_renter",
    "arm": "arm",
}

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}
_MISSING = {"", "na", "nan", "null", "none"}
_ARM_ALIASES = {
    "treatment": "treatment", "t": "treatment", "treated": "treatment",
    "control": "control", "c": "control",
    "ineligible": "ineligible", "i": "ineligible", "o": "ineligible",
    "out-of-sample": "ineligible",
}


class IngestError(Exception):
    """Unrecoverable input problem (missing file, unknown village, bad header)."""


class ValidationThresholdError(IngestError):
    """Too many malformed rows were skipped."""

    def __init__(self, message: str, report: "IngestReport"):
        super().__init__(message)
        self.report = report


@dataclass
class IngestReport:
    source: str
    n_rows: int = 0
    n_loaded: int = 0
    counts: dict = field(default_factory=dict)
    issues: list = field(default_factory=list)

    def add(self, row_id, kind: str, message: str = "") -> None:
        self.counts[kind] = self.counts.get(kind, 0) + 1
        self.issues.append({"row": str(row_id), "kind": kind, "message": message})

    def count(self, kind: str) -> int:
        return self.counts.get(kind, 0)

    @property
    def n_skipped(self) -> int:
        return self.n_rows - self.n_loaded

    def as_dict(self) -> dict:
        return {
            "source": self.source,
            "n_rows": self.n_rows,
            "n_loaded": self.n_loaded,
            "n_skipped": self.n_skipped,
            "counts": dict(sorted(self.counts.items())),
            "issues": self.issues,
        }

    def check_threshold(self, threshold: Optional[float]) -> None:
        if threshold is None or self.n_rows == 0:
            return
        frac = self.n_skipped / self.n_rows
        if frac > threshold:
            raise ValidationThresholdError(
                f"{self.source}: skipped {self.n_skipped} of {self.n_rows} rows "
                f"({frac:.4%}) exceeds threshold {threshold:.4%}", self)


# ---------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class VillageRecord:
    village_id: str
    centroid: GeoPoint
    saturation_group_id: str


@dataclass(frozen=True)
class HouseholdRecord:
    household_id: str
    village_id: str
    location: GeoPoint
    eligible: bool
    treated: bool
    location_imputed: bool = False

    def __post_init__(self):
        if self.treated and not self.eligible:
            raise ValueError(f"household {self.household_id}: treated but not eligible")

    @property
    def arm(self) -> str:
        if self.treated:
            return "treatment"
        return "control" if self.eligible else "ineligible"


@dataclass(frozen=True)
class SurveyRecord:
    survey_id: str
    location: GeoPoint
    annual_expenditure: float
    housing_assets: float
    non_housing_assets: float
    total_assets: float
    is_renter: bool
    arm: str

    def welfare(self, measure: str) -> float:
        if measure == "expenditure":
            return self.annual_expenditure
        return getattr(self, measure)


@dataclass(frozen=True)
class BuildingFeatureRaw:
    building_id: str
    polygon: PixelPolygon
    mean_rgb: tuple[float, float, float]
    confidence: Optional[float] = None


# ---------------------------------------------------------------------------
# field parsing helpers


def _open_csv(path) -> tuple[list[str], list[dict]]:
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


def _require_columns(path, header: Sequence[str], columns: dict) -> None:
    missing = [v for v in columns.values() if v not in header]
    if missing:
        raise IngestError(f"{path}: missing columns {missing}")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_float(text: str) -> float:
    v = float(text.strip().replace(",", ""))
    if not math.isfinite(v):
        raise ValueError(f"non-finite number: {text!r}")
    return v


def _parse_coord(text: str) -> Optional[float]:
    if text is None or text.strip().lower() in _MISSING:
        return None
    return _parse_float(text)


def _parse_arm(text: str) -> str:
    arm = _ARM_ALIASES.get(text.strip().lower())
    if arm is None:
        raise ValueError(f"unknown arm {text!r}")
    return arm


# ---------------------------------------------------------------------------
# villages and census


def load_villages(path, columns: Optional[dict] = None) -> list[VillageRecord]:
    cols = {**VILLAGE_COLUMNS, **(columns or {})}
    header, rows = _open_csv(path)
    _require_columns(path, header, cols)
    out = []
    seen = set()
    for i, row in enumerate(rows):
        vid = row[cols["village_id"]].strip()
        if vid in seen:
            raise IngestError(f"{path}: duplicate village_id {vid!r} (row {i + 2})")
        seen.add(vid)
        try:
            centroid = GeoPoint(_parse_float(row[cols["lon"]]), _parse_float(row[cols["lat"]]))
        except ValueError as exc:
            raise IngestError(f"{path}: village {vid!r} has invalid centroid: {exc}") from None
        out.append(VillageRecord(vid, centroid, row[cols["saturation_group_id"]].strip()))
    return out


def load_census(path, villages, columns: Optional[dict] = None,
                village_columns: Optional[dict] = None,
                outlier_distance_m: float = 2000.0,
                skip_threshold: Optional[float] = 0.001):
    """Load census households and repair GPS coordinates.

    Households farther than ``outlier_distance_m`` (strictly) from their
    village centroid, and households with a missing coordinate, are moved to
    the village centroid and flagged ``location_imputed``. ``villages`` is a
    path or a sequence of :class:`VillageRecord`.

    Returns ``(households, report)``.
    """
    if not isinstance(villages, (list, tuple)):
        villages = load_villages(villages, village_columns)
    vmap = {v.village_id: v for v in villages}
    cols = {**CENSUS_COLUMNS, **(columns or {})}
    header, rows = _open_csv(path)
    _require_columns(path, header, cols)
    report = IngestReport(str(path), n_rows=len(rows))

    unknown = [(i + 2, row[cols["village_id"]]) for i, row in enumerate(rows)
               if row[cols["village_id"]].strip() not in vmap]
    if unknown:
        listing = ", ".join(f"row {r}: {v!r}" for r, v in unknown[:20])
        more = f" (+{len(unknown) - 20} more)" if len(unknown) > 20 else ""
        raise IngestError(f"{path}: unknown village_id in {len(unknown)} rows: {listing}{more}")

    id_counts: dict[str, int] = {}
    for row in rows:
        hid = row[cols["household_id"]].strip()
        id_counts[hid] = id_counts.get(hid, 0) + 1

    parsed = []
    for i, row in enumerate(rows):
        hid = row[cols["household_id"]].strip()
        if not hid:
            report.add(f"line {i + 2}", "malformed", "empty household_id")
            continue
        if id_counts[hid] > 1:
            report.add(hid, "duplicate_id", "household_id appears more than once")
            continue
        try:
            lon = _parse_coord(row[cols["lon"]])
            lat = _parse_coord(row[cols["lat"]])
            if lon is not None and not -180.0 <= lon <= 180.0:
                raise ValueError(f"longitude {lon} out of range")
            if lat is not None and not -90.0 <= lat <= 90.0:
                raise ValueError(f"latitude {lat} out of range")
            eligible = _parse_bool(row[cols["eligible"]])
            treated = _parse_bool(row[cols["treated"]])
            if treated and not eligible:
                raise ValueError("treated household is not eligible")
        except ValueError as exc:
            report.add(hid, "malformed", str(exc))
            continue
        parsed.append((hid, row[cols["village_id"]].strip(), lon, lat, eligible, treated))

    vlon = np.array([vmap[p[1]].centroid.lon for p in parsed], dtype=float)
    vlat = np.array([vmap[p[1]].centroid.lat for p in parsed], dtype=float)
    missing = np.array([p[2] is None or p[3] is None for p in parsed], dtype=bool)
    hlon = np.array([vl if p[2] is None else p[2] for p, vl in zip(parsed, vlon)], dtype=float)
    hlat = np.array([vl if p[3] is None else p[3] for p, vl in zip(parsed, vlat)], dtype=float)
    dist = haversine(hlon, hlat, vlon, vlat) if parsed else np.zeros(0)
    outlier = (dist > outlier_distance_m) & ~missing

    households = []
    for k, (hid, vid, _, _, eligible, treated) in enumerate(parsed):
        if missing[k]:
            report.add(hid, "imputed_missing_gps", "missing coordinate set to village centroid")
        elif outlier[k]:
            report.add(hid, "imputed_outlier",
                       f"{dist[k]:.1f} m from village centroid; set to centroid")
        imputed = bool(missing[k] or outlier[k])
        loc = vmap[vid].centroid if imputed else GeoPoint(float(hlon[k]), float(hlat[k]))
        households.append(HouseholdRecord(hid, vid, loc, eligible, treated, imputed))
    report.n_loaded = len(households)
    report.check_threshold(skip_threshold)
    return households, report


def write_households(path, households: Iterable[HouseholdRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "village_id", "lon", "lat", "eligible", "treated",
                    "location_imputed"])
        for h in households:
            w.writerow([h.household_id, h.village_id, repr(h.location.lon), repr(h.location.lat),
                        int(h.eligible), int(h.treated), int(h.location_imputed)])


def read_households(path) -> list[HouseholdRecord]:
    """Read the canonical household table written by :func:`write_households`."""
    _, rows = _open_csv(path)
    return [HouseholdRecord(r["household_id"], r["village_id"],
                            GeoPoint(float(r["lon"]), float(r["lat"])),
                            r["eligible"] == "1", r["treated"] == "1",
                            r["location_imputed"] == "1") for r in rows]


def write_villages(path, villages: Iterable[VillageRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["village_id", "lon", "lat", "saturation_group_id"])
        for v in villages:
            w.writerow([v.village_id, repr(v.centroid.lon), repr(v.centroid.lat),
                        v.saturation_group_id])


def household_arrays(households: Sequence[HouseholdRecord]) -> dict:
    return {
        "lon": np.array([h.location.lon for h in households], dtype=float),
        "lat": np.array([h.location.lat for h in households], dtype=float),
        "eligible": np.array([h.eligible for h in households], dtype=bool),
        "treated": np.array([h.treated for h in households], dtype=bool),
    }


# ---------------------------------------------------------------------------
# survey


def load_survey(path, columns: Optional[dict] = None, total_tolerance: float = 1.0,
                skip_threshold: Optional[float] = None):
    """Load endline survey rows.

    Renters are flagged, not removed. ``total_assets`` must equal housing plus
    non-housing assets within ``total_tolerance`` currency units. Negative
    asset values (net debt) are accepted.

    Returns ``(records, report)``; the report counts loaded rows per arm.
    """
    cols = {**SURVEY_COLUMNS, **(columns or {})}
    header, rows = _open_csv(path)
    _require_columns(path, header, cols)
    report = IngestReport(str(path), n_rows=len(rows))
    out = []
    seen = set()
    for i, row in enumerate(rows):
        sid = row[cols["survey_id"]].strip() or f"line {i + 2}"
        if sid in seen:
            report.add(sid, "duplicate_id", "survey_id appears more than once")
            continue
        seen.add(sid)
        try:
            lon = _parse_coord(row[cols["lon"]])
            lat = _parse_coord(row[cols["lat"]])
            if lon is None or lat is None:
                raise ValueError("missing coordinate")
            loc = GeoPoint(lon, lat)
            values = {k: _parse_float(row[cols[k]]) for k in
                      ("annual_expenditure", "housing_assets", "non_housing_assets",
                       "total_assets")}
            if abs(values["housing_assets"] + values["non_housing_assets"]
                   - values["total_assets"]) > total_tolerance:
                raise ValueError("total_assets != housing_assets + non_housing_assets")
            rec = SurveyRecord(sid, loc, is_renter=_parse_bool(row[cols["is_renter"]]),
                               arm=_parse_arm(row[cols["arm"]]), **values)
        except ValueError as exc:
            report.add(sid, "malformed", str(exc))
            continue
        out.append(rec)
        report.counts[f"arm_{rec.arm}"] = report.counts.get(f"arm_{rec.arm}", 0) + 1
        if rec.is_renter:
            report.counts["renters"] = report.counts.get("renters", 0) + 1
    report.n_loaded = len(out)
    report.check_threshold(skip_threshold)
    return out, report


def write_survey(path, records: Iterable[SurveyRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(SURVEY_COLUMNS))
        for s in records:
            w.writerow([s.survey_id, repr(s.location.lon), repr(s.location.lat),
                        repr(s.annual_expenditure), repr(s.housing_assets),
                        repr(s.non_housing_assets), repr(s.total_assets),
                        int(s.is_renter), s.arm])


# ---------------------------------------------------------------------------
# buildings (GeoJSON feature collection)


def _feature_polygon(feat: dict, props: dict, default_zoom: float) -> PixelPolygon:
    ring = props.get("pixel_ring")
    if ring is not None:
        tile = props.get("tile")
        if not isinstance(tile, dict):
            raise GeometryError("pixel_ring without tile georeference")
        return PixelPolygon(tuple(tuple(p) for p in ring), float(tile["lon"]),
                            float(tile["lat"]), float(tile["zoom"]),
                            int(tile.get("width", 640)), int(tile.get("height", 640)))
    geom = feat.get("geometry")
    if not geom or geom.get("type") != "Polygon" or not geom.get("coordinates"):
        raise GeometryError("feature has neither pixel_ring nor a Polygon geometry")
    exterior = geom["coordinates"][0]
    if len(exterior) >= 2 and exterior[0] == exterior[-1]:
        exterior = exterior[:-1]
    if len(exterior) < 3:
        raise GeometryError(f"ring has {len(exterior)} vertices, need at least 3")
    return PixelPolygon.from_lonlat_ring(exterior, zoom=default_zoom)


def load_buildings(path, default_zoom: float = 19, skip_threshold: Optional[float] = None):
    """Load segmented buildings from a GeoJSON FeatureCollection.

    Each feature carries ``mean_rgb`` and either a pixel ring with its tile
    georeference (``pixel_ring`` + ``tile`` properties) or a degree-space
    Polygon geometry, which is projected into a Web Mercator tile at
    ``default_zoom``. Invalid features are dropped and counted.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"input file not found: {path}")
    with path.open() as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise IngestError(f"{path}: not a GeoJSON FeatureCollection")
    feats = doc.get("features", [])
    report = IngestReport(str(path), n_rows=len(feats))
    out = []
    seen = set()
    for i, feat in enumerate(feats):
        props = feat.get("properties") or {}
        bid = str(props.get("building_id", feat.get("id", f"b{i}")))
        if bid in seen:
            report.add(bid, "duplicate_id", "building_id appears more than once")
            continue
        rgb = props.get("mean_rgb")
        if rgb is None:
            report.add(bid, "missing_rgb", "feature has no mean_rgb")
            continue
        try:
            rgb = tuple(float(c) for c in rgb)
            if len(rgb) != 3 or not all(0.0 <= c <= 255.0 for c in rgb):
                raise ValueError(f"mean_rgb {rgb} not three channels in [0, 255]")
            conf = props.get("confidence")
            if conf is not None:
                conf = float(conf)
                if not 0.0 <= conf <= 1.0:
                    raise ValueError(f"confidence {conf} outside [0, 1]")
        except (TypeError, ValueError) as exc:
            report.add(bid, "invalid_attribute", str(exc))
            continue
        try:
            poly = _feature_polygon(feat, props, default_zoom)
        except (GeometryError, KeyError, TypeError, ValueError) as exc:
            report.add(bid, "invalid_geometry", str(exc))
            continue
        seen.add(bid)
        out.append(BuildingFeatureRaw(bid, poly, rgb, conf))
    report.n_loaded = len(out)
    report.check_threshold(skip_threshold)
    return out, report


def building_to_feature(b: BuildingFeatureRaw) -> dict:
    p = b.polygon
    props = {
        "building_id": b.building_id,
        "mean_rgb": list(b.mean_rgb),
        "tile": {"lon": p.tile_lon, "lat": p.tile_lat, "zoom": p.zoom,
                 "width": p.width, "height": p.height},
        "pixel_ring": [list(v) for v in p.ring],
    }
    if b.confidence is not None:
        props["confidence"] = b.confidence
    return {"type": "Feature", "geometry": None, "properties": props}


def write_buildings(path, buildings: Iterable) -> None:
    """Write buildings in pixel form; accepts raw records or prebuilt feature dicts."""
    feats = [b if isinstance(b, dict) else building_to_feature(b) for b in buildings]
    with Path(path).open("w") as fh:
        fh.write('{"type": "FeatureCollection", "features": [\n')
        for i, f in enumerate(feats):
            fh.write(json.dumps(f, separators=(",", ":")))
            fh.write(",\n" if i + 1 < len(feats) else "\n")
        fh.write("]}\n")


# ---------------------------------------------------------------------------
# night-light raster


@dataclass
class NightRaster:
    """Cell-wise annual mean radiance; row 0 is the southernmost row.

    Cells with no valid month are NaN.
    """

    origin: GeoPoint
    res: float
    values: np.ndarray
    valid_months: np.ndarray
    n_layers: int = 1

    def __post_init__(self):
        if not self.res > 0:
            raise IngestError(f"raster resolution must be positive, got {self.res}")
        if self.values.ndim != 2 or self.values.shape != self.valid_months.shape:
            raise IngestError("raster values and valid-month counts disagree in shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def cell_of(self, lon, lat) -> tuple[np.ndarray, np.ndarray]:
        """Nearest-cell indices ``(row, col)``; -1 when outside the grid.

        A query exactly on the edge between two cells resolves to the lower index.
        """
        tx = (np.asarray(lon, dtype=float) - self.origin.lon) / self.res
        ty = (np.asarray(lat, dtype=float) - self.origin.lat) / self.res
        col = np.ceil(tx).astype(np.int64) - 1
        row = np.ceil(ty).astype(np.int64) - 1
        col = np.where(tx == 0.0, 0, col)
        row = np.where(ty == 0.0, 0, row)
        nrows, ncols = self.values.shape
        bad = (col < 0) | (col >= ncols) | (row < 0) | (row >= nrows)
        return np.where(bad, -1, row), np.where(bad, -1, col)

    def sample(self, lon, lat) -> np.ndarray:
        """Nearest-neighbour annual mean at each point; NaN outside the grid or for missing cells."""
        row, col = self.cell_of(lon, lat)
        out = np.full(np.shape(row), np.nan)
        ok = row >= 0
        out[ok] = self.values[row[ok], col[ok]]
        return out

    def sample_point(self, p: GeoPoint) -> float:
        return float(self.sample(p.lon, p.lat))


_RASTER_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value", "nlayers"}


def load_night_raster(path, nodata: Optional[float] = None) -> NightRaster:
    """Read an ESRI ASCII grid, optionally with several monthly layers.

    The header may carry an ``nlayers`` key; layers follow one another, each
    written north row first. Layers are averaged cell-wise over non-nodata
    months. ``nodata`` overrides the header sentinel.
    """
    path = Path(path)
    if not path.is_file():
        raise IngestError(f"input file not found: {path}")
    header = {}
    body = []
    with path.open() as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            key = parts[0].lower()
            if not body and key in _RASTER_KEYS:
                if len(parts) != 2:
                    raise IngestError(f"{path}: malformed header line {line.strip()!r}")
                header[key] = parts[1]
            else:
                body.append(line)
    required = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize"}
    if not required <= header.keys():
        raise IngestError(f"{path}: header missing {sorted(required - header.keys())}")
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        nlayers = int(header.get("nlayers", 1))
        xll = float(header["xllcorner"])
        yll = float(header["yllcorner"])
        res = float(header["cellsize"])
        sentinel = float(header.get("nodata_value", "nan")) if nodata is None else float(nodata)
        data = np.array(" ".join(body).split(), dtype=float)
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from None
    expected = nlayers * nrows * ncols
    if ncols <= 0 or nrows <= 0 or nlayers <= 0 or data.size != expected:
        raise IngestError(f"{path}: header declares {nlayers}x{nrows}x{ncols} = {expected} "
                          f"values, file has {data.size}")
    layers = data.reshape(nlayers, nrows, ncols)[:, ::-1, :]
    valid = np.isfinite(layers)
    if not math.isnan(sentinel):
        valid &= layers != sentinel
    counts = valid.sum(axis=0)
    sums = np.where(valid, layers, 0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return NightRaster(GeoPoint(xll, yll), res, mean, counts, nlayers)


def write_night_raster(path, layers: np.ndarray, origin: GeoPoint, res: float,
                       nodata: float = -9999.0) -> None:
    """Write layers (shape ``(nlayers, nrows, ncols)``, row 0 south) as an ASCII grid."""
    layers = np.asarray(layers, dtype=float)
    if layers.ndim == 2:
        layers = layers[None]
    nl, nr, nc = layers.shape
    with Path(path).open("w") as fh:
        fh.write(f"ncols {nc}\nnrows {nr}\nxllcorner {origin.lon!r}\nyllcorner {origin.lat!r}\n"
                 f"cellsize {res!r}\nNODATA_value {nodata!r}\nnlayers {nl}\n")
        for k in range(nl):
            for r in range(nr - 1, -1, -1):
                vals = np.where(np.isfinite(layers[k, r]), layers[k, r], nodata)
                fh.write(" ".join(f"{v:.6g}" for v in vals))
                fh.write("\n")
