"""Grid-cell aggregation of households and buildings, and winsorization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geo import CellId, GeoPoint, cell_centers, cell_indices
from .ingest import HouseholdRecord, NightRaster

OUTCOMES = ("y_footprint", "y_tin", "y_night")
_ROW_OFFSET = 1 << 30


@dataclass(frozen=True)
class GridCellObservation:
    cell: CellId
    centroid: GeoPoint
    x: int
    e: int
    y_footprint: float
    y_tin: float
    y_night: float


@dataclass(frozen=True)
class WinsorSpec:
    upper_pct: Optional[float] = 99.0
    lower_pct: Optional[float] = None

    def __post_init__(self):
        lo = 0.0 if self.lower_pct is None else self.lower_pct
        hi = 100.0 if self.upper_pct is None else self.upper_pct
        if not 0.0 <= lo < hi <= 100.0:
            raise ValueError(f"invalid winsor percentiles lower={self.lower_pct} upper={self.upper_pct}")


def cell_keys(cols, rows) -> np.ndarray:
    return np.asarray(cols, dtype=np.int64) * (1 << 31) + (np.asarray(rows, dtype=np.int64)
                                                          + _ROW_OFFSET)


@dataclass
class CellTable:
    """Column-oriented table of retained grid cells, sorted by (col, row)."""

    res: float
    col: np.ndarray
    row: np.ndarray
    x: np.ndarray
    e: np.ndarray
    y_footprint: np.ndarray = None
    y_tin: np.ndarray = None
    y_night: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.col)
        for name in OUTCOMES:
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(n) if name != "y_night" else np.full(n, np.nan))
        if np.any(self.x > self.e):
            raise ValueError("treated count exceeds eligible count in some cell")

    def __len__(self) -> int:
        return len(self.col)

    @property
    def lon(self) -> np.ndarray:
        return cell_centers(self.col, self.row, self.res)[0]

    @property
    def lat(self) -> np.ndarray:
        return cell_centers(self.col, self.row, self.res)[1]

    @property
    def keys(self) -> np.ndarray:
        return cell_keys(self.col, self.row)

    def outcome(self, name: str) -> np.ndarray:
        key = name if name.startswith("y_") else f"y_{name}"
        if key not in OUTCOMES:
            raise KeyError(f"unknown outcome {name!r}; expected one of {OUTCOMES}")
        return getattr(self, key)

    def locate(self, lon, lat) -> np.ndarray:
        """Index of the retained cell containing each point, or -1."""
        c, r = cell_indices(lon, lat, self.res)
        keys = self.keys
        q = cell_keys(c, r)
        if len(keys) == 0:
            return np.full(q.shape, -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(keys, q), len(keys) - 1)
        return np.where(keys[pos] == q, pos, -1)

    def observations(self) -> list[GridCellObservation]:
        lon, lat = self.lon, self.lat
        return [GridCellObservation(CellId(int(c), int(r), self.res), GeoPoint(float(lo), float(la)),
                                    int(x), int(e), float(f), float(t), float(nl))
                for c, r, lo, la, x, e, f, t, nl in zip(self.col, self.row, lon, lat, self.x,
                                                        self.e, self.y_footprint, self.y_tin,
                                                        self.y_night)]

    def to_csv(self, path) -> None:
        lon, lat = self.lon, self.lat
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "col", "lon", "lat", "x", "e", "y_footprint", "y_tin", "y_night"])
            for i in range(len(self)):
                w.writerow([int(self.row[i]), int(self.col[i]), repr(float(lon[i])),
                            repr(float(lat[i])), int(self.x[i]), int(self.e[i]),
                            repr(float(self.y_footprint[i])), repr(float(self.y_tin[i])),
                            repr(float(self.y_night[i]))])

    @classmethod
    def from_csv(cls, path, res: float) -> "CellTable":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        arr = lambda k, t: np.array([r[k] for r in rows], dtype=t)  # noqa: E731
        t = cls(res, arr("col", np.int64), arr("row", np.int64), arr("x", np.int64),
                arr("e", np.int64), arr("y_footprint", float), arr("y_tin", float),
                arr("y_night", float))
        order = np.argsort(t.keys, kind="stable")
        return t.take(order)

    def take(self, idx) -> "CellTable":
        return CellTable(self.res, self.col[idx], self.row[idx], self.x[idx], self.e[idx],
                         self.y_footprint[idx], self.y_tin[idx], self.y_night[idx],
                         dict(self.diagnostics))


def build_intensity_raster(households: Sequence[HouseholdRecord], res: float = 0.001) -> CellTable:
    """Count treated (x) and eligible (e) households per cell; drop cells with e = 0."""
    lon = np.array([h.location.lon for h in households], dtype=float)
    lat = np.array([h.location.lat for h in households], dtype=float)
    eligible = np.array([h.eligible for h in households], dtype=bool)
    treated = np.array([h.treated for h in households], dtype=bool)
    return intensity_from_arrays(lon, lat, eligible, treated, res)


def intensity_from_arrays(lon, lat, eligible, treated, res: float = 0.001) -> CellTable:
    cols, rows = cell_indices(lon, lat, res)
    keys = cell_keys(cols, rows)
    uniq, first, inv = np.unique(keys, return_index=True, return_inverse=True)
    e = np.bincount(inv, weights=eligible, minlength=len(uniq)).astype(np.int64)
    x = np.bincount(inv, weights=treated, minlength=len(uniq)).astype(np.int64)
    keep = e > 0
    table = CellTable(res, cols[first][keep], rows[first][keep], x[keep], e[keep])
    table.diagnostics["n_households"] = int(len(keys))
    table.diagnostics["households_in_dropped_cells"] = int((~keep[inv]).sum())
    table.diagnostics["cells_without_eligible"] = int((~keep).sum())
    return table


def build_outcome_rasters(buildings, night: Optional[NightRaster], cells: CellTable) -> CellTable:
    """Sum building footprint and tin-roof area into cells by building centroid.

    Cells without buildings get 0. ``y_night`` is the nearest-neighbour annual
    mean at each cell center (NaN where the raster has no data). Buildings
    whose centroid falls outside every retained cell are counted and ignored.
    """
    order = sorted(range(len(buildings)), key=lambda i: buildings[i].building_id)
    lon = np.array([buildings[i].centroid.lon for i in order], dtype=float)
    lat = np.array([buildings[i].centroid.lat for i in order], dtype=float)
    area = np.array([buildings[i].footprint_m2 for i in order], dtype=float)
    tin = np.array([buildings[i].material == "tin" for i in order], dtype=bool)
    return outcomes_from_arrays(lon, lat, area, tin, night, cells)


def outcomes_from_arrays(lon, lat, area, tin, night, cells: CellTable) -> CellTable:
    out = cells.take(np.arange(len(cells)))
    idx = cells.locate(lon, lat) if len(lon) else np.zeros(0, dtype=np.int64)
    inside = idx >= 0
    n = len(cells)
    out.y_footprint = np.bincount(idx[inside], weights=area[inside], minlength=n)
    out.y_tin = np.bincount(idx[inside], weights=np.where(tin, area, 0.0)[inside], minlength=n)
    out.y_night = night.sample(cells.lon, cells.lat) if night is not None else np.full(n, np.nan)
    out.diagnostics["buildings_outside_cells"] = int((~inside).sum())
    out.diagnostics["footprint_outside_cells_m2"] = float(area[~inside].sum())
    out.diagnostics["cells_missing_night"] = int(np.isnan(out.y_night).sum())
    return out


def _clip(values: np.ndarray, spec: WinsorSpec) -> np.ndarray:
    lo = np.percentile(values, spec.lower_pct) if spec.lower_pct is not None else -np.inf
    hi = np.percentile(values, spec.upper_pct) if spec.upper_pct is not None else np.inf
    return np.clip(values, lo, hi)


def winsorize(values, spec: WinsorSpec = WinsorSpec(), groups=None) -> np.ndarray:
    """Clip values to percentile bounds, optionally within groups.

    Percentiles interpolate linearly between order statistics (numpy's
    default ``linear`` method). NaNs are left in place and ignored when
    computing bounds.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("cannot winsorize an empty sequence")
    out = v.copy()
    if groups is None:
        groups = np.zeros(v.shape, dtype=int)
    groups = np.asarray(groups)
    for g in np.unique(groups):
        m = (groups == g) & np.isfinite(v)
        if m.any():
            out[m] = _clip(v[m], spec)
    return out
