"""Linking buildings and survey records to census coordinates.

Each building goes to its nearest census coordinate within a radius (several
buildings may share one household). Each survey record goes to its nearest
census coordinate within a radius; when several surveys land on the same
household the closest one is kept.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geo import chord_for_distance, haversine, unit_vectors
from .ingest import HouseholdRecord, NightRaster, SurveyRecord
from .rasterize import WinsorSpec, winsorize

PROXIES = ("footprint", "tin_area", "night")
WELFARE = ("total_assets", "housing_assets", "non_housing_assets", "expenditure")

# Candidates examined per query; exact ties among more distinct coordinates
# than this are not expected for real GPS data.
_K_CANDIDATES = 4


class EmptySampleError(ValueError):
    pass


def nearest_within(query_lon, query_lat, ref_lon, ref_lat, radius_m: float):
    """Nearest reference point (haversine) to each query, if within ``radius_m``.

    Returns ``(index, distance)``; unmatched queries get index -1 and NaN
    distance. A query at exactly ``radius_m`` matches. Equidistant reference
    points resolve to the lowest index.
    """
    qlon = np.asarray(query_lon, dtype=float)
    qlat = np.asarray(query_lat, dtype=float)
    rlon = np.asarray(ref_lon, dtype=float)
    rlat = np.asarray(ref_lat, dtype=float)
    nq = qlon.size
    idx_out = np.full(nq, -1, dtype=np.int64)
    dist_out = np.full(nq, np.nan)
    if nq == 0 or rlon.size == 0:
        return idx_out, dist_out

    # collapse duplicate coordinates onto their lowest original index
    coords = np.column_stack([rlon, rlat])
    uniq, first = np.unique(coords, axis=0, return_index=True)
    tree = cKDTree(unit_vectors(uniq[:, 0], uniq[:, 1]))
    k = min(_K_CANDIDATES, len(uniq))
    bound = chord_for_distance(radius_m) * (1 + 1e-9) + 1e-12
    _, cand = tree.query(unit_vectors(qlon, qlat), k=k, distance_upper_bound=bound)
    cand = cand.reshape(nq, k)
    valid = cand < len(uniq)
    safe = np.where(valid, cand, 0)
    d = haversine(qlon[:, None], qlat[:, None], uniq[safe, 0], uniq[safe, 1])
    d = np.where(valid & (d <= radius_m), d, np.inf)
    orig = np.where(valid, first[safe], np.iinfo(np.int64).max)
    # lexicographic (distance, original index)
    order = np.lexsort((orig, d), axis=1)[:, 0]
    rows = np.arange(nq)
    best_d = d[rows, order]
    hit = np.isfinite(best_d)
    idx_out[hit] = orig[rows, order][hit]
    dist_out[hit] = best_d[hit]
    return idx_out, dist_out


def resolve_collisions(target: np.ndarray, dist: np.ndarray, keys: Sequence[str]) -> np.ndarray:
    """Keep only the closest query per target; ties go to the smaller key.

    Returns a copy of ``target`` with losers set to -1.
    """
    out = target.copy()
    matched = np.flatnonzero(target >= 0)
    if matched.size == 0:
        return out
    key_rank = np.empty(len(keys), dtype=np.int64)
    key_rank[np.argsort(np.asarray(keys, dtype=object), kind="stable")] = np.arange(len(keys))
    order = np.lexsort((key_rank[matched], dist[matched], target[matched]))
    m = matched[order]
    t = target[m]
    winner = np.ones(len(m), dtype=bool)
    winner[1:] = t[1:] != t[:-1]
    out[m[~winner]] = -1
    return out


@dataclass
class MatchResult:
    """Building and survey links to census households (by census index)."""

    building_to_census: np.ndarray
    building_distance: np.ndarray
    survey_to_census: Optional[np.ndarray] = None
    survey_distance: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)

    def buildings_of(self, census_index: int) -> np.ndarray:
        return np.flatnonzero(self.building_to_census == census_index)

    def survey_of_census(self, n_census: int) -> np.ndarray:
        """Array mapping census index -> survey index (-1 when none)."""
        out = np.full(n_census, -1, dtype=np.int64)
        if self.survey_to_census is not None:
            s = np.flatnonzero(self.survey_to_census >= 0)
            out[self.survey_to_census[s]] = s
        return out


def _census_lonlat(census: Sequence[HouseholdRecord]):
    return (np.array([h.location.lon for h in census], dtype=float),
            np.array([h.location.lat for h in census], dtype=float))


def match_buildings_to_census(buildings, census: Sequence[HouseholdRecord],
                              radius_m: float = 250.0) -> MatchResult:
    """Assign each building (by polygon centroid) to its nearest census household within ``radius_m``."""
    blon = np.array([b.centroid.lon for b in buildings], dtype=float)
    blat = np.array([b.centroid.lat for b in buildings], dtype=float)
    clon, clat = _census_lonlat(census)
    idx, dist = nearest_within(blon, blat, clon, clat, radius_m)
    res = MatchResult(idx, dist)
    res.diagnostics["buildings_unmatched"] = int((idx < 0).sum())
    res.diagnostics["households_with_buildings"] = int(np.unique(idx[idx >= 0]).size)
    return res


def match_survey_to_census(survey: Sequence[SurveyRecord], census: Sequence[HouseholdRecord],
                           radius_m: float = 250.0, result: Optional[MatchResult] = None
                           ) -> MatchResult:
    """Assign survey records to census households; the closest survey wins a collision."""
    slon = np.array([s.location.lon for s in survey], dtype=float)
    slat = np.array([s.location.lat for s in survey], dtype=float)
    clon, clat = _census_lonlat(census)
    idx, dist = nearest_within(slon, slat, clon, clat, radius_m)
    kept = resolve_collisions(idx, dist, [s.survey_id for s in survey])
    dist = np.where(kept >= 0, dist, np.nan)
    if result is None:
        result = MatchResult(np.zeros(0, dtype=np.int64), np.zeros(0))
    result.survey_to_census = kept
    result.survey_distance = dist
    result.diagnostics["surveys_out_of_radius"] = int((idx < 0).sum())
    result.diagnostics["surveys_lost_collision"] = int(((idx >= 0) & (kept < 0)).sum())
    result.diagnostics["surveys_matched"] = int((kept >= 0).sum())
    return result


# ---------------------------------------------------------------------------
# matched table


@dataclass
class MatchedTable:
    """One row per census household matched to both buildings and a survey."""

    census_id: list
    survey_id: list
    n_buildings: np.ndarray
    q: dict           # proxy -> array
    w: dict           # welfare -> array
    arm: np.ndarray
    is_renter: np.ndarray

    def __len__(self) -> int:
        return len(self.census_id)

    @property
    def eligible(self) -> np.ndarray:
        return self.arm != "ineligible"

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["census_id", "survey_id", "n_buildings"]
                        + [f"q_{p}" for p in PROXIES] + [f"w_{m}" for m in WELFARE]
                        + ["arm", "is_renter"])
            for i in range(len(self)):
                wr.writerow([self.census_id[i], self.survey_id[i], int(self.n_buildings[i])]
                            + [repr(float(self.q[p][i])) for p in PROXIES]
                            + [repr(float(self.w[m][i])) for m in WELFARE]
                            + [self.arm[i], int(self.is_renter[i])])

    @classmethod
    def from_csv(cls, path) -> "MatchedTable":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([r["census_id"] for r in rows], [r["survey_id"] for r in rows],
                   np.array([int(r["n_buildings"]) for r in rows], dtype=np.int64),
                   {p: np.array([float(r[f"q_{p}"]) for r in rows]) for p in PROXIES},
                   {m: np.array([float(r[f"w_{m}"]) for r in rows]) for m in WELFARE},
                   np.array([r["arm"] for r in rows], dtype=object),
                   np.array([r["is_renter"] == "1" for r in rows], dtype=bool))


def build_matched_table(matches: MatchResult, buildings, survey: Sequence[SurveyRecord],
                        census: Sequence[HouseholdRecord],
                        night: Optional[NightRaster] = None) -> MatchedTable:
    """Collect triples: census households with at least one building and a survey.

    Household footprint and tin area are sums over the household's buildings;
    night light is sampled at the census coordinate.
    """
    n = len(census)
    b2c = matches.building_to_census
    ok = b2c >= 0
    area = np.array([b.footprint_m2 for b in buildings], dtype=float)
    tin = np.array([b.material == "tin" for b in buildings], dtype=bool)
    nb = np.bincount(b2c[ok], minlength=n)
    foot = np.bincount(b2c[ok], weights=area[ok], minlength=n)
    tin_area = np.bincount(b2c[ok], weights=np.where(tin, area, 0.0)[ok], minlength=n)
    c2s = matches.survey_of_census(n)
    rows = np.flatnonzero((nb > 0) & (c2s >= 0))
    clon, clat = _census_lonlat(census)
    nl = night.sample(clon[rows], clat[rows]) if night is not None else np.full(len(rows), np.nan)
    srec = [survey[c2s[i]] for i in rows]
    return MatchedTable(
        census_id=[census[i].household_id for i in rows],
        survey_id=[s.survey_id for s in srec],
        n_buildings=nb[rows],
        q={"footprint": foot[rows], "tin_area": tin_area[rows], "night": nl},
        w={m: np.array([s.welfare(m) for s in srec], dtype=float) for m in WELFARE},
        arm=np.array([s.arm for s in srec], dtype=object),
        is_renter=np.array([s.is_renter for s in srec], dtype=bool),
    )


@dataclass(frozen=True)
class EngelObservation:
    household_key: str
    W: float
    Q: float
    arm: str


def build_engel_observations(table: MatchedTable, proxy: str = "footprint",
                             welfare: str = "total_assets", arms=("control",),
                             exclude_renters: bool = True,
                             welfare_winsor: WinsorSpec = WinsorSpec(upper_pct=99.0, lower_pct=1.0),
                             proxy_winsor: WinsorSpec = WinsorSpec(upper_pct=99.0),
                             ) -> list[EngelObservation]:
    """Engel-curve sample for one proxy and welfare measure.

    Renters are removed first; welfare is then winsorized at 1/99 and the
    proxy at 99 within the eligible and ineligible strata separately; finally
    rows are restricted to ``arms`` (None keeps every arm).
    """
    if proxy not in PROXIES:
        raise KeyError(f"unknown proxy {proxy!r}")
    if welfare not in WELFARE:
        raise KeyError(f"unknown welfare measure {welfare!r}")
    keep = np.ones(len(table), dtype=bool)
    if len(table) == 0:
        raise EmptySampleError("no fully matched households")
    if exclude_renters:
        keep &= ~table.is_renter
        if not keep.any():
            raise EmptySampleError("renter exclusion removed every household")
    q = table.q[proxy]
    keep &= np.isfinite(q)
    if not keep.any():
        raise EmptySampleError(f"no household has a finite {proxy} value")
    strata = table.eligible[keep]
    W = winsorize(table.w[welfare][keep], welfare_winsor, strata) if welfare_winsor else \
        table.w[welfare][keep]
    Q = winsorize(q[keep], proxy_winsor, strata) if proxy_winsor else q[keep]
    arm = table.arm[keep]
    ids = np.asarray(table.census_id, dtype=object)[keep]
    sel = np.ones(len(W), dtype=bool) if arms is None else np.isin(arm, list(arms))
    if not sel.any():
        raise EmptySampleError(f"arm filter {tuple(arms)} removed every household")
    return [EngelObservation(str(k), float(w), float(qq), str(a))
            for k, w, qq, a in zip(ids[sel], W[sel], Q[sel], arm[sel])]
