"""Synthetic randomized-trial worlds with known ground truth.

A world is a set of input files in exactly the formats the ingest module
reads, plus a ground-truth manifest kept in a separate ``truth/`` directory
that the pipeline never reads.

Household quantities follow linear Engel curves in post-treatment wealth
with mean-one multiplicative noise, so E[Q | W] = alpha + beta W holds
exactly while every building keeps a positive area.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .geo import (EARTH_RADIUS_M, GeoPoint, lonlat_to_world_px, meters_per_pixel_at_equator,
                  world_px_to_lonlat)
from .ingest import VillageRecord, write_night_raster
from .econ.placebo import assign_two_tier

M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0

# representative roof colors (sRGB) per material
PALETTE = {
    "tin": [(184, 186, 190), (206, 207, 211), (156, 158, 162)],
    "thatched": [(122, 96, 62), (100, 80, 54), (142, 112, 72)],
    "painted": [(44, 72, 150), (160, 42, 44)],
}


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    # layout
    n_village_groups: int = 68
    villages_per_group: tuple[int, int] = (8, 11)
    households_per_village: float = 100.0
    village_spacing_m: float = 1500.0
    village_jitter_m: float = 250.0
    household_spread_m: float = 250.0
    origin_lon: float = 34.20
    origin_lat: float = 0.05
    # design
    eligible_fraction: float = 1.0 / 3.0
    high_saturation: float = 2.0 / 3.0
    low_saturation: float = 1.0 / 3.0
    # wealth (USD PPP) and treatment effect
    wealth_median_eligible: float = 1100.0
    wealth_median_ineligible: float = 2200.0
    wealth_sigma: float = 0.6
    tau_w: float = 556.0
    # Engel curves: tin building and thatched building areas (m^2)
    alpha_tin: float = 12.0
    beta_tin: float = 0.012
    alpha_thatch: float = 22.0
    beta_thatch: float = 0.0066
    min_tin_m2: float = 4.0
    min_thatch_m2: float = 10.0
    area_noise_shape: float = 2.0
    village_noise_shape: float = 16.0
    painted_fraction: float = 0.03
    # direct (non-wealth) offset for treated households
    engel_shift: float = 0.0
    engel_shift_proxy: str = "tin_area"
    # imagery
    zoom: int = 19
    tile_px: int = 640
    building_offset_m: float = 3.0
    aspect_range: tuple[float, float] = (1.0, 1.6)
    color_noise: float = 5.0
    # survey
    survey_eligible_fraction: float = 0.21
    survey_ineligible_fraction: float = 0.05
    renter_fraction: float = 0.015
    debt_fraction: float = 0.02
    gps_error_m: float = 5.0
    # night light
    night_res: float = 1.0 / 240.0
    night_base: float = 0.25
    n_towns: int = 3
    town_peak: float = 4.0
    town_sd_m: float = 1500.0
    night_month_noise: float = 0.05
    night_nodata_prob: float = 0.02
    # injected corruptions
    n_gps_outliers: int = 58
    n_missing_gps: int = 4
    n_degenerate_buildings: int = 0
    n_malformed_census_rows: int = 0

    def validate(self) -> None:
        for name in ("eligible_fraction", "high_saturation", "low_saturation",
                     "survey_eligible_fraction", "survey_ineligible_fraction",
                     "renter_fraction", "debt_fraction", "painted_fraction", "night_nodata_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SynthConfigError(f"{name}={v} outside [0, 1]")
        if self.eligible_fraction == 0.0:
            raise SynthConfigError("eligible_fraction=0 leaves no eligible households")
        if self.n_village_groups < 2:
            raise SynthConfigError("need at least two village groups")
        lo, hi = self.villages_per_group
        if not 1 <= lo <= hi:
            raise SynthConfigError(f"invalid villages_per_group {self.villages_per_group}")
        if self.households_per_village <= 0:
            raise SynthConfigError("households_per_village must be positive")
        if self.beta_tin + self.beta_thatch <= 0 or self.beta_tin < 0 or self.beta_thatch < 0:
            raise SynthConfigError("Engel slopes must be non-negative with a positive footprint slope")
        if self.alpha_tin < self.min_tin_m2 or self.alpha_thatch < self.min_thatch_m2:
            raise SynthConfigError("Engel intercepts must be at least the minimum building areas")
        if self.engel_shift_proxy not in ("tin_area", "footprint"):
            raise SynthConfigError(f"engel_shift_proxy {self.engel_shift_proxy!r} not supported")
        if self.engel_shift_proxy == "tin_area" and not 0 <= self.engel_shift <= self.min_thatch_m2 - 2:
            raise SynthConfigError("tin shift must lie in [0, min_thatch_m2 - 2] so converted "
                                   "thatch leaves a valid building")

    @property
    def beta_footprint(self) -> float:
        return self.beta_tin + self.beta_thatch

    @property
    def beta_tin_area(self) -> float:
        """Tin-area slope after painted roofs take their share of 'tin' buildings."""
        return (1.0 - self.painted_fraction) * self.beta_tin


@dataclass
class GroundTruth:
    tau_w: float
    beta: dict
    tau_q: dict
    expected_bias_w: dict
    counts: dict
    high_groups: list
    treated_villages: list
    config: dict = field(default_factory=dict)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        return cls(**json.loads(Path(path).read_text()))


@dataclass
class WorldPaths:
    root: Path

    def __post_init__(self) -> None:
        self.root = Path(self.root)

    @property
    def inputs(self) -> Path:
        return self.root / "inputs"

    @property
    def truth(self) -> Path:
        return self.root / "truth"

    @property
    def census(self) -> Path:
        return self.inputs / "census.csv"

    @property
    def villages(self) -> Path:
        return self.inputs / "villages.csv"

    @property
    def survey(self) -> Path:
        return self.inputs / "survey.csv"

    @property
    def buildings(self) -> Path:
        return self.inputs / "buildings.geojson"

    @property
    def night(self) -> Path:
        return self.inputs / "night.asc"

    @property
    def config(self) -> Path:
        return self.root / "run.cfg"


def noiseless_quantities(cfg: SynthConfig, W) -> dict:
    """Expected household proxies given post-treatment wealth (no noise, no shift)."""
    W = np.asarray(W, dtype=float)
    tin = (1.0 - cfg.painted_fraction) * (cfg.alpha_tin + cfg.beta_tin * W)
    foot = cfg.alpha_tin + cfg.alpha_thatch + cfg.beta_footprint * W
    return {"footprint": foot, "tin_area": tin, "night": np.zeros_like(W)}


def _fmt(v: float, nd: int) -> str:
    return repr(round(float(v), nd))


def generate_world(config: SynthConfig, out_dir) -> GroundTruth:
    """Write a synthetic world under ``out_dir`` and return its ground truth."""
    cfg = config
    cfg.validate()
    paths = WorldPaths(Path(out_dir))
    paths.inputs.mkdir(parents=True, exist_ok=True)
    paths.truth.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    lat0 = cfg.origin_lat
    m_per_deg_lon = M_PER_DEG * math.cos(math.radians(lat0))

    # villages on a jittered lattice, groups as consecutive runs
    sizes = rng.integers(cfg.villages_per_group[0], cfg.villages_per_group[1] + 1,
                         size=cfg.n_village_groups)
    nv = int(sizes.sum())
    ncol = int(math.ceil(math.sqrt(nv)))
    k = np.arange(nv)
    vx = (k % ncol) * cfg.village_spacing_m + rng.normal(0, cfg.village_jitter_m, nv)
    vy = (k // ncol) * cfg.village_spacing_m + rng.normal(0, cfg.village_jitter_m, nv)
    vlon = cfg.origin_lon + vx / m_per_deg_lon
    vlat = lat0 + vy / M_PER_DEG
    group_of = np.repeat(np.arange(cfg.n_village_groups), sizes)
    vids = [f"V{i:04d}" for i in range(nv)]
    gids = [f"G{g:02d}" for g in group_of]
    villages = [VillageRecord(vids[i], GeoPoint(round(float(vlon[i]), 7), round(float(vlat[i]), 7)),
                              gids[i]) for i in range(nv)]
    high_groups, treated_v = assign_two_tier(villages, rng, cfg.high_saturation,
                                             cfg.low_saturation)
    v_treated = np.isin(np.array(vids), treated_v)

    # households
    nh_v = np.maximum(rng.poisson(cfg.households_per_village, nv), 1)
    hv = np.repeat(np.arange(nv), nh_v)
    nh = hv.size
    hx = rng.normal(0, cfg.household_spread_m, nh)
    hy = rng.normal(0, cfg.household_spread_m, nh)
    hlon = vlon[hv] + hx / m_per_deg_lon
    hlat = vlat[hv] + hy / M_PER_DEG
    eligible = rng.random(nh) < cfg.eligible_fraction
    treated = eligible & v_treated[hv]
    median = np.where(eligible, cfg.wealth_median_eligible, cfg.wealth_median_ineligible)
    W0 = median * np.exp(rng.normal(0, cfg.wealth_sigma, nh))
    W = W0 + cfg.tau_w * treated

    # household building areas
    vfac = rng.gamma(cfg.village_noise_shape, 1.0 / cfg.village_noise_shape, nv)[hv]
    a = cfg.area_noise_shape
    g_tin = rng.gamma(a, 1.0 / a, nh) * vfac
    g_th = rng.gamma(a, 1.0 / a, nh) * vfac
    tin_m2 = cfg.min_tin_m2 + (cfg.alpha_tin + cfg.beta_tin * W - cfg.min_tin_m2) * g_tin
    th_m2 = cfg.min_thatch_m2 + (cfg.alpha_thatch + cfg.beta_thatch * W - cfg.min_thatch_m2) * g_th
    painted = rng.random(nh) < cfg.painted_fraction
    if cfg.engel_shift:
        if cfg.engel_shift_proxy == "tin_area":
            # roof upgrade: thatch converted to tin, footprint unchanged
            tin_m2 = tin_m2 + cfg.engel_shift * treated
            th_m2 = th_m2 - cfg.engel_shift * treated
        else:
            th_m2 = th_m2 + cfg.engel_shift * treated

    # corruptions
    order = rng.permutation(nh)
    outliers = order[: cfg.n_gps_outliers]
    missing = order[cfg.n_gps_outliers: cfg.n_gps_outliers + cfg.n_missing_gps]
    malformed = order[cfg.n_gps_outliers + cfg.n_missing_gps:
                      cfg.n_gps_outliers + cfg.n_missing_gps + cfg.n_malformed_census_rows]
    c_lon = hlon.copy()
    c_lat = hlat.copy()
    ang = rng.uniform(0, 2 * math.pi, outliers.size)
    far = rng.uniform(2500.0, 10000.0, outliers.size)
    c_lon[outliers] = vlon[hv[outliers]] + far * np.cos(ang) / m_per_deg_lon
    c_lat[outliers] = vlat[hv[outliers]] + far * np.sin(ang) / M_PER_DEG
    is_missing = np.zeros(nh, dtype=bool)
    is_missing[missing] = True
    is_malformed = np.zeros(nh, dtype=bool)
    is_malformed[malformed] = True

    hids = [f"H{i:06d}" for i in range(nh)]
    with paths.villages.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["village_id", "lon", "lat", "saturation_group_id"])
        for v in villages:
            w.writerow([v.village_id, repr(v.centroid.lon), repr(v.centroid.lat),
                        v.saturation_group_id])
    with paths.census.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "village_id", "lon", "lat", "eligible", "treated"])
        for i in range(nh):
            lo = "" if is_missing[i] else _fmt(c_lon[i], 7)
            la = "" if is_missing[i] else _fmt(c_lat[i], 7)
            el = "maybe" if is_malformed[i] else int(eligible[i])
            w.writerow([hids[i], vids[hv[i]], lo, la, el, int(treated[i])])

    # buildings: one tin-or-painted and one thatched per household
    n_b = 2 * nh
    owner = np.repeat(np.arange(nh), 2)
    area = np.empty(n_b)
    area[0::2] = tin_m2
    area[1::2] = th_m2
    material = np.empty(n_b, dtype=object)
    material[0::2] = np.where(painted, "painted", "tin")
    material[1::2] = "thatched"
    r = cfg.building_offset_m * np.sqrt(rng.random(n_b))
    phi = rng.uniform(0, 2 * math.pi, n_b)
    blon = hlon[owner] + r * np.cos(phi) / m_per_deg_lon
    blat = hlat[owner] + r * np.sin(phi) / M_PER_DEG
    aspect = rng.uniform(cfg.aspect_range[0], cfg.aspect_range[1], n_b)
    theta = rng.uniform(0, math.pi, n_b)
    jitter = rng.random(n_b) < 0.5
    bump = rng.uniform(0.0, 1.0, n_b)
    pal_idx = rng.integers(0, 3, n_b)
    col_noise = rng.normal(0, cfg.color_noise, (n_b, 3))

    zoom = cfg.zoom
    tp = cfg.tile_px
    wx, wy = lonlat_to_world_px(blon, blat, zoom)
    tx = np.floor(wx / tp)
    ty = np.floor(wy / tp)
    tlon, tlat = world_px_to_lonlat((tx + 0.5) * tp, (ty + 0.5) * tp, zoom)
    mpp = meters_per_pixel_at_equator(zoom) * np.cos(np.radians(tlat))
    px = wx - tx * tp
    py = wy - ty * tp
    side_w = np.sqrt(area * aspect) / mpp
    side_h = area / (side_w * mpp * mpp)

    # rotated rectangles; half get an extra near-collinear vertex that simplification removes
    hw = np.stack([-side_w, side_w, side_w, -side_w], axis=1) / 2
    hh = np.stack([-side_h, -side_h, side_h, side_h], axis=1) / 2
    c, s_ = np.cos(theta)[:, None], np.sin(theta)[:, None]
    rx = np.round(px[:, None] + hw * c - hh * s_, 3)
    ry = np.round(py[:, None] + hw * s_ + hh * c, 3)
    ex, ey = rx[:, 1] - rx[:, 0], ry[:, 1] - ry[:, 0]
    elen = np.hypot(ex, ey)
    mx = np.round((rx[:, 0] + rx[:, 1]) / 2 + ey / elen * bump, 3)
    my = np.round((ry[:, 0] + ry[:, 1]) / 2 - ex / elen * bump, 3)
    base = np.array([PALETTE[m][j % len(PALETTE[m])] for m, j in zip(material, pal_idx)],
                    dtype=float).reshape(-1, 3)
    rgb = np.round(np.clip(base + col_noise, 0, 255), 2).tolist()
    rings = np.stack([rx, ry], axis=2).tolist()
    mids = np.stack([mx, my], axis=1).tolist()
    tiles = np.stack([tlon, tlat], axis=1).tolist()
    dumps = json.JSONEncoder(separators=(",", ":")).encode
    lines = []
    for i in range(n_b):
        ring = rings[i]
        if jitter[i]:
            ring.insert(1, mids[i])
        lines.append(
            '{"type":"Feature","geometry":null,"properties":{"building_id":"B%07d",'
            '"mean_rgb":%s,"tile":{"lon":%r,"lat":%r,"zoom":%d,"width":%d,"height":%d},'
            '"pixel_ring":%s}}' % (i, dumps(rgb[i]), tiles[i][0], tiles[i][1], zoom, tp, tp,
                                   dumps(ring)))
    for j in range(cfg.n_degenerate_buildings):
        lines.append(
            '{"type":"Feature","geometry":null,"properties":{"building_id":"D%05d",'
            '"mean_rgb":[120,120,120],"tile":{"lon":%r,"lat":%r,"zoom":%d,"width":%d,"height":%d},'
            '"pixel_ring":[[10.0,10.0],[20.0,20.0]]}}' % (j, float(tlon[0]), float(tlat[0]), zoom,
                                                          tp, tp))
    with paths.buildings.open("w") as fh:
        fh.write('{"type": "FeatureCollection", "features": [\n')
        fh.write(",\n".join(lines))
        fh.write("\n]}\n")

    # survey: subsample of households, GPS recorded around the true location
    p_s = np.where(eligible, cfg.survey_eligible_fraction, cfg.survey_ineligible_fraction)
    surveyed = rng.random(nh) < p_s
    s_idx = np.flatnonzero(surveyed)
    ns = s_idx.size
    s_lon = hlon[s_idx] + rng.normal(0, cfg.gps_error_m, ns) / m_per_deg_lon
    s_lat = hlat[s_idx] + rng.normal(0, cfg.gps_error_m, ns) / M_PER_DEG
    renter = rng.random(ns) < cfg.renter_fraction
    debt = rng.random(ns) < cfg.debt_fraction
    share = np.where(debt, rng.uniform(1.05, 1.5, ns), rng.uniform(0.35, 0.8, ns))
    expend_noise = np.exp(rng.normal(0, 0.3, ns))
    arm = np.where(treated[s_idx], "treatment", np.where(eligible[s_idx], "control", "ineligible"))
    with paths.survey.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["survey_id", "lon", "lat", "annual_expenditure", "housing_assets",
                    "non_housing_assets", "total_assets", "is_renter", "arm"])
        for j in range(ns):
            total = round(float(W[s_idx[j]]), 2)
            housing = 0.0 if renter[j] else round(total * float(share[j]), 2)
            nonh = round(total - housing, 2)
            exp_ = round(1300.0 * math.sqrt(total / 1300.0) * float(expend_noise[j]), 2)
            w.writerow([f"S{j:06d}", _fmt(s_lon[j], 7), _fmt(s_lat[j], 7), repr(exp_),
                        repr(housing), repr(nonh), repr(total), int(renter[j]), arm[j]])

    # night light: flat background plus a few towns, monthly noise and cloud gaps
    margin = 0.03
    lon_min, lon_max = vlon.min() - margin, vlon.max() + margin
    lat_min, lat_max = vlat.min() - margin, vlat.max() + margin
    res = cfg.night_res
    ncols = int(math.ceil((lon_max - lon_min) / res))
    nrows = int(math.ceil((lat_max - lat_min) / res))
    gx = lon_min + (np.arange(ncols) + 0.5) * res
    gy = lat_min + (np.arange(nrows) + 0.5) * res
    GX, GY = np.meshgrid(gx, gy)
    field_ = np.full(GX.shape, cfg.night_base)
    towns = rng.choice(nv, size=min(cfg.n_towns, nv), replace=False)
    for t in towns:
        d2 = (((GX - vlon[t]) * m_per_deg_lon) ** 2 + ((GY - vlat[t]) * M_PER_DEG) ** 2)
        field_ += cfg.town_peak * np.exp(-0.5 * d2 / cfg.town_sd_m ** 2)
    layers = field_[None] + rng.normal(0, cfg.night_month_noise, (12,) + field_.shape)
    layers[rng.random(layers.shape) < cfg.night_nodata_prob] = np.nan
    write_night_raster(paths.night, layers, GeoPoint(float(lon_min), float(lat_min)), res)

    # ground truth (never read by the pipeline)
    beta = {"footprint": cfg.beta_footprint, "tin_area": cfg.beta_tin_area, "night": 0.0}
    tau_q = {p: b * cfg.tau_w for p, b in beta.items()}
    bias = {"footprint": 0.0, "tin_area": 0.0, "night": 0.0}
    if cfg.engel_shift:
        if cfg.engel_shift_proxy == "tin_area":
            bias["tin_area"] = (1.0 - cfg.painted_fraction) * cfg.engel_shift / cfg.beta_tin_area
        else:
            bias["footprint"] = cfg.engel_shift / cfg.beta_footprint
            bias["tin_area"] = 0.0
    truth = GroundTruth(
        tau_w=cfg.tau_w, beta=beta, tau_q=tau_q, expected_bias_w=bias,
        counts={
            "households": int(nh), "villages": int(nv), "groups": int(cfg.n_village_groups),
            "eligible": int(eligible.sum()), "treated": int(treated.sum()),
            "gps_outliers": int(outliers.size), "missing_gps": int(missing.size),
            "malformed_census_rows": int(malformed.size),
            "buildings": int(n_b), "degenerate_buildings": int(cfg.n_degenerate_buildings),
            "surveys": int(ns),
            "surveys_by_arm": {a_: int((arm == a_).sum())
                               for a_ in ("treatment", "control", "ineligible")},
            "renters": int(renter.sum()),
        },
        high_groups=high_groups, treated_villages=treated_v,
        config={k_: (list(v_) if isinstance(v_, tuple) else v_) for k_, v_ in asdict(cfg).items()},
    )
    truth.save(paths.truth / "ground_truth.json")
    with (paths.truth / "households.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["household_id", "lon", "lat", "wealth_untreated", "wealth", "eligible",
                    "treated", "tin_m2", "thatch_m2", "painted", "surveyed"])
        for i in range(nh):
            w.writerow([hids[i], _fmt(hlon[i], 7), _fmt(hlat[i], 7), _fmt(W0[i], 4),
                        _fmt(W[i], 4), int(eligible[i]), int(treated[i]), _fmt(tin_m2[i], 4),
                        _fmt(th_m2[i], 4), int(painted[i]), int(surveyed[i])])
    with (paths.truth / "survey_links.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["survey_id", "household_id"])
        for j in range(ns):
            w.writerow([f"S{j:06d}", hids[s_idx[j]]])
    _write_world_config(paths)
    return truth


def corrupt_engel(config: SynthConfig, shift: float, out_dir,
                  proxy: str = "tin_area") -> GroundTruth:
    """Generate a world where treated households get a direct, non-wealth offset in one proxy.

    For ``tin_area`` the offset converts thatched area to tin (footprint
    unchanged), mimicking roof upgrades bought with the transfer.
    """
    return generate_world(replace(config, engel_shift=shift, engel_shift_proxy=proxy), out_dir)


def _write_world_config(paths: WorldPaths) -> None:
    paths.config.write_text(
        "# run configuration for a synthetic world (paths relative to this file)\n"
        "census_path = inputs/census.csv\n"
        "villages_path = inputs/villages.csv\n"
        "survey_path = inputs/survey.csv\n"
        "buildings_path = inputs/buildings.geojson\n"
        "night_path = inputs/night.asc\n"
        "out_dir = run\n"
    )


def config_from_dict(d: Optional[dict]) -> SynthConfig:
    d = dict(d or {})
    for k in ("villages_per_group", "aspect_range"):
        if k in d and not isinstance(d[k], tuple):
            d[k] = tuple(d[k])
    return SynthConfig(**d)
