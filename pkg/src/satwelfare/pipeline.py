"""Pipeline stages over a run directory.

Each stage reads its inputs from files (raw inputs or earlier stage outputs)
and writes its outputs under ``cfg.out_dir``; stages share no other state.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import warnings
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .config import PROXY_OUTCOME, RunConfig
from .econ import (EffectEstimate, SpatialKernel, check_delta_identity, compare_arms,
                   estimate_binned, estimate_pooled, fit_engel_linear, fit_engel_loess,
                   placebo_run, scale_values, test_engel_linearity)
from .econ.engel import EngelError
from .ingest import (IngestError, ValidationThresholdError, load_buildings, load_census,
                     load_night_raster, load_survey, load_villages, read_households,
                     write_households, write_survey, write_villages)
from .match import (EmptySampleError, MatchedTable, build_engel_observations, build_matched_table,
                    match_buildings_to_census, match_survey_to_census)
from .rasterize import CellTable, WinsorSpec, build_intensity_raster, build_outcome_rasters
from .roof import enrich_buildings, palette_rows, read_enriched, save_model, write_enriched

EFFECT_COLUMNS = ["estimator", "outcome", "coefficient", "se", "ci_lo", "ci_hi", "t", "p", "n",
                  "df"]

CONVENTIONS = {
    "ci_critical_value": 1.96,
    "p_values": "two-sided t distribution with df = n - p",
    "conley_kernel": "uniform, haversine distance <= cutoff, i=j terms included",
    "eq1_controls": "one indicator per distinct eligible count, no global intercept",
    "bins": "x in {1, 2, >=3} against x = 0",
    "cell_winsorization": "outcome clipped at the upper percentile (numpy linear) before each "
                          "regression, over cells with eligible households",
    "engel_sample": "control arm, renters excluded, welfare winsorized 1/99 and proxy at 99 "
                    "within eligibility strata",
    "engel_se": "HC1",
    "loess": "tricube weights over floor(span*n) nearest points, no robustness iterations",
    "spline_test": "natural cubic spline, knots at quantiles j/(K+1), nested F on the K-2 "
                   "nonlinear terms",
    "scaling_se": "se_W^2 = se_Q^2/beta^2 + tau_Q^2 se_beta^2/beta^4",
    "placebo_rng": "numpy default_rng([seed, draw])",
    "placebo_rounding": "villages treated per group = floor(n*share + 0.5)",
    "household_proxies": "sum over matched buildings; night light sampled at census location",
    "roof_kmeans": "Lloyd in CIELAB, k-means++ seeding from roof_seed, at most 300 iterations "
                   "or assignment fixpoint, ties to the lower cluster index",
    "roof_material_map": "tin: L>60 and chroma<25; thatched: L<55 and hue 40-100 deg; "
                         "else painted",
}


def _f(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_rows(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([x if isinstance(x, str) else _f(x) for x in r])
    return path


def _read_rows(path: Path) -> list[dict]:
    if not path.is_file():
        raise IngestError(f"required stage output not found: {path}")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _run_dir(cfg: RunConfig) -> Path:
    d = cfg.run_dir
    d.mkdir(parents=True, exist_ok=True)
    return d


# ---------------------------------------------------------------------------
# manifest


def manifest_dict(cfg: RunConfig, stages: Optional[dict] = None) -> dict:
    return {
        "package": "satwelfare",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "config": cfg.as_dict(),
        "conventions": CONVENTIONS,
        "stages": stages or {},
    }


def update_manifest(cfg: RunConfig, stage: str, outputs: list[Path], info: Optional[dict] = None):
    """Record a stage's outputs in ``manifest.json`` (no timestamps, sorted keys)."""
    path = _run_dir(cfg) / "manifest.json"
    stages = {}
    if path.is_file():
        try:
            stages = json.loads(path.read_text()).get("stages", {})
        except json.JSONDecodeError:
            stages = {}
    stages[stage] = {"outputs": sorted(p.name for p in outputs), **(info or {})}
    path.write_text(json.dumps(manifest_dict(cfg, stages), indent=2, sort_keys=True) + "\n")
    return path


def config_from_manifest(path, out_dir: Optional[Path] = None) -> RunConfig:
    """Rebuild the run configuration recorded in a manifest."""
    from .config import _convert
    cfg = json.loads(Path(path).read_text())["config"]
    kw = {}
    for k, v in cfg.items():
        if isinstance(v, list):
            v = ", ".join(str(x) for x in v)
        kw[k] = _convert(k, "" if v is None else str(v))
    if out_dir is not None:
        kw["out_dir"] = Path(out_dir)
    return RunConfig(**kw)


# ---------------------------------------------------------------------------
# stages


def stage_ingest(cfg: RunConfig) -> dict:
    """Validate raw inputs and write canonical tables plus the roof model."""
    out = _run_dir(cfg)
    reports = {}
    try:
        villages = load_villages(cfg.input_path("villages"))
        census, reports["census"] = load_census(cfg.input_path("census"), villages,
                                                outlier_distance_m=cfg.outlier_distance_m,
                                                skip_threshold=cfg.census_skip_threshold)
        survey, reports["survey"] = load_survey(cfg.input_path("survey"),
                                                total_tolerance=cfg.survey_total_tolerance)
        raw, reports["buildings"] = load_buildings(cfg.input_path("buildings"),
                                                   default_zoom=cfg.default_zoom)
        if cfg.night_path is not None:
            load_night_raster(cfg.night_path, cfg.night_nodata)
    except ValidationThresholdError as exc:
        reports[Path(exc.report.source).stem] = exc.report
        _write_ingest_report(out, reports)
        raise
    buildings, model, erep = enrich_buildings(raw, tolerance=cfg.simplify_tolerance_px,
                                              k=cfg.roof_clusters, seed=cfg.roof_seed)
    paths = [
        _write_ingest_report(out, reports, erep),
        out / "villages.csv", out / "households.csv", out / "survey.csv",
        out / "buildings.csv", out / "roof_model.txt", out / "roof_palette.csv",
    ]
    write_villages(paths[1], villages)
    write_households(paths[2], census)
    write_survey(paths[3], survey)
    write_enriched(paths[4], buildings)
    save_model(model, paths[5])
    pal = palette_rows(model)
    _write_rows(paths[6], list(pal[0]), [list(r.values()) for r in pal])
    info = {"households": len(census), "surveys": len(survey), "buildings": len(buildings),
            "imputed_gps": sum(reports["census"].count(k)
                               for k in ("imputed_missing_gps", "imputed_outlier"))}
    update_manifest(cfg, "ingest", paths, info)
    return {"paths": paths, "reports": reports, "enrich": erep, **info}


def _write_ingest_report(out: Path, reports: dict, enrich=None) -> Path:
    doc = {k: r.as_dict() for k, r in reports.items()}
    if enrich is not None:
        doc["enrich"] = {"n_input": enrich.n_input, "n_output": enrich.n_output,
                         "dropped": dict(sorted(enrich.dropped.items()))}
    path = out / "ingest_report.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def stage_rasterize(cfg: RunConfig) -> dict:
    out = _run_dir(cfg)
    households = read_households(out / "households.csv")
    buildings = read_enriched(out / "buildings.csv")
    night = load_night_raster(cfg.night_path, cfg.night_nodata) if cfg.night_path else None
    cells = build_intensity_raster(households, cfg.grid_res)
    cells = build_outcome_rasters(buildings, night, cells)
    cells.to_csv(out / "cells.csv")
    diag = {k: (float(v) if isinstance(v, float) else int(v)) for k, v in cells.diagnostics.items()}
    diag["n_cells"] = len(cells)
    update_manifest(cfg, "rasterize", [out / "cells.csv"], diag)
    return {"cells": cells, **diag}


def stage_match(cfg: RunConfig) -> dict:
    out = _run_dir(cfg)
    households = read_households(out / "households.csv")
    buildings = read_enriched(out / "buildings.csv")
    survey, _ = load_survey(out / "survey.csv")
    night = load_night_raster(cfg.night_path, cfg.night_nodata) if cfg.night_path else None
    m = match_buildings_to_census(buildings, households, cfg.match_radius_m)
    m = match_survey_to_census(survey, households, cfg.match_radius_m, result=m)
    table = build_matched_table(m, buildings, survey, households, night)
    table.to_csv(out / "matched.csv")
    diag = {k: int(v) for k, v in sorted(m.diagnostics.items())}
    diag["matched_households"] = len(table)
    update_manifest(cfg, "match", [out / "matched.csv"], diag)
    return {"table": table, **diag}


def _load_cells(cfg: RunConfig) -> CellTable:
    return CellTable.from_csv(_run_dir(cfg) / "cells.csv", cfg.grid_res)


def _usable_outcomes(cells: CellTable, names) -> list[str]:
    keep = []
    for p in names:
        if np.isfinite(cells.outcome(PROXY_OUTCOME[p])).sum() == 0:
            warnings.warn(f"outcome {p} has no finite cell values; skipped", stacklevel=3)
            continue
        keep.append(p)
    return keep


def _effect_row(estimator: str, outcome: str, e: EffectEstimate) -> list:
    return [estimator, outcome, e.coefficient, e.se, e.ci95[0], e.ci95[1], e.t_stat, e.p_value,
            e.n, e.df]


def stage_estimate(cfg: RunConfig) -> dict:
    """Pooled and binned cell regressions for every configured outcome."""
    out = _run_dir(cfg)
    cells = _load_cells(cfg)
    winsor = WinsorSpec(upper_pct=cfg.outcome_winsor_upper)
    spatial = SpatialKernel(cells.lon, cells.lat, cfg.conley_cutoff_m)
    pooled, binned, rows, brows = {}, {}, [], []
    for p in _usable_outcomes(cells, cfg.outcomes):
        y = PROXY_OUTCOME[p]
        pooled[p] = estimate_pooled(cells, y, cfg.conley_cutoff_m, winsor, spatial,
                                    method=cfg.conley_method)
        rows.append(_effect_row("pooled", p, pooled[p]))
        binned[p] = estimate_binned(cells, y, cfg.conley_cutoff_m, winsor, spatial,
                                    method=cfg.conley_method)
        n = binned[p].n
        df = next((e.df for e in binned[p].effects.values()), None)
        brows.append(["binned", p, "0", 0.0, 0.0, 0.0, 0.0, None, None, n, df])
        for lab in ("1", "2", "2+"):
            e = binned[p].effects.get(lab)
            if e is None:
                brows.append(["binned", p, lab, None, None, None, None, None, None, n, df])
            else:
                brows.append(["binned", p, lab] + _effect_row("", "", e)[2:])
    paths = [_write_rows(out / "effects.csv", EFFECT_COLUMNS, rows),
             _write_rows(out / "binned_effects.csv",
                         EFFECT_COLUMNS[:2] + ["bin"] + EFFECT_COLUMNS[2:], brows)]
    update_manifest(cfg, "estimate", paths)
    return {"pooled": pooled, "binned": binned, "paths": paths}


def stage_placebo(cfg: RunConfig, binned: bool = True) -> dict:
    out = _run_dir(cfg)
    villages = load_villages(out / "villages.csv")
    households = read_households(out / "households.csv")
    cells = _load_cells(cfg)
    winsor = WinsorSpec(upper_pct=cfg.outcome_winsor_upper)
    spatial = SpatialKernel(cells.lon, cells.lat, cfg.conley_cutoff_m)
    rows, srows, draws = [], [], {}
    for p in _usable_outcomes(cells, cfg.placebo_outcomes):
        ds = placebo_run(villages, households, cells, PROXY_OUTCOME[p], cfg.placebo_n_sims,
                         cfg.placebo_seed, cfg.conley_cutoff_m, winsor, spatial, cfg.threads,
                         binned)
        draws[p] = ds
        for d in ds:
            head = [p, d.seed[1], len(d.high_groups), len(d.treated_villages)]
            rows.append(head + ["pooled"] + _effect_row("", "", d.pooled)[2:])
            if d.binned is not None:
                for lab, e in d.binned.effects.items():
                    rows.append(head + [lab] + _effect_row("", "", e)[2:])
        srows.append(placebo_summary(p, [d.pooled for d in ds]))
    paths = [_write_rows(out / "placebo.csv",
                         ["outcome", "draw", "n_high_groups", "n_treated_villages", "term",
                          "coefficient", "se", "ci_lo", "ci_hi", "t", "p", "n", "df"], rows),
             _write_rows(out / "placebo_summary.csv",
                         ["outcome", "n_draws", "mean", "sd", "mc_se", "rejection_rate"], srows)]
    update_manifest(cfg, "placebo", paths, {"n_sims": cfg.placebo_n_sims,
                                            "seed": cfg.placebo_seed})
    return {"draws": draws, "paths": paths}


def placebo_summary(outcome: str, pooled: list) -> list:
    b = np.array([e.coefficient for e in pooled])
    t = np.array([e.t_stat for e in pooled])
    sd = float(b.std(ddof=1)) if b.size > 1 else math.nan
    return [outcome, b.size, float(b.mean()), sd, sd / math.sqrt(b.size),
            float(np.mean(np.abs(t) > 1.96))]


def _engel_obs(cfg: RunConfig, table: MatchedTable, proxy: str, welfare: str, arms):
    return build_engel_observations(
        table, proxy, welfare, arms, cfg.exclude_renters,
        WinsorSpec(upper_pct=cfg.welfare_winsor_upper, lower_pct=cfg.welfare_winsor_lower),
        WinsorSpec(upper_pct=cfg.proxy_winsor_upper))


def stage_engel(cfg: RunConfig) -> dict:
    """Linear and LOESS Engel curves, linearity tests and arm-conditional fits."""
    out = _run_dir(cfg)
    table = MatchedTable.from_csv(out / "matched.csv")
    erows, lrows, trows, arows, fits = [], [], [], [], {}
    for p in cfg.proxies:
        for w in cfg.welfare_measures:
            try:
                obs = _engel_obs(cfg, table, p, w, cfg.engel_arms)
                fit = fit_engel_linear(obs, proxy=p, welfare=w)
            except (EmptySampleError, EngelError) as exc:
                warnings.warn(f"Engel fit {p}/{w} skipped: {exc}", stacklevel=2)
                continue
            fits[(p, w)] = fit
            erows.append([p, w, fit.alpha, fit.beta, fit.se_alpha, fit.se_beta,
                          fit.rel_se_beta if fit.beta != 0 else None, fit.n])
            try:
                curve = fit_engel_loess(obs, span=cfg.loess_span, degree=cfg.loess_degree,
                                        n_grid=cfg.loess_grid_points)
                for g, f_, s_, lo, hi in zip(curve.grid, curve.fitted, curve.se, curve.lower,
                                             curve.upper):
                    lrows.append([p, w, g, f_, s_, lo, hi, fit.predict(g)])
            except (EngelError, np.linalg.LinAlgError) as exc:
                warnings.warn(f"LOESS {p}/{w} skipped: {exc}", stacklevel=2)
            try:
                lt = test_engel_linearity(obs, n_knots=cfg.spline_knots,
                                          alpha=cfg.linearity_alpha)
                trows.append([p, w, lt.F, lt.df_num, lt.df_den, lt.p_value, lt.reject,
                              " ".join(repr(k) for k in lt.knots)])
            except EngelError as exc:
                warnings.warn(f"linearity test {p}/{w} skipped: {exc}", stacklevel=2)
            try:
                treat = _engel_obs(cfg, table, p, w, ("treatment",))
                ctrl = _engel_obs(cfg, table, p, w, ("control",))
                ac = compare_arms(treat, ctrl)
            except (EmptySampleError, EngelError):
                continue
            for arm, f_ in (("treatment", ac.treatment), ("control", ac.control)):
                arows.append([p, w, arm, f_.alpha, f_.beta, f_.se_beta, f_.n, ac.at_W,
                              ac.gap, ac.se_gap, ac.z, ac.p_value])
    paths = [
        _write_rows(out / "engel.csv", ["proxy", "welfare", "alpha", "beta", "se_alpha",
                                        "se_beta", "rel_se_beta", "n"], erows),
        _write_rows(out / "loess.csv", ["proxy", "welfare", "W", "fitted", "se", "lower",
                                        "upper", "linear"], lrows),
        _write_rows(out / "linearity.csv", ["proxy", "welfare", "F", "df_num", "df_den", "p",
                                            "reject", "knots"], trows),
        _write_rows(out / "arm_comparison.csv",
                    ["proxy", "welfare", "arm", "alpha", "beta", "se_beta", "n", "at_W", "gap",
                     "se_gap", "z", "p"], arows),
    ]
    update_manifest(cfg, "engel", paths)
    return {"fits": fits, "paths": paths}


def stage_scale(cfg: RunConfig) -> dict:
    """Scale pooled proxy effects into welfare effects through the Engel slopes."""
    out = _run_dir(cfg)
    effects = {r["outcome"]: r for r in _read_rows(out / "effects.csv")
               if r["estimator"] == "pooled"}
    engel = {(r["proxy"], r["welfare"]): r for r in _read_rows(out / "engel.csv")}
    rows, crows, scaled = [], [], {}
    w = cfg.scale_welfare
    for p in cfg.proxies:
        if p not in effects or (p, w) not in engel:
            continue
        e, g = effects[p], engel[(p, w)]
        tq, sq = float(e["coefficient"]), float(e["se"])
        b, sb = float(g["beta"]), float(g["se_beta"])
        if b == 0.0:
            warnings.warn(f"{p}: Engel slope is zero; welfare effect not identified",
                          stacklevel=2)
            rows.append([p, w, tq, sq, b, sb, None, None, None, None, "beta_zero"])
            continue
        s = scale_values(tq, sq, b, sb, p, w)
        scaled[p] = s
        rows.append([p, w, tq, sq, b, sb, s.tau_w, s.se, s.ci95[0], s.ci95[1], "proxy"])
        if tq != 0.0:
            chk = check_delta_identity(tq, (float(e["ci_lo"]), float(e["ci_hi"])), s.tau_w,
                                       s.ci95)
            crows.append([p, w, chk.rel_se_tau_q, chk.rel_se_tau_w, chk.implied_beta,
                          chk.implied_rel_se_beta, sb / abs(b), chk.consistent])
    if cfg.survey_benchmark is not None:
        est, lo, hi = cfg.survey_benchmark
        rows.append(["survey", w, None, None, None, None, est, (hi - lo) / (2 * 1.96), lo, hi,
                     "benchmark"])
    paths = [
        _write_rows(out / "scaled_effects.csv",
                    ["proxy", "welfare", "tau_q", "se_tau_q", "beta", "se_beta", "tau_w", "se",
                     "ci_lo", "ci_hi", "source"], rows),
        _write_rows(out / "delta_check.csv",
                    ["proxy", "welfare", "rel_se_tau_q", "rel_se_tau_w", "implied_beta",
                     "implied_rel_se_beta", "rel_se_beta", "consistent"], crows),
    ]
    update_manifest(cfg, "scale", paths)
    return {"scaled": scaled, "paths": paths}


def stage_report(cfg: RunConfig) -> dict:
    from .report import write_reports
    paths = write_reports(cfg)
    update_manifest(cfg, "report", paths)
    return {"paths": paths}


STAGES = {
    "ingest": stage_ingest,
    "rasterize": stage_rasterize,
    "match": stage_match,
    "estimate": stage_estimate,
    "engel": stage_engel,
    "scale": stage_scale,
    "placebo": stage_placebo,
    "report": stage_report,
}

DEFAULT_SEQUENCE = ("ingest", "rasterize", "match", "estimate", "engel", "scale", "report")


def run_all(cfg: RunConfig, stages=DEFAULT_SEQUENCE) -> dict:
    return {name: STAGES[name](cfg) for name in stages}
