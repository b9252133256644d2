import csv
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import SMALL
from satwelfare.config import load_config
from satwelfare.econ.engel import fit_engel_linear
from satwelfare.econ.placebo import n_treated_villages
from satwelfare.ingest import load_buildings, load_census, load_survey, load_villages
from satwelfare.synth import (GroundTruth, SynthConfig, SynthConfigError, WorldPaths,
                              config_from_dict, corrupt_engel, generate_world,
                              noiseless_quantities)


def read(path):
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestGenerate:
    def test_deterministic(self, tmp_path, small_world):
        paths, _ = small_world
        generate_world(SMALL, tmp_path)
        assert tree_bytes(tmp_path) == tree_bytes(paths.root)

    def test_seed_matters(self, tmp_path, small_world):
        paths, _ = small_world
        generate_world(replace(SMALL, seed=SMALL.seed + 1), tmp_path)
        assert WorldPaths(tmp_path).census.read_bytes() != paths.census.read_bytes()

    def test_design(self, small_world):
        paths, truth = small_world
        villages = load_villages(paths.villages)
        groups = sorted({v.saturation_group_id for v in villages})
        assert len(truth.high_groups) == len(groups) // 2
        treated = set(truth.treated_villages)
        for g in groups:
            vids = [v.village_id for v in villages if v.saturation_group_id == g]
            share = SMALL.high_saturation if g in truth.high_groups else SMALL.low_saturation
            assert sum(v in treated for v in vids) == n_treated_villages(len(vids), share)

    def test_treated_subset_of_eligible(self, small_world):
        paths, truth = small_world
        rows = read(paths.truth / "households.csv")
        el = np.array([r["eligible"] == "1" for r in rows])
        tr = np.array([r["treated"] == "1" for r in rows])
        assert not np.any(tr & ~el)
        assert tr.sum() == truth.counts["treated"]
        assert abs(el.mean() - SMALL.eligible_fraction) < 0.06

    def test_ingest_counts(self, small_world):
        paths, truth = small_world
        hh, rep = load_census(paths.census, paths.villages)
        assert rep.count("imputed_outlier") == truth.counts["gps_outliers"] == 5
        assert rep.count("imputed_missing_gps") == truth.counts["missing_gps"] == 2
        assert len(hh) == truth.counts["households"]
        raw, brep = load_buildings(paths.buildings)
        assert len(raw) == truth.counts["buildings"] and brep.n_skipped == 0
        srv, srep = load_survey(paths.survey)
        assert len(srv) == truth.counts["surveys"]
        assert srep.count("renters") == truth.counts["renters"]
        for arm, n in truth.counts["surveys_by_arm"].items():
            assert srep.count(f"arm_{arm}") == n

    def test_run_config(self, small_world):
        paths, _ = small_world
        cfg = load_config(paths.config)
        assert cfg.census_path == paths.root / "inputs" / "census.csv"
        assert cfg.run_dir == paths.root / "run"

    def test_truth_round_trip(self, small_world):
        paths, truth = small_world
        back = GroundTruth.load(paths.truth / "ground_truth.json")
        assert back == truth
        assert config_from_dict(back.config) == SMALL

    @pytest.mark.parametrize("kw", [{"eligible_fraction": 0.0}, {"n_village_groups": 1},
                                    {"villages_per_group": (3, 2)}, {"engel_shift": 50.0},
                                    {"engel_shift_proxy": "night"}])
    def test_infeasible(self, tmp_path, kw):
        with pytest.raises(SynthConfigError):
            generate_world(replace(SMALL, **kw), tmp_path)


class TestEngelTruth:
    def test_noiseless_slopes(self):
        cfg = SynthConfig()
        W = np.linspace(200, 5000, 50)
        q = noiseless_quantities(cfg, W)
        assert fit_engel_linear(W, q["footprint"]).beta == pytest.approx(cfg.beta_footprint,
                                                                          abs=1e-10)
        assert fit_engel_linear(W, q["tin_area"]).beta == pytest.approx(cfg.beta_tin_area,
                                                                         abs=1e-10)

    def test_household_engel_slope(self, tmp_path):
        cfg = replace(SMALL, seed=11, households_per_village=150.0)
        generate_world(cfg, tmp_path)
        rows = read(WorldPaths(tmp_path).truth / "households.csv")
        W = np.array([float(r["wealth"]) for r in rows])
        foot = np.array([float(r["tin_m2"]) + float(r["thatch_m2"]) for r in rows])
        fit = fit_engel_linear(W, foot)
        assert abs(fit.beta - cfg.beta_footprint) < 3 * fit.se_beta

    def test_shift_zero_identical(self, tmp_path, small_world):
        paths, _ = small_world
        corrupt_engel(SMALL, 0.0, tmp_path)
        assert tree_bytes(tmp_path) == tree_bytes(paths.root)

    def test_tin_shift(self, tmp_path, small_world):
        paths, _ = small_world
        truth = corrupt_engel(SMALL, 3.0, tmp_path)
        clean = read(paths.truth / "households.csv")
        dirty = read(WorldPaths(tmp_path).truth / "households.csv")
        for a, b in zip(clean, dirty):
            d = 3.0 if a["treated"] == "1" else 0.0
            assert float(b["tin_m2"]) - float(a["tin_m2"]) == pytest.approx(d, abs=2e-4)
            assert float(a["tin_m2"]) + float(a["thatch_m2"]) == \
                pytest.approx(float(b["tin_m2"]) + float(b["thatch_m2"]), abs=2e-4)
        assert truth.expected_bias_w["tin_area"] == pytest.approx(3.0 / SMALL.beta_tin)
        assert truth.expected_bias_w["footprint"] == 0.0
