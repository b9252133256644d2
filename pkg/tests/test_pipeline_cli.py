import json
import re
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import SMALL
from satwelfare import cli, pipeline
from satwelfare.config import (RunConfig, format_config, load_config, parse_config_text)
from satwelfare.geo import ConfigurationError
from satwelfare.rasterize import CellTable, WinsorSpec, winsorize
from satwelfare.report import color_for, map_values, render_map
from satwelfare.synth import WorldPaths, generate_world


@pytest.fixture(scope="module")
def small_run(small_world, tmp_path_factory):
    """Whole pipeline (with a few placebo draws) on the small world."""
    paths, truth = small_world
    out = tmp_path_factory.mktemp("run")
    cfg = replace(load_config(paths.config), out_dir=out, placebo_n_sims=5)
    seq = list(pipeline.DEFAULT_SEQUENCE)
    seq.insert(seq.index("scale"), "placebo")
    res = pipeline.run_all(cfg, seq)
    return cfg, res, truth


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = RunConfig(census_path=tmp_path / "c.csv", out_dir=tmp_path / "o", grid_res=0.002,
                        outcomes=("footprint",),
                        survey_benchmark=(400.0, 100.0, 700.0), exclude_renters=False)
        back = parse_config_text(format_config(cfg), tmp_path)
        assert back == cfg

    def test_relative_paths(self, tmp_path):
        (tmp_path / "run.cfg").write_text("census_path = in/census.csv  # comment\n")
        assert load_config(tmp_path / "run.cfg").census_path == tmp_path / "in" / "census.csv"

    @pytest.mark.parametrize("text, match", [
        ("colour = red\n", "unknown config key"),
        ("outcomes = footprint, rooftops\n", "rooftops"),
        ("conley_cutoff_m = -5\n", "conley_cutoff_m"),
        ("loess_span = 1.5\n", "loess_span"),
        ("bins = 0, 1\n", "bins"),
        ("placebo_n_sims = many\n", "placebo_n_sims"),
    ])
    def test_errors(self, text, match):
        with pytest.raises(ConfigurationError, match=match):
            parse_config_text(text)

    def test_default_out_dir_next_to_config(self, tmp_path):
        (tmp_path / "run.cfg").write_text("grid_res = 0.005\n")
        assert load_config(tmp_path / "run.cfg").run_dir == tmp_path / "run"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError, match="nope.cfg"):
            load_config(tmp_path / "nope.cfg")


class TestPipeline:
    def test_outputs(self, small_run):
        cfg, res, _ = small_run
        out = cfg.run_dir
        for name in ("ingest_report.json", "cells.csv", "matched.csv", "effects.csv",
                     "binned_effects.csv", "placebo.csv", "placebo_summary.csv", "engel.csv",
                     "loess.csv", "linearity.csv", "arm_comparison.csv", "scaled_effects.csv",
                     "delta_check.csv", "manifest.json", "roof_palette.csv", "map_footprint.svg",
                     "effects.svg", "engel.svg", "scaled_effects.svg"):
            assert (out / name).is_file(), name

    def test_ingest_report(self, small_run):
        cfg, _, truth = small_run
        rep = json.loads((cfg.run_dir / "ingest_report.json").read_text())
        text = json.dumps(rep)
        assert text.count("imputed_outlier") >= truth.counts["gps_outliers"]

    def test_cells_match_truth_counts(self, small_run):
        cfg, res, truth = small_run
        cells = CellTable.from_csv(cfg.run_dir / "cells.csv", cfg.grid_res)
        assert cells.e.sum() == truth.counts["eligible"]
        assert cells.x.sum() == truth.counts["treated"]

    def test_binned_has_reference_row(self, small_run):
        cfg, _, _ = small_run
        rows = pipeline._read_rows(cfg.run_dir / "binned_effects.csv")
        ref = [r for r in rows if r["bin"] == "0"]
        assert ref and all(float(r["coefficient"]) == 0.0 for r in ref)

    def test_scaled_consistent_with_inputs(self, small_run):
        cfg, _, _ = small_run
        eff = {r["outcome"]: r for r in pipeline._read_rows(cfg.run_dir / "effects.csv")}
        eng = {(r["proxy"], r["welfare"]): r for r in pipeline._read_rows(cfg.run_dir / "engel.csv")}
        for r in pipeline._read_rows(cfg.run_dir / "scaled_effects.csv"):
            if r["proxy"] not in eff:
                continue
            tau, beta = float(eff[r["proxy"]]["coefficient"]), \
                float(eng[(r["proxy"], cfg.scale_welfare)]["beta"])
            assert float(r["tau_w"]) == pytest.approx(tau / beta, rel=1e-12)

    def test_manifest(self, small_run):
        cfg, _, _ = small_run
        m = json.loads((cfg.run_dir / "manifest.json").read_text())
        assert {"config", "conventions", "stages"} <= set(m)
        assert set(m["stages"]) >= {"ingest", "rasterize", "match", "estimate", "engel", "scale"}
        again = pipeline.config_from_manifest(cfg.run_dir / "manifest.json")
        assert again == cfg

    def test_repeat_is_byte_identical(self, small_run, tmp_path):
        cfg, _, _ = small_run
        cfg2 = pipeline.config_from_manifest(cfg.run_dir / "manifest.json", out_dir=tmp_path)
        seq = list(pipeline.DEFAULT_SEQUENCE)
        seq.insert(seq.index("scale"), "placebo")
        pipeline.run_all(cfg2, seq)
        for p in sorted(cfg.run_dir.iterdir()):
            if p.suffix in (".csv", ".svg"):
                assert (tmp_path / p.name).read_bytes() == p.read_bytes(), p.name


class TestReport:
    def test_two_cells(self):
        svg = render_map([34.0005, 34.0015], [0.0005, 0.0005], [1.0, 3.0], 0.001, "toy")
        cells = re.search(r'<g id="cells"[^>]*>(.*?)</g>', svg, re.S).group(1)
        fills = re.findall(r'fill="(#[0-9a-f]{6})"', cells)
        assert len(fills) == 2 and fills[0] != fills[1]
        assert fills == [color_for(1.0, 1.0, 3.0), color_for(3.0, 1.0, 3.0)]

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        args = (34 + rng.uniform(0, 0.05, 200), rng.uniform(0, 0.05, 200), rng.normal(size=200),
                0.005, "t")
        assert render_map(*args) == render_map(*args)

    def test_color_bounds_are_winsorized_range(self, small_run):
        cfg, _, _ = small_run
        cells = CellTable.from_csv(cfg.run_dir / "cells.csv", cfg.grid_res)
        svg = (cfg.run_dir / "map_footprint.svg").read_text()
        vmin = float(re.search(r'data-vmin="([^"]+)"', svg).group(1))
        vmax = float(re.search(r'data-vmax="([^"]+)"', svg).group(1))
        v = map_values(cells, "y_footprint", cfg.outcome_winsor_upper)
        ref = winsorize(cells.y_footprint[cells.e > 0], WinsorSpec(cfg.outcome_winsor_upper))
        assert np.array_equal(v, ref)
        # display cells average several grid cells, so their range lies inside the data
        # range; the attributes carry four significant digits
        tol = 5e-4 * np.abs(ref).max()
        assert ref.min() - tol <= vmin <= vmax <= ref.max() + tol
        same_res = render_map(cells.lon[cells.e > 0], cells.lat[cells.e > 0], v, cfg.grid_res, "f")
        lo = float(re.search(r'data-vmin="([^"]+)"', same_res).group(1))
        hi = float(re.search(r'data-vmax="([^"]+)"', same_res).group(1))
        assert lo == pytest.approx(ref.min(), rel=1e-3) and hi == pytest.approx(ref.max(), rel=1e-3)

    def test_empty_map(self):
        assert "no cells" in render_map([], [], [], 0.005, "empty")


class TestCli:
    def test_synth_and_stage(self, tmp_path, capsys):
        world = tmp_path / "w"
        assert cli.main(["synth", "--out", str(world), "--seed", "2", "--groups", "4",
                         "--households-per-village", "30", "--set", "n_gps_outliers=3"]) == 0
        assert "households" in capsys.readouterr().out
        assert cli.main(["ingest", "-c", str(world / "run.cfg")]) == 0
        assert (world / "run" / "households.csv").is_file()

    def test_missing_file(self, tmp_path, capsys):
        (tmp_path / "run.cfg").write_text("census_path = nowhere/census.csv\n"
                                          "villages_path = nowhere/villages.csv\n"
                                          "survey_path = s.csv\nbuildings_path = b.geojson\n")
        assert cli.main(["ingest", "-c", str(tmp_path / "run.cfg")]) == 1
        assert "nowhere" in capsys.readouterr().err

    def test_threshold_exit(self, tmp_path, capsys):
        generate_world(replace(SMALL, n_malformed_census_rows=20), tmp_path)
        assert cli.main(["ingest", "-c", str(WorldPaths(tmp_path).config)]) == 2
        assert "exceeds threshold" in capsys.readouterr().err
        assert (tmp_path / "run" / "ingest_report.json").is_file()

    def test_bogus_outcome(self, small_world, tmp_path, capsys):
        paths, _ = small_world
        code = cli.main(["estimate", "-c", str(paths.config), "--out", str(tmp_path),
                         "--set", "outcomes=footprint,roofs"])
        assert code == 1 and "roofs" in capsys.readouterr().err

    def test_bad_override(self, capsys):
        assert cli.main(["report", "--set", "nonsense"]) == 1

    def test_run_from_manifest(self, small_run, tmp_path, capsys):
        cfg, _, _ = small_run
        assert cli.main(["scale", "-c", str(cfg.run_dir / "manifest.json"), "--out",
                         str(cfg.run_dir)]) == 0
        assert "tau_W" in capsys.readouterr().out
