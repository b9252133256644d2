import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from skimage.color import rgb2lab

from satwelfare.geo import PixelPolygon, polygon_area_m2, simplify_polygon
from satwelfare.ingest import BuildingFeatureRaw
from satwelfare.roof import (LabColor, RoofClusterModel, RoofModelError, assign_material,
                             default_material_map, enrich_buildings, fit_roof_clusters,
                             load_model, read_enriched, rgb_to_lab, rgb_to_lab_array, save_model,
                             write_enriched)


class TestLab:
    def test_white(self):
        c = rgb_to_lab((255, 255, 255))
        assert c.L == pytest.approx(100.0, abs=0.01)
        assert abs(c.a) < 0.05 and abs(c.b) < 0.05

    def test_black(self):
        assert rgb_to_lab((0, 0, 0)).as_tuple() == pytest.approx((0, 0, 0), abs=1e-12)

    def test_red(self):
        assert rgb_to_lab((255, 0, 0)).as_tuple() == pytest.approx((53.24, 80.09, 67.20), abs=0.1)

    def test_against_skimage(self):
        rng = np.random.default_rng(0)
        rgb = rng.uniform(0, 255, (500, 3))
        ours = rgb_to_lab_array(rgb)
        ref = rgb2lab((rgb / 255.0)[None], illuminant="D65", observer="2")[0]
        assert np.max(np.abs(ours - ref)) < 0.01

    def test_injective_on_grid(self):
        levels = np.linspace(0, 255, 17)
        rgb = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), -1).reshape(-1, 3)
        lab = np.round(rgb_to_lab_array(rgb), 6)
        assert len(np.unique(lab, axis=0)) == 17 ** 3

    def test_range_check(self):
        with pytest.raises(ValueError):
            rgb_to_lab((256, 0, 0))


def blobs(seed=0, n=50):
    rng = np.random.default_rng(seed)
    means = np.array([[30.0, 10.0, 20.0], [70.0, 0.0, 0.0], [50.0, 40.0, -30.0]])
    pts = np.concatenate([m + rng.normal(0, 0.5, (n, 3)) for m in means])
    return pts, means, np.repeat(np.arange(3), n)


class TestClustering:
    def test_blob_means(self):
        pts, means, lab = blobs()
        model = fit_roof_clusters(pts, k=3, seed=1)
        got = model.centroid_array[np.argsort(model.centroid_array[:, 0])]
        want = np.array([pts[lab == j].mean(axis=0) for j in range(3)])
        want = want[np.argsort(want[:, 0])]
        assert np.max(np.abs(got - want)) < 1e-6

    def test_duplication_invariant(self):
        pts, _, _ = blobs(3)
        a = fit_roof_clusters(pts, k=3, seed=7)
        b = fit_roof_clusters(np.concatenate([pts, pts[::-1]]), k=3, seed=7)
        assert np.allclose(a.centroid_array, b.centroid_array, atol=1e-12)

    def test_k1_global_mean(self):
        pts, _, _ = blobs(4)
        m = fit_roof_clusters(pts, k=1, seed=0)
        assert np.allclose(m.centroid_array[0], pts.mean(axis=0), atol=1e-10)

    def test_too_few_distinct(self):
        with pytest.raises(RoofModelError):
            fit_roof_clusters([(1, 2, 3)] * 10 + [(4, 5, 6)], k=3)

    def test_reproducible_and_wcss_decreases(self):
        rng = np.random.default_rng(9)
        pts = rng.uniform(0, 100, (300, 3))
        a = fit_roof_clusters(pts, k=8, seed=2)
        b = fit_roof_clusters(pts, k=8, seed=2)
        assert np.array_equal(a.centroid_array, b.centroid_array)
        assert a.wcss_history[-1] <= a.wcss_history[0]
        assert all(x >= y - 1e-9 for x, y in zip(a.wcss_history, a.wcss_history[1:]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10 ** 6), st.integers(1, 6))
    def test_labels_are_nearest(self, seed, k):
        pts = np.random.default_rng(seed).uniform(0, 100, (40, 3))
        m = fit_roof_clusters(pts, k=k, seed=seed)
        d = ((pts[:, None] - m.centroid_array[None]) ** 2).sum(-1)
        assert np.array_equal(m.predict(pts), np.argmin(d, axis=1))


def model_from(cents, mats):
    return RoofClusterModel(len(cents), [LabColor(*c) for c in cents], dict(enumerate(mats)), 0)


class TestMaterial:
    def test_centroid_color(self):
        m = model_from([(80, 0, 0), (40, 10, 20), (50, 60, 40)], ["tin", "thatched", "painted"])
        for j, mat in enumerate(["tin", "thatched", "painted"]):
            assert assign_material(m, m.centroids[j]) == mat

    def test_tie_lower_index(self):
        m = model_from([(40, 0, 0), (60, 0, 0)], ["thatched", "tin"])
        assert assign_material(m, LabColor(50, 0, 0)) == "thatched"
        m = model_from([(60, 0, 0), (40, 0, 0)], ["tin", "thatched"])
        assert assign_material(m, LabColor(50, 0, 0)) == "tin"

    def test_default_map(self):
        gray = rgb_to_lab((200, 202, 206))
        brown = rgb_to_lab((122, 96, 62))
        blue = rgb_to_lab((44, 72, 150))
        assert default_material_map([gray, brown, blue]) == {0: "tin", 1: "thatched", 2: "painted"}

    def test_unmapped_cluster(self):
        with pytest.raises(RoofModelError):
            RoofClusterModel(2, [LabColor(1, 0, 0), LabColor(2, 0, 0)], {0: "tin"}, 0)
        with pytest.raises(RoofModelError):
            model_from([(1, 0, 0)], ["steel"])

    def test_save_load(self, tmp_path):
        pts, _, _ = blobs()
        m = fit_roof_clusters(pts, k=3, seed=1).with_materials({0: "tin", 1: "painted", 2: "tin"})
        save_model(m, tmp_path / "m.txt")
        back = load_model(tmp_path / "m.txt")
        assert back.centroids == m.centroids and back.cluster_to_material == m.cluster_to_material
        (tmp_path / "bad.txt").write_text("k = 2\ncentroid.0 = 1 2 3\ncentroid.1 = 4 5 6\n"
                                          "material.0 = tin\n")
        with pytest.raises(RoofModelError):
            load_model(tmp_path / "bad.txt")


TIN, THATCH = (200, 202, 206), (122, 96, 62)
MODEL = model_from([tuple(rgb_to_lab(TIN).as_tuple()), tuple(rgb_to_lab(THATCH).as_tuple())],
                   ["tin", "thatched"])


def square(i, side, rgb):
    x0 = 100 + 40 * (i % 10)
    y0 = 100 + 40 * (i // 10)
    ring = ((x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side))
    return BuildingFeatureRaw(f"b{i}", PixelPolygon(ring, 34.2, 0.05, 19), rgb)


class TestEnrich:
    def test_composition(self):
        raw = [square(0, 20, TIN), square(1, 12, THATCH)]
        out, _, rep = enrich_buildings(raw, MODEL)
        for r, b in zip(raw, out):
            assert b.footprint_m2 == polygon_area_m2(simplify_polygon(r.polygon, 3))
        assert [b.material for b in out] == ["tin", "thatched"]
        assert rep.n_output == 2

    def test_all_thatched(self):
        out, _, _ = enrich_buildings([square(i, 15, THATCH) for i in range(8)], MODEL)
        assert sum(b.footprint_m2 for b in out if b.material == "tin") == 0.0

    def test_mixed_tin_sum(self):
        rng = np.random.default_rng(0)
        raw = [square(i, int(rng.integers(8, 30)), TIN if rng.random() < 0.5 else THATCH)
               for i in range(40)]
        out, _, _ = enrich_buildings(raw, MODEL)
        hand = sum(polygon_area_m2(r.polygon) for r in raw if r.mean_rgb == TIN)
        assert sum(b.footprint_m2 for b in out if b.material == "tin") == pytest.approx(hand)
        assert [b.building_id for b in out] == [r.building_id for r in raw]

    def test_degenerate_dropped(self):
        sliver = BuildingFeatureRaw("s", PixelPolygon(((0, 0), (50, 0.5), (100, 0), (50, 1.0)),
                                                      34.2, 0.05, 19), TIN)
        out, _, rep = enrich_buildings([square(0, 20, TIN), sliver], MODEL)
        assert [b.building_id for b in out] == ["b0"] and sum(rep.dropped.values()) == 1

    def test_enriched_round_trip(self, tmp_path):
        out, _, _ = enrich_buildings([square(i, 14, TIN) for i in range(3)], MODEL)
        write_enriched(tmp_path / "b.csv", out)
        back = read_enriched(tmp_path / "b.csv")
        assert [(b.building_id, b.centroid, b.footprint_m2, b.lab) for b in back] == \
               [(b.building_id, b.centroid, b.footprint_m2, b.lab) for b in out]
