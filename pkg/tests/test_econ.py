import warnings

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conley_meat_brute
from satwelfare.geo import ConfigurationError, GeoPoint
from satwelfare.econ.conley import SpatialKernel, conley_se, conley_vcov, hc0_vcov
from satwelfare.econ.effects import estimate_binned, estimate_pooled
from satwelfare.econ.ols import RankDeficiencyError, ols_with_categorical_controls
from satwelfare.econ.placebo import assign_two_tier, n_treated_villages, placebo_run
from satwelfare.ingest import HouseholdRecord, VillageRecord
from satwelfare.rasterize import CellTable, intensity_from_arrays


def random_field(seed, n, spread=0.05):
    rng = np.random.default_rng(seed)
    lon = 34.2 + rng.uniform(-spread, spread, n)
    lat = rng.uniform(-spread, spread, n)
    x = rng.normal(size=n)
    e = rng.integers(1, 4, n)
    y = 1.5 * x + e + rng.normal(size=n) * (1 + np.abs(x))
    return y, x, e, lon, lat


class TestOLS:
    def test_noiseless(self):
        x = np.arange(20.0)
        fit = ols_with_categorical_controls(2 * x, x, np.ones(20))
        assert fit.coef[0] == pytest.approx(2.0, abs=1e-10)

    def test_group_means(self):
        e = np.repeat([1, 2], 6)
        x = np.tile([-1.0, 1.0], 6)
        y = np.array([3, 5, 4, 4, 2, 6, 10, 12, 11, 11, 9, 13], dtype=float)
        fit = ols_with_categorical_controls(y, x, e)
        assert fit.coef[fit.index("e=1")] == pytest.approx(4.0, abs=1e-12)
        assert fit.coef[fit.index("e=2")] == pytest.approx(11.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_pinv_oracle(self, seed):
        y, x, e, _, _ = random_field(seed, 60)
        fit = ols_with_categorical_controls(y, np.column_stack([x, x ** 2]), e)
        assert np.allclose(fit.coef, np.linalg.pinv(fit.X) @ y, rtol=0, atol=1e-8)
        assert np.allclose(fit.X.T @ fit.resid, 0.0, atol=1e-9)

    def test_rank_error_names_columns(self):
        x = np.arange(10.0)
        with pytest.raises(RankDeficiencyError) as exc:
            ols_with_categorical_controls(x, np.column_stack([x, 2 * x]), np.ones(10), ["a", "b"])
        assert set(exc.value.columns) == {"a", "b"}

    def test_constant_x_is_rank_error(self):
        with pytest.raises(RankDeficiencyError, match="x0"):
            ols_with_categorical_controls(np.arange(8.0), np.full(8, 3.0), np.ones(8))


class TestConley:
    def test_zero_cutoff_is_hc0(self):
        y, x, e, lon, lat = random_field(1, 300)
        fit = ols_with_categorical_controls(y, x, e)
        V = conley_vcov(fit, lon, lat, 0.0)
        assert np.allclose(V, hc0_vcov(fit), rtol=1e-10, atol=0)
        ref = sm.OLS(y, fit.X).fit(cov_type="HC0")
        assert np.allclose(np.sqrt(np.diag(V)), ref.bse, rtol=1e-10)

    def test_full_cutoff_double_sum(self):
        y, x, e, lon, lat = random_field(2, 150, spread=0.005)
        xd = x - x.mean()
        fit = ols_with_categorical_controls(y, xd, np.ones(150))
        V = conley_vcov(fit, lon, lat, 1e6)
        s = fit.scores()[:, 0]
        oracle = s.sum() ** 2 / (xd @ xd) ** 2   # every pair counted: (sum x e)^2
        assert V[0, 0] == pytest.approx(oracle, abs=1e-10 * hc0_vcov(fit)[0, 0])

    @pytest.mark.parametrize("cutoff", [500.0, 3000.0])
    def test_brute_oracle(self, cutoff):
        y, x, e, lon, lat = random_field(3, 200)
        fit = ols_with_categorical_controls(y, x, e)
        S = fit.scores()
        fast = SpatialKernel(lon, lat, cutoff).meat(S)
        ref = conley_meat_brute(S, lon, lat, cutoff)
        assert np.allclose(fast, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())
        brute = conley_vcov(fit, lon, lat, cutoff, method="brute")
        assert np.allclose(conley_vcov(fit, lon, lat, cutoff), brute, rtol=1e-9,
                           atol=1e-12 * np.abs(brute).max())

    def test_symmetric_psd(self):
        y, x, e, lon, lat = random_field(4, 300)
        V = conley_vcov(ols_with_categorical_controls(y, x, e), lon, lat, 3000.0)
        assert np.array_equal(V, V.T)
        assert np.linalg.eigvalsh(V).min() > -1e-12 * np.abs(V).max()

    def test_negative_cutoff(self):
        with pytest.raises(ConfigurationError):
            SpatialKernel([0.0, 1.0], [0.0, 0.0], -1.0)

    def test_subset(self):
        y, x, e, lon, lat = random_field(5, 100)
        k = SpatialKernel(lon, lat, 2000.0)
        m = np.arange(100) % 3 != 0
        assert (k.subset(m).K != SpatialKernel(lon[m], lat[m], 2000.0).K).nnz == 0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(0.01, 100), st.floats(0.01, 100))
    def test_scale_equivariance(self, seed, cy, cx):
        y, x, e, lon, lat = random_field(seed, 80)
        base = ols_with_categorical_controls(y, x, e)
        scaled = ols_with_categorical_controls(cy * y, cx * x, e)
        se0 = conley_se(base, lon, lat, 3000.0)[0]
        se1 = conley_se(scaled, lon, lat, 3000.0)[0]
        assert scaled.coef[0] == pytest.approx(base.coef[0] * cy / cx, rel=1e-8)
        assert se1 == pytest.approx(se0 * cy / cx, rel=1e-8)


def cell_design(seed, n=600, effects=(0.0, 5.0, 10.0, 15.0)):
    """Cells on a grid, x in {0..4}, e >= x; y = level(e) + planted bin effect + noise."""
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n)))
    col = np.arange(n) % side + 34000
    row = np.arange(n) // side
    e = rng.integers(1, 5, n)
    x = np.minimum(rng.integers(0, 5, n), e)
    bins = np.minimum(x, 3)
    y = 2.0 * e + np.asarray(effects)[bins] + rng.normal(0, 3, n)
    cells = CellTable(0.01, col, row, x, e, y_footprint=y)
    return cells, rng


class TestEffects:
    def test_binned_recovery(self):
        truth = {"1": 5.0, "2": 10.0, "2+": 15.0}
        hits = dict.fromkeys(truth, 0)
        for seed in range(60):
            b = estimate_binned(cell_design(seed)[0], winsor=None)
            for lab, tau in truth.items():
                lo, hi = b.effects[lab].ci95
                hits[lab] += lo <= tau <= hi
        # nominal 95%; 50 of 60 is about 3 binomial sd below
        assert min(hits.values()) >= 50, hits

    def test_zero_effect_coverage(self):
        cover = 0
        for seed in range(100):
            cells, _ = cell_design(seed, n=300, effects=(0, 0, 0, 0))
            b = estimate_binned(cells, winsor=None, cutoff_m=0.0)
            cover += all(e.ci95[0] <= 0 <= e.ci95[1] for e in b.effects.values())
        # three bins jointly: about 0.95^3 if independent
        assert cover >= 80

    def test_pooled_slope(self):
        rng = np.random.default_rng(1)
        n = 800
        e = rng.integers(1, 6, n)
        x = np.minimum(rng.integers(0, 6, n), e)
        y = 3.0 * e + 7.9 * x + rng.normal(0, 4, n)
        cells = CellTable(0.01, np.arange(n) % 30, np.arange(n) // 30, x, e, y_footprint=y)
        est = estimate_pooled(cells, winsor=None)
        assert est.ci95[0] <= 7.9 <= est.ci95[1]
        assert est.df == n - 1 - 5 and est.n == n

    def test_empty_bin_dropped(self):
        cells, _ = cell_design(2)
        cells.x[:] = np.minimum(cells.x, 1)
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            b = estimate_binned(cells, winsor=None)
        assert b.dropped_bins == ["2", "2+"] and list(b.effects) == ["1"]
        assert any("dropped" in str(m.message) for m in w)

    def test_unidentified_bin_dropped(self):
        # the only cells with x >= 3 make up the whole e=9 level
        cells, _ = cell_design(5)
        cells.x[cells.x >= 3] = 2
        cells.x[:4], cells.e[:4] = 3, 9
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            b = estimate_binned(cells, winsor=None)
        assert b.dropped_bins == ["2+"] and list(b.effects) == ["1", "2"]
        assert any("do not vary" in str(m.message) for m in w)
        # the remaining bins equal a fit without the absorbed cells
        ref = estimate_binned(cells.take(np.arange(4, len(cells.x))), winsor=None)
        assert b.effects["1"].coefficient == pytest.approx(ref.effects["1"].coefficient, rel=1e-9)

    def test_constant_x(self):
        cells, _ = cell_design(3)
        cells.x[:] = 1
        with pytest.raises(RankDeficiencyError):
            estimate_pooled(cells)

    def test_nan_outcome_rows_dropped(self):
        cells, _ = cell_design(4)
        y = cells.y_footprint.copy()
        cells.y_night = y.copy()
        cells.y_night[::7] = np.nan
        a = estimate_pooled(cells, "y_night", winsor=None)
        keep = np.isfinite(cells.y_night)
        b = estimate_pooled(cells.take(np.flatnonzero(keep)), "y_night", winsor=None)
        assert a.coefficient == b.coefficient and a.se == pytest.approx(b.se, rel=1e-12)


def villages_for(n_groups, per_group=3):
    return [VillageRecord(f"v{g:03d}_{k}", GeoPoint(34.2 + 0.02 * g, 0.01 * k), f"g{g:03d}")
            for g in range(n_groups) for k in range(per_group)]


class TestPlacebo:
    @pytest.mark.parametrize("n, share, k", [(3, 2 / 3, 2), (3, 1 / 3, 1), (8, 2 / 3, 5),
                                             (9, 1 / 3, 3), (3, 0.5, 2), (1, 0.5, 1)])
    def test_rounding(self, n, share, k):
        assert n_treated_villages(n, share) == k

    def test_half_high(self):
        v = villages_for(68)
        for d in range(20):
            high, treated = assign_two_tier(v, np.random.default_rng([0, d]))
            assert len(high) == 34
            per = {}
            for t in treated:
                per[t.split("_")[0]] = per.get(t.split("_")[0], 0) + 1
            for g in range(68):
                want = 2 if f"g{g:03d}" in high else 1
                assert per.get(f"v{g:03d}", 0) == want

    def test_marginal_high_probability(self):
        v = villages_for(10)
        counts = np.zeros(10)
        draws = 4000
        for d in range(draws):
            high, _ = assign_two_tier(v, np.random.default_rng([1, d]))
            counts[[int(g[1:]) for g in high]] += 1
        assert np.all(np.abs(counts / draws - 0.5) < 4 * np.sqrt(0.25 / draws))

    def test_odd_group_count(self):
        high, _ = assign_two_tier(villages_for(7), np.random.default_rng(0))
        assert len(high) == 3

    def setup_placebo(self):
        villages = villages_for(12, 4)
        rng = np.random.default_rng(2)
        census = []
        for v in villages:
            for k in range(15):
                lon = v.centroid.lon + rng.normal(0, 0.002)
                lat = v.centroid.lat + rng.normal(0, 0.002)
                census.append(HouseholdRecord(f"{v.village_id}_{k}", v.village_id,
                                              GeoPoint(lon, lat), rng.random() < 0.5, False))
        a = {k: np.array([getattr(h, k) if k in ("eligible", "treated") else
                          getattr(h.location, k) for h in census]) for k in
             ("lon", "lat", "eligible", "treated")}
        cells = intensity_from_arrays(a["lon"], a["lat"], a["eligible"], a["treated"], 0.001)
        cells.y_footprint = rng.normal(100, 10, len(cells))
        return villages, census, cells

    def test_deterministic_and_thread_invariant(self):
        villages, census, cells = self.setup_placebo()
        a = placebo_run(villages, census, cells, n_sims=6, seed=3, binned=False)
        b = placebo_run(villages, census, cells, n_sims=6, seed=3, binned=False, threads=3)
        assert [d.pooled for d in a] == [d.pooled for d in b]
        assert [d.treated_villages for d in a] == [d.treated_villages for d in b]
        assert len({tuple(d.treated_villages) for d in a}) > 1

    def test_placebo_x_counts_eligible(self):
        villages, census, cells = self.setup_placebo()
        d = placebo_run(villages, census, cells, n_sims=1, seed=0, binned=False)[0]
        treated = set(d.treated_villages)
        n_x = sum(h.eligible and h.village_id in treated for h in census)
        # every eligible household lies in a retained cell, so x sums to n_x
        idx = cells.locate([h.location.lon for h in census], [h.location.lat for h in census])
        x = np.bincount(idx[[h.eligible and h.village_id in treated for h in census]],
                        minlength=len(cells))
        assert x.sum() == n_x
        ref = estimate_pooled(cells, x=x)
        assert ref == d.pooled
