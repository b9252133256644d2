import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_collisions, brute_nearest
from satwelfare.geo import EARTH_RADIUS_M, GeoPoint
from satwelfare.ingest import HouseholdRecord, SurveyRecord
from satwelfare.match import (EmptySampleError, MatchedTable, build_engel_observations,
                              build_matched_table, match_buildings_to_census,
                              match_survey_to_census, nearest_within, resolve_collisions)
from satwelfare.roof import BuildingRow, LabColor

M_DEG = math.degrees(1.0 / EARTH_RADIUS_M)   # one meter of latitude, in degrees


def north(m, lon=34.0, lat=0.0):
    return GeoPoint(lon, lat + m * M_DEG)


def household(i, p, eligible=True, treated=False):
    return HouseholdRecord(f"h{i}", "v", p, eligible, treated)


def survey(sid, p, total=1000.0, renter=False, arm="control"):
    return SurveyRecord(sid, p, 500.0, total / 2, total / 2, total, renter, arm)


def building(i, p, area=20.0, material="tin"):
    return BuildingRow(f"b{i}", p, area, material, LabColor(70, 0, 0))


def planted(seed, nq, nr, spread=0.05):
    rng = np.random.default_rng(seed)
    rlon = 34.2 + rng.uniform(-spread, spread, nr)
    rlat = rng.uniform(-spread, spread, nr)
    # duplicated reference coordinates: ties must go to the lower index
    dup = rng.choice(nr, nr // 50, replace=False)
    src = rng.choice(nr, nr // 50)
    rlon[dup], rlat[dup] = rlon[src], rlat[src]
    qlon = 34.2 + rng.uniform(-spread * 1.1, spread * 1.1, nq)
    qlat = rng.uniform(-spread * 1.1, spread * 1.1, nq)
    # queries just inside and just outside the radius of a reference point
    k = nq // 20
    j = rng.choice(nr, 2 * k)
    qlon[:2 * k] = rlon[j]
    qlat[:2 * k] = rlat[j] + np.r_[np.full(k, 249.0), np.full(k, 251.0)] * M_DEG
    return qlon, qlat, rlon, rlat


class TestNearest:
    def test_closest_of_two(self):
        idx, d = nearest_within([34.0], [0.0], [34.0, 34.0], [300 * M_DEG, 100 * M_DEG], 250)
        assert idx[0] == 1 and d[0] == pytest.approx(100.0, abs=1e-6)

    def test_strict_radius(self):
        idx, d = nearest_within([34.0], [0.0], [34.0], [251 * M_DEG], 250)
        assert idx[0] == -1 and np.isnan(d[0])

    def test_duplicate_reference_tie(self):
        idx, _ = nearest_within([34.0], [0.0], [34.1, 34.0, 34.0], [0.0, 10 * M_DEG, 10 * M_DEG],
                                250)
        assert idx[0] == 1

    def test_empty(self):
        idx, d = nearest_within([], [], [34.0], [0.0], 250)
        assert idx.size == 0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_brute_force_oracle(self, seed):
        qlon, qlat, rlon, rlat = planted(seed, 2000, 800)
        idx, d = nearest_within(qlon, qlat, rlon, rlat, 250.0)
        ref_idx, ref_d = brute_nearest(qlon, qlat, rlon, rlat, 250.0)
        assert np.array_equal(idx, ref_idx)
        ok = idx >= 0
        assert np.allclose(d[ok], ref_d[ok], rtol=0, atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6), st.floats(10, 500), st.floats(10, 500))
    def test_radius_monotone(self, seed, r1, r2):
        qlon, qlat, rlon, rlat = planted(seed, 200, 100, spread=0.01)
        lo, hi = sorted((r1, r2))
        a, _ = nearest_within(qlon, qlat, rlon, rlat, lo)
        b, _ = nearest_within(qlon, qlat, rlon, rlat, hi)
        assert np.all(b[a >= 0] == a[a >= 0])
        assert (b >= 0).sum() >= (a >= 0).sum()


class TestCollisions:
    def test_closest_survey_kept(self):
        census = [household(0, north(0))]
        res = match_survey_to_census([survey("s1", north(150)), survey("s2", north(100))], census)
        assert res.survey_to_census.tolist() == [-1, 0]
        assert res.diagnostics["surveys_lost_collision"] == 1

    def test_single_match(self):
        res = match_survey_to_census([survey("s1", north(50))], [household(0, north(0))])
        assert res.survey_to_census.tolist() == [0]

    def test_tie_smaller_key(self):
        target = np.array([3, 3, 3])
        dist = np.array([10.0, 10.0, 12.0])
        assert resolve_collisions(target, dist, ["zeta", "alpha", "a"]).tolist() == [-1, 3, -1]

    @pytest.mark.parametrize("seed", [0, 1])
    def test_brute_force_oracle(self, seed):
        qlon, qlat, rlon, rlat = planted(seed, 3000, 600, spread=0.02)
        # duplicated queries produce exact distance ties on a shared target
        qlon[-100:], qlat[-100:] = qlon[:100], qlat[:100]
        rng = np.random.default_rng(seed)
        keys = [f"s{v:05d}" for v in rng.permutation(len(qlon))]
        idx, d = nearest_within(qlon, qlat, rlon, rlat, 250.0)
        got = resolve_collisions(idx, d, keys)
        ref = brute_collisions(idx, d, keys)
        assert np.array_equal(got, ref)
        kept = got[got >= 0]
        assert kept.size == np.unique(kept).size


class TestMatchedTable:
    def setup_method(self):
        # ten households 1 km apart, each with two buildings and one survey
        self.census = [household(i, north(1000 * i)) for i in range(10)]
        self.buildings = [building(2 * i + k, north(1000 * i + 20 + 10 * k), 10.0 + i,
                                   "tin" if k else "thatched") for i in range(10) for k in (0, 1)]
        self.surveys = [survey(f"s{i}", north(1000 * i - 30), total=1000.0 + 100 * i,
                               renter=(i == 4), arm="treatment" if i % 2 else "control")
                        for i in range(10)]

    def table(self):
        res = match_buildings_to_census(self.buildings, self.census)
        res = match_survey_to_census(self.surveys, self.census, result=res)
        return build_matched_table(res, self.buildings, self.surveys, self.census)

    def test_ten_triples(self):
        t = self.table()
        assert len(t) == 10 and t.n_buildings.tolist() == [2] * 10
        assert t.q["footprint"].tolist() == [2 * (10.0 + i) for i in range(10)]
        assert t.q["tin_area"].tolist() == [10.0 + i for i in range(10)]
        obs = build_engel_observations(self.table(), arms=None, exclude_renters=False,
                                       welfare_winsor=None, proxy_winsor=None)
        assert len(obs) == 10

    def test_renter_excluded(self):
        obs = build_engel_observations(self.table(), arms=None, welfare_winsor=None,
                                       proxy_winsor=None)
        assert len(obs) == 9 and "h4" not in {o.household_key for o in obs}

    def test_arm_filter(self):
        obs = build_engel_observations(self.table(), arms=("control",))
        assert {o.arm for o in obs} == {"control"} and len(obs) == 4

    def test_empty_names_filter(self):
        self.surveys = [survey(s.survey_id, s.location, renter=True) for s in self.surveys]
        with pytest.raises(EmptySampleError, match="renter"):
            build_engel_observations(self.table())
        self.surveys = [survey(s.survey_id, s.location, arm="treatment") for s in self.surveys]
        with pytest.raises(EmptySampleError, match="arm filter"):
            build_engel_observations(self.table(), arms=("control",))

    def test_csv_round_trip(self, tmp_path):
        t = self.table()
        t.to_csv(tmp_path / "m.csv")
        back = MatchedTable.from_csv(tmp_path / "m.csv")
        assert back.census_id == t.census_id and back.survey_id == t.survey_id
        for p in ("footprint", "tin_area"):
            assert np.array_equal(back.q[p], t.q[p])
        assert np.array_equal(back.is_renter, t.is_renter)
