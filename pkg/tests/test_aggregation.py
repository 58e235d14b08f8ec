import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seasonwatch.aggregation import (
    ALL_CLUSTERS,
    ChangeMetric,
    ClusterKey,
    aggregate_cluster,
    change_metric,
    clusters_of,
    downsample_hourly,
    sum_series,
)
from seasonwatch.core import HOUR, CampaignRecord, HourlySeries, RawSeries

T0 = 1_434_931_200


def camp(cid, targeting, channel):
    return CampaignRecord(cid, "USD", "active", T0 - 40 * 86400, None, targeting, channel)


def test_cluster_keys():
    assert len(ALL_CLUSTERS) == 10 and len(set(ALL_CLUSTERS)) == 10
    assert ClusterKey.parse("channel:display") == ClusterKey.channel("display")
    assert str(ClusterKey.targeting("site_list")) == "targeting:site_list"
    with pytest.raises(ValueError):
        ClusterKey.parse("channel:radio")
    with pytest.raises(ValueError):
        ClusterKey.parse("display")


def test_clusters_of():
    c = camp("a", {"behavioral", "device"}, "display")
    assert clusters_of(c) == {
        ClusterKey.targeting("behavioral"),
        ClusterKey.targeting("device"),
        ClusterKey.channel("display"),
    }


class TestDownsample:
    def test_sums_within_hour(self):
        raw = RawSeries("m", (), [T0 + 5, T0 + 100, T0 + 3599, T0 + 3600, T0 + 3 * HOUR + 1], [1, 2, 3, 10, 7])
        s = downsample_hourly(raw)
        assert s.start_hour == T0
        np.testing.assert_array_equal(s.values, [6, 10, np.nan, 7])

    def test_empty(self):
        assert len(downsample_hourly(RawSeries("m", (), [], []))) == 0

    def test_conserves_mass(self):
        rng = np.random.default_rng(0)
        ts = np.unique(rng.integers(T0, T0 + 500 * HOUR, 10_000))
        vals = rng.uniform(0, 100, len(ts))
        s = downsample_hourly(RawSeries("m", (), ts, vals))
        assert np.nansum(s.values) == pytest.approx(vals.sum(), rel=1e-12)
        # each bucket equals a brute-force sum
        for k in rng.integers(0, len(s), 50):
            h = s.start_hour + int(k) * HOUR
            sel = (ts >= h) & (ts < h + HOUR)
            if sel.any():
                assert s.values[k] == pytest.approx(vals[sel].sum())
            else:
                assert np.isnan(s.values[k])


def test_sum_series_treats_member_gaps_as_zero():
    a = HourlySeries(T0, [1.0, np.nan, 3.0, np.nan])
    b = HourlySeries(T0 + HOUR, [5.0, np.nan, np.nan, 2.0])
    s = sum_series([a, b])
    assert s.start_hour == T0
    np.testing.assert_array_equal(s.values, [1.0, 5.0, 3.0, np.nan, 2.0])


class TestAggregate:
    def setup_method(self):
        self.portfolio = [
            camp("a", {"behavioral"}, "display"),
            camp("b", {"behavioral", "device"}, "video"),
            camp("c", {"device"}, "display"),
        ]
        self.series = {
            "a": HourlySeries(T0, [1.0, 2.0, 3.0]),
            "b": HourlySeries(T0, [10.0, 20.0, 30.0]),
            "c": HourlySeries(T0, [100.0, np.nan, 300.0]),
        }

    def test_membership_sums(self):
        s = aggregate_cluster({"a", "b", "c"}, ClusterKey.targeting("behavioral"), self.series, self.portfolio)
        np.testing.assert_array_equal(s.values, [11, 22, 33])
        s = aggregate_cluster({"a", "c"}, ClusterKey.channel("display"), self.series, self.portfolio)
        np.testing.assert_array_equal(s.values, [101, 2, 303])

    def test_unstable_members_are_excluded(self):
        s = aggregate_cluster({"a"}, ClusterKey.targeting("behavioral"), self.series, self.portfolio)
        np.testing.assert_array_equal(s.values, [1, 2, 3])

    def test_empty_cluster_warns(self):
        warnings = []
        s = aggregate_cluster(set(), ClusterKey.channel("social"), self.series, self.portfolio, warnings)
        assert len(s) == 0 and "channel:social" in warnings[0]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.permutations(list(range(8))))
    def test_matches_brute_force_and_ignores_order(self, seed, perm):
        rng = np.random.default_rng(seed)
        portfolio, series = [], {}
        chans = ["display", "video", "mobile", "social"]
        for i in range(8):
            portfolio.append(camp(f"c{i}", {"behavioral"} if i % 2 else {"device"}, chans[i % 4]))
            v = rng.uniform(0, 10, 30)
            v[rng.random(30) < 0.2] = np.nan
            series[f"c{i}"] = HourlySeries(T0 + int(rng.integers(0, 5)) * HOUR, v)
        stable = {f"c{i}" for i in range(8) if rng.random() < 0.7}
        key = ClusterKey.targeting("behavioral")
        got = aggregate_cluster(stable, key, series, portfolio)
        shuffled = aggregate_cluster(stable, key, series, [portfolio[i] for i in perm])
        assert got == shuffled
        members = [c.id for c in portfolio if c.id in stable and "behavioral" in c.targeting]
        if not members:
            assert len(got) == 0
            return
        for k in range(len(got)):
            h = got.start_hour + k * HOUR
            vals = [series[m].at(h) for m in members]
            vals = [v for v in vals if v is not None]
            if vals:
                assert got.values[k] == pytest.approx(sum(vals))
            else:
                assert np.isnan(got.values[k])


class TestChangeMetric:
    def test_example(self):
        m = HourlySeries(T0, np.arange(72, dtype=float))
        d = change_metric(m, 1)
        assert np.isnan(d.d[:24]).all()
        np.testing.assert_array_equal(d.d[24:], np.full(48, 24.0))

    def test_periodic_series_gives_zero(self):
        rng = np.random.default_rng(1)
        m = HourlySeries(T0, np.tile(rng.uniform(0, 50, 168), 3))
        _, vals = change_metric(m, 7).present()
        assert len(vals) == 336 and np.all(vals == 0)

    def test_dip_echoes_one_period_later(self):
        v = np.full(24 * 10, 100.0)
        v[30:33] = 40.0
        d = change_metric(HourlySeries(T0, v), 1)
        np.testing.assert_array_equal(d.d[30:33], [-60] * 3)
        np.testing.assert_array_equal(d.d[54:57], [60] * 3)

    def test_gap_propagates(self):
        v = np.arange(60, dtype=float)
        v[10] = np.nan
        d = change_metric(HourlySeries(T0, v), 1)
        assert np.isnan(d.d[34]) and not np.isnan(d.d[35])

    def test_short_series_warns(self):
        warnings = []
        d = change_metric(HourlySeries(T0, np.ones(24)), 1, warnings=warnings)
        assert np.isnan(d.d).all() and warnings

    @given(st.integers(0, 2**32 - 1), st.floats(-10, 10), st.floats(-10, 10))
    def test_linear(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, 100))
        dx = change_metric(HourlySeries(T0, x), 1).d
        dy = change_metric(HourlySeries(T0, y), 1).d
        dz = change_metric(HourlySeries(T0, a * x + b * y), 1).d
        np.testing.assert_allclose(dz[24:], a * dx[24:] + b * dy[24:], atol=1e-9)

    @settings(max_examples=25)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2, 7]))
    def test_matches_brute_force_shift(self, seed, p):
        rng = np.random.default_rng(seed)
        v = rng.uniform(0, 10, 400)
        v[rng.random(400) < 0.1] = np.nan
        v[-1] = 1.0
        m = HourlySeries(T0, v)
        d = change_metric(m, p)
        for k, h in enumerate(d.hours().tolist()):
            now, then = m.at(h), m.at(h - p * 86400)
            if now is None or then is None:
                assert np.isnan(d.d[k])
            else:
                assert d.d[k] == now - then

    def test_csv_round_trip(self, tmp_path):
        d = change_metric(HourlySeries(T0, np.arange(30, dtype=float) * 0.1), 1, ClusterKey.channel("video"))
        d.write_csv(tmp_path / "d.csv")
        text = (tmp_path / "d.csv").read_text()
        assert text.startswith(f"hour,value\n{T0},\n")
        back = ChangeMetric.read_csv(tmp_path / "d.csv", d.cluster, 1)
        np.testing.assert_array_equal(back.d, d.d)
        assert back.start_hour == T0
