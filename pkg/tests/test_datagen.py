import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracle
from rnml_eta.datagen import (DEFAULT_START_TS, MAX_MEAN_SPEED_MPS, MIN_TRAVEL_TIME_S, Trip,
                              coverage_counts, generate_network, generate_trips, read_catalog_csv,
                              read_split, read_trips_jsonl, split_dataset, trip_travel_time, write_catalog_csv,
                              write_split, write_trips_jsonl)
from rnml_eta.errors import DataCorruptionError, InvalidArgumentError
from rnml_eta.timebins import SECONDS_PER_WEEK


def _trip(tid, links, ts=DEFAULT_START_TS, speeds=None, tt=100.0, driver=1):
    links = np.asarray(links, dtype=np.int64)
    speeds = np.full(links.size, 10.0) if speeds is None else np.asarray(speeds, dtype=np.float64)
    return Trip(tid, driver, ts, links, speeds, tt)


class TestGenerateNetwork:
    def test_three_links(self):
        cat = generate_network(3, seed=7)
        assert cat.m == 3
        assert cat.link_ids.tolist() == [1, 2, 3]
        assert np.all((cat.length_m >= 50) & (cat.length_m <= 2000))

    def test_deterministic(self):
        a, b = generate_network(1000, seed=7), generate_network(1000, seed=7)
        for name in ("length_m", "base_speed_mps", "peak_profile", "popularity"):
            assert np.array_equal(getattr(a, name), getattr(b, name))

    def test_popularity_concentration(self):
        pop = np.sort(generate_network(1000, seed=7).popularity)[::-1]
        share = pop[:100].sum() / pop.sum()
        # Direct computation from the Zipf(1.1) weights, independent of the permutation.
        w = np.arange(1, 1001, dtype=float) ** -1.1
        assert share == pytest.approx(w[:100].sum() / w.sum(), rel=1e-12)
        assert share > 0.5

    @pytest.mark.parametrize("m", [0, 1, 2])
    def test_too_few_links(self, m):
        with pytest.raises(InvalidArgumentError, match="need at least 3 links"):
            generate_network(m, seed=0)

    @given(st.integers(3, 200), st.integers(0, 2**31 - 1))
    def test_ranges(self, m, seed):
        cat = generate_network(m, seed)
        assert np.all((cat.length_m >= 50) & (cat.length_m <= 2000))
        assert np.all((cat.base_speed_mps >= 3) & (cat.base_speed_mps <= 25))
        assert np.all(cat.peak_profile > 0)
        assert np.all(cat.popularity > 0)


class TestGenerateTrips:
    def test_single_link_arithmetic(self):
        assert trip_travel_time([500.0], [10.0], [10.0]) == 60.0

    def test_outlier_bounds(self, small_catalog, small_trips):
        for t in small_trips:
            total = small_catalog.length_m[t.link_ids - 1].sum()
            assert t.travel_time_s >= MIN_TRAVEL_TIME_S
            assert total / t.travel_time_s <= MAX_MEAN_SPEED_MPS
            assert t.n_links >= 1 and t.link_speeds_mps.shape == t.link_ids.shape
            assert np.all(t.link_speeds_mps > 0)

    def test_heavy_tail(self):
        cat = generate_network(1000, seed=7)
        cov = coverage_counts(generate_trips(cat, 10000, drivers=50, seed=3), cat.m).counts
        assert np.median(cov) < np.mean(cov)

    def test_deterministic_and_worker_independent(self, small_catalog):
        a = generate_trips(small_catalog, 50, drivers=4, seed=9)
        b = generate_trips(small_catalog, 50, drivers=4, seed=9, workers=2)
        assert all(x.same_as(y) for x, y in zip(a, b)) and len(a) == len(b) == 50

    def test_exact_count(self, small_catalog):
        assert len(generate_trips(small_catalog, 17, drivers=3, seed=1)) == 17

    def test_no_consecutive_repeats(self, small_trips):
        for t in small_trips:
            assert np.all(np.diff(t.link_ids) != 0)

    def test_mean_length(self):
        cat = generate_network(500, seed=2)
        trips = generate_trips(cat, 4000, drivers=10, seed=2)
        # Geometric with mean 20, lightly biased upward by outlier redraws of short trips.
        assert 19.0 < np.mean([t.n_links for t in trips]) < 22.5

    @pytest.mark.parametrize("n,drivers", [(0, 1), (1, 0)])
    def test_bad_counts(self, small_catalog, n, drivers):
        with pytest.raises(InvalidArgumentError):
            generate_trips(small_catalog, n, drivers, seed=0)

    def test_popularity_deciles_monotone(self):
        # Aggregate coverage by popularity-rank decile, averaged over three seeds.
        totals = np.zeros(10)
        for seed in (1, 2, 3):
            cat = generate_network(500, seed)
            cov = coverage_counts(generate_trips(cat, 3000, drivers=10, seed=seed), cat.m).counts
            order = np.argsort(-cat.popularity)
            totals += np.array([cov[idx].sum() for idx in np.array_split(order, 10)])
        assert np.all(np.diff(totals) < 0)


class TestSplit:
    def test_sizes_and_order(self):
        trips = [_trip(i, [1], ts=DEFAULT_START_TS + 37 * ((i * 7919) % 100)) for i in range(100)]
        tr, va, te = split_dataset(trips, (0.8, 0.1, 0.1))
        assert (len(tr), len(va), len(te)) == (80, 10, 10)
        assert max(t.depart_ts for t in tr) <= min(t.depart_ts for t in va)
        assert max(t.depart_ts for t in va) <= min(t.depart_ts for t in te)

    def test_degenerate(self):
        trips = [_trip(i, [1]) for i in range(5)]
        tr, va, te = split_dataset(trips, (1.0, 0.0, 0.0))
        assert len(tr) == 5 and not va and not te

    def test_week_boundaries(self):
        # One trip per hour across 27 weeks: 25/1/1 weeks land exactly on week multiples.
        hours = 27 * 7 * 24
        trips = [_trip(i, [1], ts=DEFAULT_START_TS + 3600 * i) for i in range(hours)]
        tr, va, te = split_dataset(trips)
        assert max(t.depart_ts for t in tr) < DEFAULT_START_TS + 25 * SECONDS_PER_WEEK <= min(t.depart_ts for t in va)
        assert max(t.depart_ts for t in va) < DEFAULT_START_TS + 26 * SECONDS_PER_WEEK <= min(t.depart_ts for t in te)

    def test_bad_fractions(self):
        with pytest.raises(InvalidArgumentError):
            split_dataset([], (0.5, 0.2, 0.2))


class TestCoverage:
    def test_direct(self):
        cov = coverage_counts([_trip(0, [1, 2]), _trip(1, [2, 3])], 3)
        assert cov.as_dict() == {1: 1, 2: 2, 3: 1}

    def test_visits_once(self):
        trips = [_trip(0, [2, 2, 3]), _trip(1, [3])]
        cov = coverage_counts(trips, 3)
        expected = oracle.trip_coverage([[2, 2, 3], [3]])
        assert {k: cov[k] for k in expected} == expected and cov[1] == 0

    def test_empty(self):
        assert coverage_counts([], 4).counts.tolist() == [0, 0, 0, 0]

    def test_out_of_range(self):
        with pytest.raises(DataCorruptionError):
            coverage_counts([_trip(0, [1, 5])], 4)

    def test_sum_bound(self, small_trips, small_catalog):
        cov = coverage_counts(small_trips, small_catalog.m)
        total = sum(t.n_links for t in small_trips)
        assert cov.counts.sum() <= total
        assert coverage_counts(small_trips, small_catalog.m, mode="traversals").counts.sum() == total


class TestFiles:
    def test_catalog_roundtrip(self, tmp_path, small_catalog):
        p = tmp_path / "catalog.csv"
        write_catalog_csv(small_catalog, p)
        assert p.read_text().splitlines()[0] == "link_id,length_m,base_speed_mps,mult_bin1,mult_bin2,mult_bin3,popularity"
        back = read_catalog_csv(p)
        assert np.array_equal(back.length_m, small_catalog.length_m)
        assert np.array_equal(back.peak_profile, small_catalog.peak_profile)

    def test_trips_roundtrip(self, tmp_path, small_trips):
        p = tmp_path / "trips.jsonl"
        write_trips_jsonl(small_trips[:20], p)
        lines = p.read_text(encoding="utf-8").splitlines()
        doc = json.loads(lines[0])
        assert set(doc) == {"trip_id", "driver_id", "depart_ts", "links", "speeds", "travel_time_s"}
        assert all(round(s, 3) == s for s in doc["speeds"])
        back = read_trips_jsonl(p)
        assert all(a.same_as(b) for a, b in zip(back, small_trips[:20]))

    def test_split_roundtrip(self, tmp_path, small_trips):
        parts = split_dataset(small_trips)
        write_split(*parts, tmp_path / "split.json")
        back = read_split(small_trips, tmp_path / "split.json")
        assert [[t.trip_id for t in p] for p in back] == [[t.trip_id for t in p] for p in parts]

    def test_corrupt_catalog(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("link,length\n1,2\n")
        with pytest.raises(DataCorruptionError):
            read_catalog_csv(p)
