import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planted import (
    brute_force_pairs,
    cluster_recovery,
    pairing_tables,
    per_stratum_deviation,
    planted_clusters,
)
from spectral_distill import geopair, spectra
from spectral_distill.geopair import GeoPoint

lat_st = st.floats(-math.pi / 2, math.pi / 2)
lon_st = st.floats(-math.pi, math.pi)


def test_haversine_identity_and_antipode():
    a = GeoPoint(0.3, -1.2)
    assert geopair.haversine(a, a) == 0.0
    assert geopair.haversine(GeoPoint(0.0, 0.0), GeoPoint(0.0, math.pi)) == pytest.approx(math.pi, abs=1e-15)


def test_pairing_radius_is_about_one_km():
    d = geopair.haversine(GeoPoint(0.0, 0.0), GeoPoint(0.0, 0.000157))
    assert d == pytest.approx(0.000157, rel=1e-12)
    assert geopair.central_angle_to_km(d) == pytest.approx(1.0, rel=0.01)


@settings(max_examples=60, deadline=None)
@given(lat_st, lon_st, lat_st, lon_st)
def test_haversine_symmetric_and_bounded(a, b, c, d):
    x = float(geopair.haversine_rad(a, b, c, d))
    y = float(geopair.haversine_rad(c, d, a, b))
    assert x == pytest.approx(y, abs=1e-12)
    assert 0.0 <= x <= math.pi + 1e-12


def test_geopoint_range_checks():
    with pytest.raises(ValueError):
        GeoPoint(2.0, 0.0)
    with pytest.raises(ValueError):
        GeoPoint(0.0, 4.0)


def test_single_point_index():
    tree = geopair.build_index([GeoPoint(0.1, 0.2)])
    assert tree.query(-1.0, 3.0)[0] == 0


def test_ball_tree_matches_exhaustive_scan():
    rng = np.random.default_rng(0)
    lat = np.arcsin(rng.uniform(-1, 1, 1000))
    lon = rng.uniform(-math.pi, math.pi, 1000)
    tree = geopair.BallTree(lat, lon)
    q_lat = np.arcsin(rng.uniform(-1, 1, 1000))
    q_lon = rng.uniform(-math.pi, math.pi, 1000)
    idx, dist = tree.query_many(q_lat, q_lon)
    d = geopair.haversine_rad(q_lat[:, None], q_lon[:, None], lat[None], lon[None])
    np.testing.assert_array_equal(idx, d.argmin(axis=1))
    np.testing.assert_array_equal(dist, d.min(axis=1))


@pytest.mark.parametrize("n", [1, 17, 100, 1000, 4097])
def test_ball_tree_height_is_logarithmic(n):
    rng = np.random.default_rng(n)
    tree = geopair.BallTree(rng.uniform(-1, 1, n), rng.uniform(-3, 3, n), leaf_size=16)
    assert tree.height <= math.ceil(math.log2(max(n, 2))) + 1
    assert tree.height <= max(0, math.ceil(math.log2(n / 16)))


def _table(lat, lon, bands):
    lat, lon = np.atleast_1d(lat).astype(float), np.atleast_1d(lon).astype(float)
    return spectra.SpectraTable(lat, lon, np.ones((len(lat), bands)))


def test_collocated_points_pair_at_zero_distance():
    f = _table([37.0, 38.0], [-120.0, -121.0], 5)
    s = _table([38.0, 37.0], [-121.0, -120.0], spectra.SAT_BANDS)
    pairs = geopair.make_pairs(f, s)
    assert [(p.ftir_id, p.sat_id, p.distance_rad) for p in pairs] == [(0, 1, 0.0), (1, 0, 0.0)]


def test_two_km_neighbour_excluded():
    step = math.degrees(2.0 / geopair.EARTH_RADIUS_KM)
    f = _table([0.0], [0.0], 5)
    s = _table([0.0], [step], spectra.SAT_BANDS)
    assert geopair.make_pairs(f, s) == []


def test_invalid_records_are_not_paired():
    f = _table([37.0, 37.0], [-120.0, -120.0], 5)
    f.values[1, 0] = np.nan
    s = _table([37.0], [-120.0], spectra.SAT_RAW_BANDS)
    assert geopair.make_pairs(f, s) == []
    s = _table([37.0], [-120.0], spectra.SAT_BANDS)
    assert [p.ftir_id for p in geopair.make_pairs(f, s)] == [0]


def test_pairs_match_brute_force_on_500_points():
    f, s = pairing_tables(500, seed=4)
    got = {(p.ftir_id, p.sat_id) for p in geopair.make_pairs(f, s)}
    assert got == brute_force_pairs(f, s, geopair.DEFAULT_TAU)
    assert len(got) > 50


def test_pairs_csv_round_trip(tmp_path):
    f, s = pairing_tables(200, seed=1)
    pairs = geopair.make_pairs(f, s)
    geopair.write_pairs_csv(tmp_path / "p.csv", pairs)
    back = geopair.read_pairs_csv(tmp_path / "p.csv")
    assert [(p.ftir_id, p.sat_id, p.distance_rad) for p in back] == [(p.ftir_id, p.sat_id, p.distance_rad) for p in pairs]


def test_planted_clusters_recovered_with_stratified_fractions():
    lat, lon, y, truth = planted_clusters()
    a = geopair.spatial_split(lat, lon, y, k=3, seed=0)
    assert cluster_recovery(a, truth)
    assert per_stratum_deviation(a) <= 1.0
    for c in range(3):
        counts = np.bincount(a.split[a.cluster == c], minlength=3)
        n_strata = len(np.unique(a.stratum[a.cluster == c]))
        assert np.all(np.abs(counts - np.array([80, 10, 10])) <= n_strata)
    assert geopair.audit_leakage(a, lat, lon) == 0


def test_split_is_a_partition_and_deterministic():
    lat, lon, y, _ = planted_clusters(seed=3)
    a = geopair.spatial_split(lat, lon, y, seed=5)
    b = geopair.spatial_split(lat, lon, y, seed=5)
    np.testing.assert_array_equal(a.split, b.split)
    parts = [set(a.indices(n)) for n in geopair.SPLITS]
    assert set.union(*parts) == set(range(len(lat)))
    assert sum(len(p) for p in parts) == len(lat)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 400), st.integers(0, 10_000))
def test_largest_remainder_within_one(n, seed):
    f = np.random.default_rng(seed).dirichlet(np.ones(3))
    counts = geopair.allocate_counts(n, f)
    assert sum(counts) == n
    assert all(abs(c - fi * n) < 1.0 for c, fi in zip(counts, f))


def test_leakage_audit_flags_relabelled_sample():
    lat, lon, y, _ = planted_clusters()
    a = geopair.spatial_split(lat, lon, y, seed=0)
    a.cluster[0] = (a.cluster[0] + 1) % 3
    assert geopair.audit_leakage(a, lat, lon) == 1


def test_undersample_counts():
    y = np.r_[np.zeros(1000), np.ones(500)]
    keep = geopair.undersample_zeros(y, 0.1, seed=0)
    assert len(keep) == 600
    assert np.sum(y[keep] == 0) == 100
    np.testing.assert_array_equal(keep, geopair.undersample_zeros(y, 0.1, seed=0))


def test_undersample_without_zeros_is_identity():
    y = np.arange(1.0, 11.0)
    np.testing.assert_array_equal(geopair.undersample_zeros(y, 0.1, seed=3), np.arange(10))


def test_split_csv_round_trip(tmp_path):
    lat, lon, y, _ = planted_clusters()
    a = geopair.spatial_split(lat, lon, y, seed=0)
    geopair.write_split_csv(tmp_path / "s.csv", a)
    b = geopair.read_split_csv(tmp_path / "s.csv")
    for col in ("split", "cluster", "stratum", "ids"):
        np.testing.assert_array_equal(getattr(a, col), getattr(b, col))
