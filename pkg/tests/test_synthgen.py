import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_distill import geopair
from spectral_distill import synthgen as g


def _state(s, **kw):
    base = dict(sand=0.4, clay=0.2, organic=0.1, moisture=0.2)
    base.update(kw)
    return g.SoilState(s, **base)


NOISELESS = g.WorldConfig(sigma_lab=0.0, sigma_sat=0.0)


def test_all_zero_world():
    cfg = g.WorldConfig(zero_fraction=1.0)
    rng = np.random.default_rng(0)
    assert all(g.sample_salinity(cfg, rng, score) == 0.0 for score in np.linspace(-3, 3, 200))


def test_empirical_zero_share():
    cfg = g.WorldConfig()
    rng = np.random.default_rng(1)
    draws = np.array([g.sample_salinity(cfg, rng) for _ in range(100_000)])
    assert abs(np.mean(draws == 0.0) - 0.48) <= 0.02
    assert draws.min() >= 0.0 and draws.max() <= 90.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-6, 6), st.integers(0, 2**32 - 1))
def test_salinity_draws_clipped_to_domain(score, seed):
    cfg = g.WorldConfig(salinity_log_sigma=3.0)
    rng = np.random.default_rng(seed)
    v = [g.sample_salinity(cfg, rng, score) for _ in range(20)]
    assert all(0.0 <= x <= 90.0 for x in v)


def test_zero_salinity_spectrum_is_baseline():
    x = g.gen_ftir(_state(0.0), None, NOISELESS, np.random.default_rng(0))
    coef = g.ftir_coefficients(_state(0.0), NOISELESS)
    assert coef[-1] == 0.0
    np.testing.assert_allclose(x, g.ftir_basis()[:, :-1] @ coef[:-1], rtol=0, atol=1e-14)
    assert abs(g.peak_depth(x)) < 1e-12


def test_peak_depth_increases_with_salinity():
    s = np.linspace(0, 90, 50)
    depth = [g.peak_depth(g.gen_ftir(_state(v), None, NOISELESS, np.random.default_rng(0))) for v in s]
    assert np.all(np.diff(depth) > 0)


def test_peak_depth_recovers_response_curve():
    rng = np.random.default_rng(2)
    s = rng.uniform(0, 90, 1000)
    x = np.stack([g.gen_ftir(_state(v, sand=rng.random() * 0.5), None, NOISELESS, rng) for v in s])
    depth = g.peak_depth(x)
    np.testing.assert_allclose(depth, NOISELESS.peak_gain * g.response(s), rtol=0, atol=1e-9)
    np.testing.assert_allclose(g.oracle_salinity(x, NOISELESS), s, rtol=1e-9, atol=1e-9)


def test_satellite_noiseless_undistorted_is_deterministic():
    st_ = _state(3.0)
    a = g.gen_satellite(st_, None, NOISELESS, np.random.default_rng(0), distort=False)
    b = g.gen_satellite(st_, None, NOISELESS, np.random.default_rng(99), distort=False)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, g.band_average(g.latent_reflectance(st_, NOISELESS)))
    assert a.shape == (224,)


def test_both_modalities_read_the_same_soil_state():
    lo, hi = _state(0.5), _state(20.0)
    assert g.peak_depth(g.gen_ftir(hi, None, NOISELESS, None)) > g.peak_depth(g.gen_ftir(lo, None, NOISELESS, None))
    # the 2060 nm salt feature deepens in the satellite latent curve too
    nm = np.arange(g.SAT_RANGE_NM[0], g.SAT_RANGE_NM[1] + 1.0)
    k = int(np.argmin(np.abs(nm - 2060)))
    assert g.latent_reflectance(hi, NOISELESS)[k] < g.latent_reflectance(lo, NOISELESS)[k]


def test_salt_band_correlates_with_salinity():
    data = g.gen_dataset(g.WorldConfig(sample_count=1000, seed=3))
    wl = g.sat_wavelengths()
    band = int(np.argmin(np.abs(wl - 1750)))
    cont = int(np.argmin(np.abs(wl - 1650)))
    depth = data.satellite.values[:, cont] - data.satellite.values[:, band]
    assert np.corrcoef(depth, g.response(data.truth))[0, 1] > 0.1


def test_generator_rejects_inconsistent_noise():
    with pytest.raises(ValueError):
        g.WorldConfig(sigma_lab=0.1, sigma_sat=0.01)


@pytest.fixture(scope="module")
def small_world():
    return g.gen_dataset(g.WorldConfig(sample_count=300, seed=11))


def test_dataset_shapes(small_world):
    d = small_world
    assert d.ftir.values.shape == (300, 1765)
    assert d.satellite.values.shape == (300, 224)
    assert d.ancillary.shape == (300, 8)
    assert np.all((d.labels >= 0) & (d.labels <= 90))
    np.testing.assert_array_equal(d.labels == 0, d.truth == 0)


@pytest.mark.parametrize("fmt", ["csv", "bin"])
def test_same_seed_gives_identical_files(tmp_path, small_world, fmt):
    again = g.gen_dataset(g.WorldConfig(sample_count=300, seed=11))
    a = g.write_dataset(tmp_path / "a", small_world, fmt)
    b = g.write_dataset(tmp_path / "b", again, fmt)
    for k in a:
        assert a[k].read_bytes() == b[k].read_bytes(), k


def test_dataset_round_trip(tmp_path, small_world):
    g.write_dataset(tmp_path, small_world, "bin")
    back = g.read_dataset(tmp_path)
    np.testing.assert_array_equal(back.ftir.values, small_world.ftir.values)
    np.testing.assert_array_equal(back.labels, small_world.labels)
    np.testing.assert_array_equal(back.collocated, small_world.collocated)
    assert back.config == small_world.config


def _pairs(data):
    return geopair.make_pairs(data.ftir, data.satellite, check_validity=False)


def test_full_pair_fraction_pairs_everything(small_world):
    pairs = _pairs(small_world)
    assert sorted((p.ftir_id, p.sat_id) for p in pairs) == [(i, i) for i in range(300)]


def test_half_pair_fraction():
    data = g.gen_dataset(dataclasses.replace(g.WorldConfig(), sample_count=2000, pair_fraction=0.5, seed=5))
    pairs = _pairs(data)
    assert abs(len(pairs) - 1000) <= 30
    # a collocated sample may land nearer a neighbouring satellite point, but it always pairs
    assert {p.ftir_id for p in pairs} == set(np.flatnonzero(data.collocated).tolist())
