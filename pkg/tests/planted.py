"""Seeded geometric fixtures with known answers, shared by unit and acceptance tests."""

import numpy as np

from spectral_distill import geopair, spectra


def pairing_tables(n=1000, seed=0, box_rad=0.004):
    """``n`` laboratory and ``n`` satellite points in a small box, dense enough that
    roughly half the laboratory points have a satellite point within 1 km."""
    rng = np.random.default_rng(seed)
    lat0, lon0 = np.radians(38.0), np.radians(-120.0)
    s_lat = lat0 + rng.uniform(0, box_rad, n)
    s_lon = lon0 + rng.uniform(0, box_rad, n)
    f_lat = lat0 + rng.uniform(0, box_rad, n)
    f_lon = lon0 + rng.uniform(0, box_rad, n)
    ftir = spectra.SpectraTable(np.degrees(f_lat), np.degrees(f_lon), rng.random((n, 3)))
    sat = spectra.SpectraTable(np.degrees(s_lat), np.degrees(s_lon), rng.random((n, spectra.SAT_BANDS)))
    return ftir, sat


def brute_force_pairs(ftir, sat, tau):
    """All-pairs distance matrix, then each laboratory point's nearest satellite point if within tau."""
    f_lat, f_lon = np.radians(ftir.lat), np.radians(ftir.lon)
    s_lat, s_lon = np.radians(sat.lat), np.radians(sat.lon)
    d = geopair.haversine_rad(f_lat[:, None], f_lon[:, None], s_lat[None, :], s_lon[None, :])
    j = d.argmin(axis=1)
    best = d[np.arange(len(f_lat)), j]
    return {(int(i), int(j[i])) for i in np.flatnonzero(best <= tau)}


def planted_clusters(per_cluster=100, seed=0, spread=0.05):
    """Three tight, well separated clusters of (lat, lon) with a mix of salinity strata."""
    rng = np.random.default_rng(seed)
    centers = np.array([[36.5, -121.5], [39.5, -121.0], [37.5, -118.5]])
    truth = np.repeat(np.arange(3), per_cluster)
    pts = centers[truth] + rng.normal(scale=spread, size=(3 * per_cluster, 2))
    labels = np.where(rng.random(3 * per_cluster) < 0.5, 0.0, rng.lognormal(0.7, 1.0, 3 * per_cluster))
    return pts[:, 0], pts[:, 1], np.minimum(labels, 90.0), truth


def cluster_recovery(assign, truth):
    """True when every planted cluster maps onto exactly one recovered cluster and vice versa."""
    pairs = {(int(a), int(b)) for a, b in zip(assign.cluster, truth)}
    return len(pairs) == len(set(truth)) == len({a for a, _ in pairs})


def per_stratum_deviation(assign, fractions=(0.8, 0.1, 0.1)):
    """Largest |count - fraction * group size| over clusters, strata and splits."""
    worst = 0.0
    for c in np.unique(assign.cluster):
        for s in np.unique(assign.stratum[assign.cluster == c]):
            g = (assign.cluster == c) & (assign.stratum == s)
            for k, f in enumerate(fractions):
                worst = max(worst, abs(int(np.sum(assign.split[g] == k)) - f * g.sum()))
    return worst
