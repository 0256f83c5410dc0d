"""Seeded generator of paired laboratory/satellite spectra with known ground truth.

Both modalities are rendered from one latent soil state (salinity, sand, clay,
organic matter, moisture). Laboratory absorbance is linear in a fixed basis, so
salinity is exactly recoverable from a noiseless spectrum by least squares
(:func:`oracle_salinity`). Satellite reflectance is band-averaged from a fine
latent curve, then distorted (smooth gain, vegetation mixing) and noised.

Field labels attached to satellite samples carry multiplicative noise and a
small share of gross outliers; laboratory labels are exact.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import geopair
from .spectra import (
    ANCILLARY_FIELDS,
    FTIR_BANDS,
    SALINITY_MAX,
    SAT_RAW_BANDS,
    SpectraTable,
    read_spectra,
    write_spectra,
)

FTIR_RANGE_NM = (2500.0, 25000.0)
SAT_RANGE_NM = (420.0, 2450.0)

# salinity-diagnostic absorption peaks in the laboratory spectrum (normalized position, width, weight)
FTIR_SALT_PEAKS = ((0.22, 0.012, 1.0), (0.45, 0.015, 0.7), (0.63, 0.010, 0.5))
# broad mineral / water / organic bands shared by every soil
FTIR_SOIL_BANDS = ((0.12, 0.03), (0.35, 0.04), (0.55, 0.05), (0.75, 0.06))
# satellite-range salt absorption features (nm, width nm, weight)
SAT_SALT_FEATURES = ((1750.0, 25.0, 1.0), (2060.0, 30.0, 0.8), (2300.0, 25.0, 0.6))


@dataclass
class WorldConfig:
    sample_count: int = 2000
    zero_fraction: float = 0.48
    salinity_log_mean: float = 0.7
    salinity_log_sigma: float = 0.7
    ancillary_effect: float = 0.6
    zero_effect: float = 1.0
    sigma_lab: float = 0.002
    sigma_sat: float = 0.01
    distortion: float = 0.05
    vegetation_max: float = 0.3
    label_noise: float = 0.3
    outlier_fraction: float = 0.05
    peak_gain: float = 0.35
    salt_ref: float = 1.0
    lat_range: tuple = (36.0, 40.0)
    lon_range: tuple = (-122.0, -118.0)
    pair_fraction: float = 1.0
    tau: float = geopair.DEFAULT_TAU
    seed: int = 0

    def __post_init__(self):
        self.lat_range = tuple(self.lat_range)
        self.lon_range = tuple(self.lon_range)
        for name in ("zero_fraction", "pair_fraction", "outlier_fraction", "vegetation_max"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.sigma_sat >= self.sigma_lab >= 0.0:
            raise ValueError("noise levels must satisfy sigma_sat >= sigma_lab >= 0")
        if self.sample_count < 1:
            raise ValueError("sample_count must be positive")


@dataclass
class SoilState:
    salinity: float
    sand: float
    clay: float
    organic: float
    moisture: float


def response(s):
    """Monotone salinity response shared by both modalities."""
    return np.log1p(np.asarray(s, dtype=np.float64))


def zero_probability(cfg: WorldConfig, score: float = 0.0) -> float:
    """``zero_fraction`` moved on the logit scale by ``-zero_effect * score``."""
    if cfg.zero_fraction in (0.0, 1.0) or score == 0.0:
        return cfg.zero_fraction
    logit = np.log(cfg.zero_fraction / (1.0 - cfg.zero_fraction)) - cfg.zero_effect * score
    return float(1.0 / (1.0 + np.exp(-logit)))


def sample_salinity(cfg: WorldConfig, rng: np.random.Generator, score: float = 0.0) -> float:
    """Zero or a clipped log-normal draw.

    ``score`` is a standardized site covariate (clay, dryness, heat): it lowers
    the chance of a zero and raises the log-mean by ``ancillary_effect * score``.
    With ``score == 0`` the zero probability is exactly ``zero_fraction``.
    """
    if rng.random() < zero_probability(cfg, score):
        return 0.0
    v = float(np.exp(cfg.salinity_log_mean + cfg.ancillary_effect * score + cfg.salinity_log_sigma * rng.standard_normal()))
    return min(v, SALINITY_MAX)


# -- laboratory spectra --------------------------------------------------------
def _gauss(t, center, width):
    return np.exp(-0.5 * ((t - center) / width) ** 2)


_FTIR_T = np.linspace(0.0, 1.0, FTIR_BANDS)


def ftir_wavelengths() -> np.ndarray:
    return np.linspace(*FTIR_RANGE_NM, FTIR_BANDS)


def salt_peak_shape() -> np.ndarray:
    return sum(w * _gauss(_FTIR_T, c, s) for c, s, w in FTIR_SALT_PEAKS)


def ftir_basis() -> np.ndarray:
    """Columns: constant, slope, curvature, four soil bands, then the salt peak shape."""
    cols = [np.ones_like(_FTIR_T), _FTIR_T, _FTIR_T**2]
    cols += [_gauss(_FTIR_T, c, s) for c, s in FTIR_SOIL_BANDS]
    cols.append(salt_peak_shape())
    return np.stack(cols, axis=1)


_FTIR_BASIS = ftir_basis()
_FTIR_PINV = np.linalg.pinv(_FTIR_BASIS)


def ftir_coefficients(state: SoilState, cfg: WorldConfig) -> np.ndarray:
    return np.array(
        [
            0.4 + 0.3 * state.clay,
            0.2 * state.sand - 0.1,
            0.1 * state.organic,
            0.6 * state.moisture,
            0.5 * state.organic,
            0.8 * state.clay,
            2.0 + 0.6 * state.sand,
            cfg.peak_gain * float(response(state.salinity / cfg.salt_ref)),
        ]
    )


def gen_ftir(state: SoilState, loc, cfg: WorldConfig, rng: np.random.Generator) -> np.ndarray:
    """1765-band absorbance: soil baseline + salt peaks (depth monotone in salinity) + noise."""
    if not 0.0 <= state.salinity <= SALINITY_MAX:
        raise ValueError("salinity outside [0, 90]")
    x = _FTIR_BASIS @ ftir_coefficients(state, cfg)
    if cfg.sigma_lab > 0:
        x = x + cfg.sigma_lab * rng.standard_normal(FTIR_BANDS)
    return x


def peak_depth(ftir) -> np.ndarray:
    """Least-squares coefficient of the salt peak shape in (n, 1765) or (1765,) spectra."""
    return (np.asarray(ftir, dtype=np.float64) @ _FTIR_PINV.T)[..., -1]


def oracle_salinity(ftir, cfg: WorldConfig = None) -> np.ndarray:
    """Closed-form inversion of the laboratory generator (exact when noiseless)."""
    cfg = cfg or WorldConfig()
    depth = np.maximum(peak_depth(ftir), 0.0)
    return np.clip(cfg.salt_ref * np.expm1(depth / cfg.peak_gain), 0.0, SALINITY_MAX)


# -- satellite spectra ---------------------------------------------------------
_FINE_NM = np.arange(SAT_RANGE_NM[0], SAT_RANGE_NM[1] + 1.0)
_FINE_U = (_FINE_NM - SAT_RANGE_NM[0]) / (SAT_RANGE_NM[1] - SAT_RANGE_NM[0])
_BAND_EDGES = np.linspace(0, len(_FINE_NM), SAT_RAW_BANDS + 1).round().astype(int)
_VEGETATION = np.where(_FINE_NM < 700, 0.05, 0.45) - 0.1 * _gauss(_FINE_NM, 1450, 40) - 0.15 * _gauss(_FINE_NM, 1940, 50)


def sat_wavelengths() -> np.ndarray:
    return np.array([_FINE_NM[a:b].mean() for a, b in zip(_BAND_EDGES[:-1], _BAND_EDGES[1:])])


def latent_reflectance(state: SoilState, cfg: WorldConfig) -> np.ndarray:
    """Fine-grid (1 nm) surface reflectance; a deterministic function of the soil state."""
    r = response(state.salinity / cfg.salt_ref)
    brightness = 0.25 + 0.25 * state.sand - 0.15 * state.organic - 0.12 * state.moisture
    refl = brightness * (0.6 + 0.4 * np.sqrt(_FINE_U))
    refl = refl - state.moisture * (0.10 * _gauss(_FINE_NM, 1450, 30) + 0.15 * _gauss(_FINE_NM, 1940, 40))
    refl = refl - 0.08 * state.clay * _gauss(_FINE_NM, 2200, 20)
    refl = refl + 0.03 * r * (1.0 - _FINE_U)
    for center, width, weight in SAT_SALT_FEATURES:
        refl = refl - 0.02 * weight * r * _gauss(_FINE_NM, center, width)
    return refl


def band_average(fine: np.ndarray) -> np.ndarray:
    return np.add.reduceat(fine, _BAND_EDGES[:-1]) / np.diff(_BAND_EDGES)


def gen_satellite(
    state: SoilState, loc, cfg: WorldConfig, rng: np.random.Generator, distort: bool = True
) -> np.ndarray:
    """224-band reflectance: band-averaged latent curve, distorted, plus noise.

    The last six bands carry heavy extra noise, standing in for the channels
    with missing data that preprocessing removes.
    """
    if not 0.0 <= state.salinity <= SALINITY_MAX:
        raise ValueError("salinity outside [0, 90]")
    fine = latent_reflectance(state, cfg)
    if distort:
        a1, a2 = cfg.distortion * rng.standard_normal(2)
        fine = fine * (1.0 + a1 * (_FINE_U - 0.5) + a2 * (_FINE_U - 0.5) ** 2)
        v = cfg.vegetation_max * rng.random()
        fine = (1.0 - v) * fine + v * _VEGETATION
    x = band_average(fine)
    if cfg.sigma_sat > 0:
        x = x + cfg.sigma_sat * rng.standard_normal(SAT_RAW_BANDS)
        x[-6:] += 20 * cfg.sigma_sat * rng.standard_normal(6)
    return x


# -- full dataset --------------------------------------------------------------
@dataclass
class GeneratedData:
    ftir: SpectraTable  # label column = laboratory salinity
    satellite: SpectraTable  # label column = field salinity label
    ancillary: np.ndarray  # (n, 8)
    labels: np.ndarray  # field labels
    truth: np.ndarray  # ground-truth salinity per location
    collocated: np.ndarray  # bool, laboratory sample i lies within tau of satellite sample i
    soil: np.ndarray = field(default=None)  # (n, 4) sand, clay, organic, moisture
    config: WorldConfig = field(default=None)

    def __iter__(self):
        return iter((self.ftir, self.satellite, self.ancillary, self.labels))


def _standard(x, mean, sd):
    return (x - mean) / sd


def _displace(lat, lon, angle, bearing):
    """Move from (lat, lon) degrees by a central angle (rad) along a bearing (rad)."""
    p1, l1 = np.radians(lat), np.radians(lon)
    p2 = np.arcsin(np.sin(p1) * np.cos(angle) + np.cos(p1) * np.sin(angle) * np.cos(bearing))
    l2 = l1 + np.arctan2(np.sin(bearing) * np.sin(angle) * np.cos(p1), np.cos(angle) - np.sin(p1) * np.sin(p2))
    return float(np.degrees(p2)), float(np.degrees(l2))


def gen_dataset(cfg: WorldConfig) -> GeneratedData:
    n = cfg.sample_count
    master = np.random.default_rng(cfg.seed)
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(n)]

    lat = master.uniform(*cfg.lat_range, size=n)
    lon = master.uniform(*cfg.lon_range, size=n)
    lat_mid = 0.5 * sum(cfg.lat_range)
    n_pair = int(round(cfg.pair_fraction * n))
    collocated = np.zeros(n, dtype=bool)
    collocated[master.permutation(n)[:n_pair]] = True

    anc = np.empty((n, 8))
    soil = np.empty((n, 4))
    truth = np.empty(n)
    labels = np.empty(n)
    f_vals = np.empty((n, FTIR_BANDS))
    s_vals = np.empty((n, SAT_RAW_BANDS))
    f_lat, f_lon = np.empty(n), np.empty(n)
    dates = np.empty(n, dtype=np.int64)
    start = dt.date(2023, 4, 1).toordinal()
    sat_tree = geopair.BallTree(np.radians(lat), np.radians(lon))

    for i, rng in enumerate(streams):
        clay = 0.6 * rng.beta(2.0, 5.0)
        sand = (1.0 - clay) * rng.beta(2.0, 2.0)
        organic = rng.beta(2.0, 8.0)
        moisture = rng.beta(2.0, 5.0)
        t_mean = 16.0 - 0.8 * (lat[i] - lat_mid) + 1.5 * rng.standard_normal()
        t_max = t_mean + 8.0 + rng.standard_normal()
        t_min = t_mean - 8.0 + rng.standard_normal()
        p_mean = float(np.exp(np.log(40.0) + 0.15 * (lat[i] - lat_mid) + 0.4 * rng.standard_normal()))
        p_min = p_mean * rng.uniform(0.1, 0.4)
        p_max = p_mean * rng.uniform(1.8, 3.0)
        score = (
            _standard(clay, 0.171, 0.095) - _standard(np.log(p_mean), np.log(40.0), 0.42) + 0.5 * _standard(t_mean, 16.0, 1.8)
        ) / 1.5
        s = sample_salinity(cfg, rng, score)
        state = SoilState(s, sand, clay, organic, moisture)

        f_vals[i] = gen_ftir(state, None, cfg, rng)
        s_vals[i] = gen_satellite(state, None, cfg, rng)
        anc[i] = (sand, clay, t_min, t_max, t_mean, p_min, p_max, p_mean)
        soil[i] = (sand, clay, organic, moisture)
        truth[i] = s

        label = s
        if s > 0:
            label = s * float(np.exp(cfg.label_noise * rng.standard_normal()))
            if rng.random() < cfg.outlier_fraction:
                label *= rng.uniform(2.0, 4.0)
        labels[i] = min(label, SALINITY_MAX)
        dates[i] = start + int(rng.integers(0, 150))

        if collocated[i]:
            f_lat[i], f_lon[i] = _displace(lat[i], lon[i], 0.3 * cfg.tau * rng.random(), 2 * np.pi * rng.random())
        else:
            # relocate until no satellite sample lies within tau
            while True:
                cand = _displace(lat[i], lon[i], rng.uniform(3.0, 30.0) * cfg.tau, 2 * np.pi * rng.random())
                _, d = sat_tree.query(np.radians(cand[0]), np.radians(cand[1]))
                if d > 2.0 * cfg.tau:
                    f_lat[i], f_lon[i] = cand
                    break

    ftir = SpectraTable(f_lat, f_lon, f_vals, truth.copy())
    sat = SpectraTable(lat, lon, s_vals, labels.copy(), dates)
    return GeneratedData(ftir, sat, anc, labels, truth, collocated, soil, cfg)


def write_dataset(out_dir, data: GeneratedData, fmt: str = "csv") -> dict:
    """Write spectra (csv or bin), ancillary covariates, the ground-truth manifest and the world config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "csv" if fmt == "csv" else "bin"
    paths = {
        "ftir": write_spectra(out / f"ftir.{ext}", data.ftir, fmt),
        "satellite": write_spectra(out / f"satellite.{ext}", data.satellite, fmt),
        "ancillary": out / "ancillary.csv",
        "truth": out / "truth.csv",
        "world": out / "world.json",
    }
    with open(paths["ancillary"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *ANCILLARY_FIELDS])
        for i, row in enumerate(data.ancillary):
            w.writerow([i, *(repr(float(v)) for v in row)])
    with open(paths["truth"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "salinity_true", "field_label", "collocated", "sand", "clay", "organic", "moisture"])
        for i in range(len(data.truth)):
            w.writerow(
                [i, repr(float(data.truth[i])), repr(float(data.labels[i])), int(data.collocated[i])]
                + [repr(float(v)) for v in data.soil[i]]
            )
    paths["world"].write_text(json.dumps(asdict(data.config), indent=2, sort_keys=True) + "\n")
    return paths


def read_dataset(data_dir) -> GeneratedData:
    d = Path(data_dir)
    ext = "csv" if (d / "ftir.csv").exists() else "bin"
    ftir = read_spectra(d / f"ftir.{ext}")
    sat = read_spectra(d / f"satellite.{ext}")
    with open(d / "ancillary.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    anc = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), 8)
    with open(d / "truth.csv", newline="") as fh:
        truth_rows = list(csv.DictReader(fh))
    truth = np.array([float(r["salinity_true"]) for r in truth_rows])
    labels = np.array([float(r["field_label"]) for r in truth_rows])
    colloc = np.array([r["collocated"] == "1" for r in truth_rows])
    soil = np.array([[float(r[k]) for k in ("sand", "clay", "organic", "moisture")] for r in truth_rows]).reshape(-1, 4)
    cfg_dict = json.loads((d / "world.json").read_text())
    return GeneratedData(ftir, sat, anc, labels, truth, colloc, soil, WorldConfig(**cfg_dict))
