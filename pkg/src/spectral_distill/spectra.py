"""Spectrum records, preprocessing, and the on-disk spectra formats.

Two on-disk forms carry the same table (one row per spectrum):

* CSV with header ``lat,lon,date,label,b0..bN``; empty ``date``/``label`` mean absent.
* Binary: ``b"SPC1"``, ``u32 count``, ``u32 bands``, then per record
  ``f64 lat, f64 lon, i64 date ordinal (0 = absent), f64 label (NaN = absent)``
  followed by ``bands`` f64 values. Everything little-endian.
"""

from __future__ import annotations

import csv
import datetime as dt
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

FTIR_BANDS = 1765
SAT_RAW_BANDS = 224
SAT_BANDS = 218
LATENT_DIM = 64
ANCILLARY_DIM = 8
STUDENT_INPUT_DIM = LATENT_DIM + ANCILLARY_DIM
SALINITY_MAX = 90.0

ANCILLARY_FIELDS = (
    "sand_fraction",
    "clay_fraction",
    "temp_min",
    "temp_max",
    "temp_mean",
    "precip_min",
    "precip_max",
    "precip_mean",
)


class SpectrumError(ValueError):
    pass


def _check_label(label):
    if label is not None and not (0.0 <= label <= SALINITY_MAX):
        raise SpectrumError(f"salinity label {label} outside [0, {SALINITY_MAX}]")


@dataclass
class FtirSpectrum:
    absorbance: np.ndarray
    location: tuple
    salinity_label: Optional[float] = None

    def __post_init__(self):
        self.absorbance = np.asarray(self.absorbance, dtype=np.float64)
        if self.absorbance.shape != (FTIR_BANDS,):
            raise SpectrumError(f"FTIR spectrum needs {FTIR_BANDS} bands, got {self.absorbance.shape}")
        if not np.all(np.isfinite(self.absorbance)):
            raise SpectrumError("FTIR spectrum has non-finite values")
        _check_label(self.salinity_label)


@dataclass
class SatelliteSpectrum:
    reflectance: np.ndarray
    location: tuple
    acquisition_date: Optional[dt.date] = None
    normalized: bool = False

    def __post_init__(self):
        self.reflectance = np.asarray(self.reflectance, dtype=np.float64)
        if self.reflectance.ndim != 1 or len(self.reflectance) not in (SAT_RAW_BANDS, SAT_BANDS):
            raise SpectrumError(f"satellite spectrum needs {SAT_RAW_BANDS} or {SAT_BANDS} bands")
        if self.normalized and (self.reflectance.min() < 0 or self.reflectance.max() > 1):
            raise SpectrumError("normalized spectrum has values outside [0, 1]")


@dataclass
class AncillaryFeatures:
    sand_fraction: float
    clay_fraction: float
    temp_min: float
    temp_max: float
    temp_mean: float
    precip_min: float
    precip_max: float
    precip_mean: float

    def __post_init__(self):
        for name in ("sand_fraction", "clay_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise SpectrumError(f"{name} must lie in [0, 1]")
        if self.sand_fraction + self.clay_fraction > 1.0 + 1e-12:
            raise SpectrumError("sand + clay fractions exceed 1")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in ANCILLARY_FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "AncillaryFeatures":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (ANCILLARY_DIM,):
            raise SpectrumError(f"expected {ANCILLARY_DIM} ancillary values")
        return cls(*map(float, values))


@dataclass
class LabeledSample:
    adapted_embedding: np.ndarray
    ancillary: AncillaryFeatures
    salinity: float
    location: tuple

    def __post_init__(self):
        self.adapted_embedding = np.asarray(self.adapted_embedding, dtype=np.float64)
        if self.adapted_embedding.shape != (LATENT_DIM,):
            raise SpectrumError(f"adapted embedding must have {LATENT_DIM} values")
        _check_label(self.salinity)

    def features(self) -> np.ndarray:
        return assemble_student_input(self.adapted_embedding, self.ancillary)


# -- preprocessing -------------------------------------------------------------
def default_drop_indices(n_bands: int = SAT_RAW_BANDS, count: int = SAT_RAW_BANDS - SAT_BANDS) -> list:
    return list(range(n_bands - count, n_bands))


def drop_bands(s, drop_indices: Sequence[int]):
    """Remove bands by index, keeping survivors in their original order.

    Accepts a :class:`SatelliteSpectrum`, a 1-D band vector, or a 2-D
    (spectra, bands) array.
    """
    values = s.reflectance if isinstance(s, SatelliteSpectrum) else np.asarray(s, dtype=np.float64)
    n = values.shape[-1]
    idx = [int(i) for i in drop_indices]
    if len(set(idx)) != len(idx):
        raise SpectrumError("duplicate band index in drop list")
    if any(i < 0 or i >= n for i in idx):
        raise SpectrumError(f"band index out of range for {n} bands")
    if isinstance(s, SatelliteSpectrum) and idx and n != SAT_RAW_BANDS:
        raise SpectrumError(f"band removal expects the raw {SAT_RAW_BANDS}-band spectrum")
    keep = np.setdiff1d(np.arange(n), idx)
    out = values[..., keep]
    if isinstance(s, SatelliteSpectrum):
        return SatelliteSpectrum(out, s.location, s.acquisition_date, s.normalized)
    return out


def minmax_normalize(v) -> np.ndarray:
    """Per-spectrum min-max scaling to [0, 1]; rows of a 2-D array are scaled independently."""
    v = np.asarray(v, dtype=np.float64)
    lo = v.min(axis=-1, keepdims=True)
    hi = v.max(axis=-1, keepdims=True)
    span = hi - lo
    if np.any(span <= 0):
        raise SpectrumError("constant spectrum has a degenerate min-max range")
    out = (v - lo) / span
    # pin the extremes exactly
    return np.clip(out, 0.0, 1.0)


def tile_crop(scene: np.ndarray, tile: int = 64) -> list:
    """Cut a (H, W, ...) scene into non-overlapping tile x tile blocks, row-major.

    Ragged right and bottom margins are discarded.
    """
    scene = np.asarray(scene)
    if scene.ndim < 2:
        raise SpectrumError("scene must be at least 2-D")
    h, w = scene.shape[:2]
    if h < tile or w < tile:
        raise SpectrumError(f"scene {h}x{w} is smaller than one {tile}x{tile} tile")
    return [
        scene[r : r + tile, c : c + tile]
        for r in range(0, h - tile + 1, tile)
        for c in range(0, w - tile + 1, tile)
    ]


def assemble_student_input(z, a) -> np.ndarray:
    """Concatenate the 64-d spectral embedding (positions 0-63) with 8 ancillary values (64-71)."""
    z = np.asarray(z, dtype=np.float64)
    a = a.as_array() if isinstance(a, AncillaryFeatures) else np.asarray(a, dtype=np.float64)
    if z.shape[-1] != LATENT_DIM or a.shape[-1] != ANCILLARY_DIM:
        raise SpectrumError("student input needs a 64-d embedding and 8 ancillary values")
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(a))):
        raise SpectrumError("non-finite student input")
    return np.concatenate([z, a], axis=-1)


def split_student_input(x) -> tuple:
    x = np.asarray(x)
    return x[..., :LATENT_DIM], x[..., LATENT_DIM:]


# -- tables and file formats ---------------------------------------------------
@dataclass
class SpectraTable:
    """Column-oriented batch of spectra as stored on disk."""

    lat: np.ndarray
    lon: np.ndarray
    values: np.ndarray
    label: np.ndarray = None  # NaN where absent
    date: np.ndarray = None  # proleptic ordinals, 0 where absent
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.values)
        self.lat = np.asarray(self.lat, dtype=np.float64)
        self.lon = np.asarray(self.lon, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(n, -1)
        self.label = np.full(n, np.nan) if self.label is None else np.asarray(self.label, dtype=np.float64)
        self.date = np.zeros(n, dtype=np.int64) if self.date is None else np.asarray(self.date, dtype=np.int64)
        if not (len(self.lat) == len(self.lon) == len(self.label) == len(self.date) == n):
            raise SpectrumError("spectra table columns have inconsistent lengths")

    def __len__(self):
        return len(self.values)

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]

    def subset(self, idx) -> "SpectraTable":
        idx = np.asarray(idx)
        return SpectraTable(self.lat[idx], self.lon[idx], self.values[idx], self.label[idx], self.date[idx])

    def ftir(self, i: int) -> FtirSpectrum:
        label = None if np.isnan(self.label[i]) else float(self.label[i])
        return FtirSpectrum(self.values[i], (float(self.lat[i]), float(self.lon[i])), label)

    def satellite(self, i: int, normalized: bool = False) -> SatelliteSpectrum:
        date = dt.date.fromordinal(int(self.date[i])) if self.date[i] > 0 else None
        return SatelliteSpectrum(self.values[i], (float(self.lat[i]), float(self.lon[i])), date, normalized)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_spectra_csv(path, table: SpectraTable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lat", "lon", "date", "label"] + [f"b{i}" for i in range(table.n_bands)])
        for i in range(len(table)):
            date = dt.date.fromordinal(int(table.date[i])).isoformat() if table.date[i] > 0 else ""
            label = "" if np.isnan(table.label[i]) else _fmt(table.label[i])
            w.writerow([_fmt(table.lat[i]), _fmt(table.lon[i]), date, label] + [_fmt(v) for v in table.values[i]])


def read_spectra_csv(path) -> SpectraTable:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header[:4] != ["lat", "lon", "date", "label"]:
            raise SpectrumError(f"{path}: unexpected header {header[:4]}")
        lat, lon, date, label, rows = [], [], [], [], []
        for row in r:
            lat.append(float(row[0]))
            lon.append(float(row[1]))
            date.append(dt.date.fromisoformat(row[2]).toordinal() if row[2] else 0)
            label.append(float(row[3]) if row[3] else np.nan)
            rows.append([float(v) for v in row[4:]])
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 4)
    return SpectraTable(lat, lon, values, label, date)


_BIN_MAGIC = b"SPC1"


def write_spectra_bin(path, table: SpectraTable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rec = np.dtype(
        [("lat", "<f8"), ("lon", "<f8"), ("date", "<i8"), ("label", "<f8"), ("values", "<f8", (table.n_bands,))]
    )
    arr = np.empty(len(table), dtype=rec)
    arr["lat"], arr["lon"], arr["date"], arr["label"] = table.lat, table.lon, table.date, table.label
    arr["values"] = table.values
    path.write_bytes(_BIN_MAGIC + struct.pack("<II", len(table), table.n_bands) + arr.tobytes())


def read_spectra_bin(path) -> SpectraTable:
    buf = Path(path).read_bytes()
    if buf[:4] != _BIN_MAGIC:
        raise SpectrumError(f"{path}: bad magic, expected SPC1")
    count, bands = struct.unpack_from("<II", buf, 4)
    rec = np.dtype(
        [("lat", "<f8"), ("lon", "<f8"), ("date", "<i8"), ("label", "<f8"), ("values", "<f8", (bands,))]
    )
    arr = np.frombuffer(buf, dtype=rec, count=count, offset=12)
    return SpectraTable(arr["lat"].copy(), arr["lon"].copy(), arr["values"].copy(), arr["label"].copy(), arr["date"].copy())


def write_spectra(path, table: SpectraTable, fmt: str = "csv") -> Path:
    path = Path(path)
    if fmt == "csv":
        write_spectra_csv(path, table)
    elif fmt == "bin":
        write_spectra_bin(path, table)
    else:
        raise SpectrumError(f"unknown spectra format {fmt!r}")
    return path


def read_spectra(path) -> SpectraTable:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    return read_spectra_bin(path) if head == _BIN_MAGIC else read_spectra_csv(path)
