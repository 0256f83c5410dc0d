"""Regression metrics with a per-stratum breakdown."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geopair import DEFAULT_STRATA_EDGES, salinity_strata


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    r2: float
    n: int
    strata: dict = field(default_factory=dict)  # stratum -> (n, mae, rmse)
    meta: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "r2": self.r2, "n": self.n}


def r2_score(preds, labels) -> float:
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(preds, dtype=np.float64)
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0.0:
        raise ValueError("R^2 is undefined for constant labels")
    return 1.0 - float(np.sum((y - p) ** 2)) / sst


def evaluate(preds, labels, strata_edges=DEFAULT_STRATA_EDGES, **meta) -> MetricsReport:
    p = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(labels, dtype=np.float64).ravel()
    if p.shape != y.shape or p.size == 0:
        raise ValueError("predictions and labels must be equal-length and nonempty")
    e = p - y
    mae = float(np.mean(np.abs(e)))
    rmse = float(np.sqrt(np.mean(e * e)))
    rmse = max(rmse, mae)  # guard the power-mean inequality against last-ulp rounding
    strata = {}
    s = salinity_strata(y, strata_edges)
    for k in np.unique(s):
        m = s == k
        strata[int(k)] = (int(m.sum()), float(np.mean(np.abs(e[m]))), float(np.sqrt(np.mean(e[m] ** 2))))
    return MetricsReport(mae, rmse, r2_score(p, y), int(p.size), strata, dict(meta))
