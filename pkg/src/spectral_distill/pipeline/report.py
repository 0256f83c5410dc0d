"""CSV and SVG emission for completed runs.

Outputs are byte-stable: floats are written with ``repr``, SVGs carry no date
and use a fixed id salt, and manifests list relative paths only.
"""

from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path

import numpy as np

from ..spectra import SALINITY_MAX

RUN_COLUMNS = ["row", "config", "seed", "mae", "rmse", "r2", "n", "config_hash"]
COMPARISON_COLUMNS = ["row", "config", "seeds", "mae_median", "mae_std", "r2_median", "r2_std",
                      "rmse_median", "rmse_std"]
GRID_COLUMNS = ["rank", "alpha", "beta", "gamma", "w1", "w2", "w3", "mae", "r2", "rmse"]


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    return path


def _parse(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def write_log(path, log_rows) -> Path:
    cols = list(log_rows[0]) if log_rows else ["epoch"]
    return write_csv(path, cols, log_rows)


def comparison_rows(run_rows) -> list:
    """Median and spread per ablation config, in first-seen order."""
    order, groups = [], {}
    for r in run_rows:
        key = r["config"]
        if key not in groups:
            order.append(key)
            groups[key] = []
        groups[key].append(r)
    out = []
    for key in order:
        g = groups[key]
        row = {"row": g[0].get("row", ""), "config": key, "seeds": len(g)}
        for m in ("mae", "r2", "rmse"):
            vals = np.array([float(x[m]) for x in g])
            row[f"{m}_median"] = float(np.median(vals))
            row[f"{m}_std"] = float(np.std(vals))
        out.append(row)
    return out


# -- plots -------------------------------------------------------------------
def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "spectral-distill"
    plt.rcParams["svg.fonttype"] = "path"
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    return path


def scatter_figure(y_true, y_pred, title: str = "Predicted vs true salinity"):
    """Predicted-vs-true scatter on fixed 0..SALINITY_MAX axes with the identity line."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(np.asarray(y_true), np.asarray(y_pred), s=6, alpha=0.6)
    ax.plot([0, SALINITY_MAX], [0, SALINITY_MAX], color="black", linewidth=0.8)
    ax.set_xlim(0, SALINITY_MAX)
    ax.set_ylim(0, SALINITY_MAX)
    ax.set_xlabel("true salinity (dS/m)")
    ax.set_ylabel("predicted salinity (dS/m)")
    ax.set_title(title)
    return fig


def scatter_svg(path, y_true, y_pred, title: str = "Predicted vs true salinity") -> Path:
    fig = scatter_figure(y_true, y_pred, title)
    out = _save(fig, path)
    _pyplot().close(fig)
    return out


def loss_svg(path, log_rows, keys=None, title: str = "Training curves") -> Path:
    plt = _pyplot()
    keys = keys or [k for k in ("task", "feature", "kl", "recon", "align", "total", "val_mae") if log_rows and k in log_rows[0]]
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [r["epoch"] for r in log_rows]
    for k in keys:
        vals = [float(r[k]) for r in log_rows]
        if all(v > 0 and math.isfinite(v) for v in vals):
            ax.semilogy(epochs, vals, label=k)
        else:
            ax.plot(epochs, vals, label=k)
    ax.set_xlabel("epoch")
    ax.set_title(title)
    ax.legend()
    out = _save(fig, path)
    plt.close(fig)
    return out


def write_manifest(root, files, name: str = "manifest.txt") -> Path:
    """Relative path, byte size and sha256 of each file, sorted by path."""
    root = Path(root)
    lines = []
    for f in sorted(Path(f) for f in files):
        blob = f.read_bytes()
        lines.append(f"{f.relative_to(root).as_posix()}\t{len(blob)}\t{hashlib.sha256(blob).hexdigest()}")
    out = root / name
    out.write_text("\n".join(lines) + ("\n" if lines else ""))
    return out


def emit_report(run_dir, out_dir=None) -> list:
    """Collect per-run metrics, predictions and logs under ``run_dir`` into report files.

    Reads ``ablate/runs.csv`` (plus ``student/metrics.csv`` if present) for the
    metrics and comparison tables, the first predictions file for the scatter
    plot and the first training log for the loss plot.
    """
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise FileNotFoundError(f"run directory {run_dir} does not exist")
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "report"
    runs = []
    for src in (run_dir / "ablate" / "runs.csv", run_dir / "student" / "metrics.csv"):
        if src.exists():
            runs.extend(read_csv(src))
    files = [
        write_csv(out_dir / "metrics.csv", RUN_COLUMNS, runs),
        write_csv(out_dir / "comparison.csv", COMPARISON_COLUMNS, comparison_rows(runs)),
    ]
    if runs:
        preds = sorted(run_dir.glob("ablate/predictions_*.csv")) + sorted(run_dir.glob("student/predictions.csv"))
        if preds:
            rows = read_csv(preds[-1])
            files.append(scatter_svg(out_dir / "scatter.svg", [r["true"] for r in rows], [r["pred"] for r in rows]))
        logs = sorted(run_dir.glob("student/log.csv")) + sorted(run_dir.glob("ablate/log_*.csv"))
        if logs:
            files.append(loss_svg(out_dir / "loss.svg", read_csv(logs[0])))
    files.append(write_manifest(out_dir, files))
    return files
