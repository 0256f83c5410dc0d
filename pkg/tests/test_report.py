import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectral_distill.pipeline import report as R


def test_csv_round_trip_preserves_floats(tmp_path):
    rows = [{"row": 1, "config": "kd", "seed": 0, "mae": 0.1 + 0.2, "rmse": 1e-17, "r2": -3.5, "n": 10,
             "config_hash": "abc"}]
    R.write_csv(tmp_path / "m.csv", R.RUN_COLUMNS, rows)
    assert R.read_csv(tmp_path / "m.csv") == rows


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=10))
def test_float_cells_are_exact(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("c") / "v.csv"
    R.write_csv(path, ["v"], [{"v": float(v)} for v in vals])
    back = [float(r["v"]) for r in R.read_csv(path)]
    assert back == [float(v) for v in vals]


def test_comparison_median_and_spread():
    runs = [{"row": 2, "config": "kd", "mae": m, "r2": 0.5, "rmse": 1.0} for m in (1.0, 3.0, 2.0)]
    (row,) = R.comparison_rows(runs)
    assert row["mae_median"] == 2.0 and row["seeds"] == 3
    assert row["mae_std"] == pytest.approx(np.std([1.0, 2.0, 3.0]))
    assert row["r2_std"] == 0.0


def test_empty_run_gives_header_only_csv_and_no_plots(tmp_path):
    run = tmp_path / "run"
    run.mkdir()
    files = R.emit_report(run)
    names = sorted(f.name for f in files)
    assert names == ["comparison.csv", "manifest.txt", "metrics.csv"]
    assert (run / "report" / "metrics.csv").read_text() == ",".join(R.RUN_COLUMNS) + "\n"
    assert not list((run / "report").glob("*.svg"))


def test_missing_run_dir(tmp_path):
    with pytest.raises(FileNotFoundError):
        R.emit_report(tmp_path / "absent")


def test_scatter_axes_fixed_and_svg_deterministic(tmp_path):
    y = np.linspace(0, 30, 20)
    fig = R.scatter_figure(y, y + 200.0)
    ax = fig.axes[0]
    assert ax.get_xlim() == (0.0, 90.0) and ax.get_ylim() == (0.0, 90.0)
    a = R.scatter_svg(tmp_path / "a.svg", y, y + 1)
    b = R.scatter_svg(tmp_path / "b.svg", y, y + 1)
    assert a.read_bytes() == b.read_bytes()


def test_loss_svg_and_manifest(tmp_path):
    log = [{"epoch": e, "task": 1.0 / e, "total": 2.0 / e} for e in range(1, 6)]
    svg = R.loss_svg(tmp_path / "loss.svg", log)
    text = svg.read_text()
    assert text.startswith("<?xml") and "<svg" in text
    man = R.write_manifest(tmp_path, [svg])
    name, size, digest = man.read_text().strip().split("\t")
    assert name == "loss.svg" and int(size) == len(svg.read_bytes()) and len(digest) == 64
