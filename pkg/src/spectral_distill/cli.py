"""Command line entry point: ``spectral-distill <command> [--config PATH] [--seed N] [--out-dir DIR]``.

Every stage reads and writes under ``--out-dir``. A stage whose inputs are
missing builds them first (data, then the adaptation unit, then the teacher),
so ``spectral-distill ablate --out-dir run`` works on an empty directory.

Exit codes: 0 success, 2 invalid input or configuration, 3 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import geopair
from .distill import TeacherModel
from .numerics import load_checkpoint, save_checkpoint
from .pipeline import report as rp
from .pipeline.config import ConfigError, ExperimentConfig, dump_config, load_config, replace
from .pipeline.experiments import (
    ROW_NUMBERS,
    Upstream,
    ablation_suite,
    build_world,
    grid_search,
    run_student,
    train_sau,
    train_upstream,
)
from .pipeline.schedule import TrainingDivergence
from .sau import SauModel, encode
from .spectra import SpectrumError
from .synthgen import gen_dataset, read_dataset, write_dataset

COMMANDS = ("gen-data", "pair", "split", "train-teacher", "train-sau", "train-student", "grid", "ablate", "report")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.set or ())
    if args.seed is not None:
        cfg = replace(cfg, **{"world.seed": args.seed, "schedule.seed": args.seed})
    return cfg


def _data(cfg, out: Path, fmt: str):
    d = out / "data"
    if (d / "world.json").exists():
        return read_dataset(d)
    data = gen_dataset(cfg.world)
    write_dataset(d, data, fmt)
    return read_dataset(d)


def _world(cfg, out: Path, fmt: str):
    return build_world(cfg, _data(cfg, out, fmt))


def _sau(cfg, world, out: Path) -> SauModel:
    ck = out / "sau" / "sau.ckpt"
    model = SauModel(cfg.sau, seed=cfg.world.seed)
    if ck.exists():
        model.load_state_dict(load_checkpoint(ck))
        return model
    model, logs, metrics = train_sau(world, cfg)
    save_checkpoint(ck, model.state_dict())
    rp.write_log(out / "sau" / "pretrain_log.csv", logs["pretrain"].log)
    rp.write_log(out / "sau" / "align_log.csv", logs["align"].log)
    rp.write_csv(out / "sau" / "metrics.csv", list(metrics), [metrics])
    return model


def _upstream(cfg, world, out: Path) -> Upstream:
    sau = _sau(cfg, world, out)
    ck = out / "teacher" / "teacher.ckpt"
    if ck.exists():
        teacher = TeacherModel(cfg.teacher, seed=cfg.world.seed)
        teacher.load_state_dict(load_checkpoint(ck))
        return Upstream(sau, teacher, encode(world.xf, "ftir", sau), encode(world.xs, "satellite", sau))
    up = train_upstream(world, cfg, sau)
    save_checkpoint(ck, up.teacher.state_dict())
    rp.write_log(out / "teacher" / "log.csv", up.logs["teacher"].log)
    rp.write_csv(out / "teacher" / "metrics.csv", list(up.metrics), [up.metrics])
    return up


def _run_rows(run) -> dict:
    r = run.report
    return {"row": ROW_NUMBERS.get(run.name, ""), "config": run.name, "seed": run.seed, "mae": r.mae,
            "rmse": r.rmse, "r2": r.r2, "n": r.n, "config_hash": run.config_hash}


def _predictions(path, world, run) -> None:
    va = world.sat_indices("validation")
    rows = [{"id": int(i), "true": float(t), "pred": float(p)} for i, t, p in zip(va, world.data.labels[va], run.val_pred)]
    rp.write_csv(path, ["id", "true", "pred"], rows)


# -- commands ----------------------------------------------------------------
def cmd_gen_data(cfg, out, args):
    data = gen_dataset(cfg.world)
    write_dataset(out / "data", data, args.format)


def cmd_pair(cfg, out, args):
    world = _world(cfg, out, args.format)
    geopair.write_pairs_csv(out / "pairs.csv", world.pairs)


def cmd_split(cfg, out, args):
    world = _world(cfg, out, args.format)
    geopair.write_split_csv(out / "split.csv", world.split)


def cmd_train_sau(cfg, out, args):
    _sau(cfg, _world(cfg, out, args.format), out)


def cmd_train_teacher(cfg, out, args):
    _upstream(cfg, _world(cfg, out, args.format), out)


def cmd_train_student(cfg, out, args):
    world = _world(cfg, out, args.format)
    up = _upstream(cfg, world, out)
    run = run_student(world, up, cfg.student, cfg.weights, cfg.schedule.seed, "hsi_ancillary_kd", cfg)
    d = out / "student"
    save_checkpoint(d / "student.ckpt", run.model.state_dict())
    rp.write_log(d / "log.csv", run.result.log)
    rp.write_csv(d / "metrics.csv", rp.RUN_COLUMNS, [_run_rows(run)])
    _predictions(d / "predictions.csv", world, run)


def cmd_grid(cfg, out, args):
    world = _world(cfg, out, args.format)
    up = _upstream(cfg, world, out)
    ranked = grid_search(world, up, seed=cfg.schedule.seed, cfg=cfg)
    rows = [{"rank": i + 1, "alpha": e.alpha, "beta": e.beta, "gamma": e.gamma, "w1": e.layer_weights[0],
             "w2": e.layer_weights[1], "w3": e.layer_weights[2], "mae": e.mae, "r2": e.r2, "rmse": e.rmse}
            for i, e in enumerate(ranked)]
    rp.write_csv(out / "grid" / "grid.csv", rp.GRID_COLUMNS, rows)


def cmd_ablate(cfg, out, args):
    world = _world(cfg, out, args.format)
    up = _upstream(cfg, world, out)
    d = out / "ablate"

    def save(run):
        rp.write_log(d / f"log_{run.name}_{run.seed}.csv", run.result.log)
        _predictions(d / f"predictions_{run.name}_{run.seed}.csv", world, run)

    table = ablation_suite(world, up, cfg, on_run=save)
    rows = [_run_rows(r) for r in table.runs]
    rp.write_csv(d / "runs.csv", rp.RUN_COLUMNS, rows)
    rp.write_csv(d / "comparison.csv", rp.COMPARISON_COLUMNS, rp.comparison_rows(rows))


def cmd_report(cfg, out, args):
    rp.emit_report(out)


HANDLERS = {
    "gen-data": cmd_gen_data,
    "pair": cmd_pair,
    "split": cmd_split,
    "train-sau": cmd_train_sau,
    "train-teacher": cmd_train_teacher,
    "train-student": cmd_train_student,
    "grid": cmd_grid,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spectral-distill", description="Cross-domain spectral distillation pipeline.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON or key=value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
    p.add_argument("--seed", type=int, help="master seed (world generation and training)")
    p.add_argument("--out-dir", type=Path, default=Path("run"))
    p.add_argument("--format", choices=("csv", "bin"), default="csv", help="spectra file format")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        out = args.out_dir
        out.mkdir(parents=True, exist_ok=True)
        dump_config(cfg, out / f"config_{args.command}.json")
        HANDLERS[args.command](cfg, out, args)
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, SpectrumError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
