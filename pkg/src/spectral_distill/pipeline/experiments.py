"""End-to-end orchestration: world preparation, upstream training, grid and ablation runs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import geopair, spectra
from ..distill import (
    DistillWeights,
    StudentConfig,
    StudentModel,
    TeacherModel,
    TeacherTargets,
    predict,
    teacher_targets,
    train_student,
    train_teacher,
)
from ..sau import SauModel, encode, finetune_align, heldout_alignment, pretrain_ftir
from ..synthgen import GeneratedData, gen_dataset
from .config import ConfigError, ExperimentConfig, config_hash, replace, to_dict
from .metrics import MetricsReport, evaluate
from .schedule import TrainResult

ROWS = ("ancillary_only", "hsi_ancillary", "hsi_ancillary_kd", "hsi_only")
ROW_NUMBERS = {"ancillary_only": 2, "hsi_ancillary": 3, "hsi_ancillary_kd": 4, "hsi_only": 10}
PURE_TASK = DistillWeights(alpha=1.0, beta=0.0, gamma=0.0)


def preprocess_ftir(values) -> np.ndarray:
    return spectra.minmax_normalize(np.asarray(values, dtype=np.float64))


def preprocess_satellite(values, drop_count: int = 6) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    drop = spectra.default_drop_indices(v.shape[1], drop_count) if drop_count else []
    return spectra.minmax_normalize(spectra.drop_bands(v, drop))


@dataclass
class World:
    """Generated data after preprocessing, pairing and the spatial split."""

    cfg: ExperimentConfig
    data: GeneratedData
    xf: np.ndarray
    xs: np.ndarray
    pairs: list
    ftir_of_sat: np.ndarray  # paired laboratory index per satellite sample, -1 if none
    split: geopair.SplitAssignment
    ftir_split: np.ndarray  # split name per laboratory sample

    def sat_indices(self, name: str) -> np.ndarray:
        return self.split.indices(name)

    def ftir_indices(self, name: str) -> np.ndarray:
        return np.flatnonzero(self.ftir_split == name)

    def paired(self, name: str) -> tuple:
        """(laboratory indices, satellite indices) of pairs whose satellite sample is in ``name``."""
        s = self.sat_indices(name)
        s = s[self.ftir_of_sat[s] >= 0]
        return self.ftir_of_sat[s], s


def build_world(cfg: ExperimentConfig, data: GeneratedData = None) -> World:
    data = data if data is not None else gen_dataset(cfg.world)
    xf = preprocess_ftir(data.ftir.values)
    xs = preprocess_satellite(data.satellite.values, cfg.split.drop_count)
    sat = spectra.SpectraTable(data.satellite.lat, data.satellite.lon, xs, data.satellite.label, data.satellite.date)
    pairs = geopair.make_pairs(data.ftir, sat, cfg.world.tau)
    ftir_of_sat = np.full(len(xs), -1, dtype=np.int64)
    best = np.full(len(xs), np.inf)
    for p in pairs:
        if p.distance_rad < best[p.sat_id]:
            best[p.sat_id] = p.distance_rad
            ftir_of_sat[p.sat_id] = p.ftir_id
    sp = cfg.split
    split = geopair.spatial_split(
        data.satellite.lat, data.satellite.lon, data.labels, k=sp.clusters, fractions=sp.fractions,
        seed=cfg.world.seed, strata_edges=sp.strata_edges, max_iter=sp.kmeans_iters, tol=sp.kmeans_tol,
    )
    ftir_split = np.full(len(xf), "train", dtype=object)
    has = ftir_of_sat >= 0
    ftir_split[ftir_of_sat[has]] = np.array(geopair.SPLITS, dtype=object)[split.split[has]]
    return World(cfg, data, xf, xs, pairs, ftir_of_sat, split, ftir_split)


@dataclass
class Upstream:
    """Frozen adaptation unit and teacher shared by every student run on one world."""

    sau: SauModel
    teacher: TeacherModel
    z_ftir: np.ndarray
    z_sat: np.ndarray
    logs: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)


def train_sau(world: World, cfg: ExperimentConfig = None) -> tuple:
    cfg = cfg or world.cfg
    model = SauModel(cfg.sau, seed=cfg.world.seed)
    f_tr, s_tr = world.paired("train")
    f_va, s_va = world.paired("validation")
    init_cos = heldout_alignment(model, world.xf[f_va], world.xs[s_va])
    sched = replace(cfg, **{"schedule.max_epochs": cfg.sau_pretrain_epochs}).schedule
    pre = pretrain_ftir(model, world.xf[world.ftir_indices("train")], world.xf[world.ftir_indices("validation")], sched)
    sched = replace(cfg, **{"schedule.max_epochs": cfg.sau_align_epochs}).schedule
    before = model.parameter_set().checksum("ftir_encoder.")
    ft = finetune_align(model, world.xf[f_tr], world.xs[s_tr], world.xf[f_va], world.xs[s_va], sched)
    final_cos = heldout_alignment(model, world.xf[f_va], world.xs[s_va])
    metrics = {"init_cosine": init_cos, "heldout_cosine": final_cos,
               "ftir_encoder_unchanged": model.parameter_set().checksum("ftir_encoder.") == before}
    return model, {"pretrain": pre, "align": ft}, metrics


def train_upstream(world: World, cfg: ExperimentConfig = None, sau: SauModel = None) -> Upstream:
    """Train the adaptation unit (unless one is given) and then the teacher on its embeddings."""
    cfg = cfg or world.cfg
    t0 = time.perf_counter()
    if sau is None:
        sau, logs, metrics = train_sau(world, cfg)
    else:
        logs, metrics = {}, {}
    t1 = time.perf_counter()
    z_f = encode(world.xf, "ftir", sau)
    z_s = encode(world.xs, "satellite", sau)
    teacher = TeacherModel(cfg.teacher, seed=cfg.world.seed)
    tr, va = world.ftir_indices("train"), world.ftir_indices("validation")
    lab = world.data.ftir.label
    sched = replace(cfg, **{"schedule.max_epochs": cfg.teacher_epochs}).schedule
    logs["teacher"] = train_teacher(teacher, z_f[tr], lab[tr], z_f[va], lab[va], sched)
    rep = evaluate(predict(teacher, z_f[va]), lab[va])
    metrics.update({"teacher_val_mae": rep.mae, "teacher_val_r2": rep.r2, "teacher_val_rmse": rep.rmse})
    t2 = time.perf_counter()
    return Upstream(sau, teacher, z_f, z_s, logs, metrics, {"sau": t1 - t0, "teacher": t2 - t1})


def student_inputs(world: World, up: Upstream, use_ancillary: bool = True) -> np.ndarray:
    if not use_ancillary:
        return up.z_sat.copy()
    return np.concatenate([up.z_sat, world.data.ancillary], axis=1)


def row_setup(name: str, cfg: ExperimentConfig) -> tuple:
    """(StudentConfig, DistillWeights) for one ablation row."""
    base = cfg.student
    if name == "ancillary_only":
        return replace(cfg, **{"student.use_hsi": False}).student, PURE_TASK
    if name == "hsi_ancillary":
        return base, PURE_TASK
    if name == "hsi_ancillary_kd":
        return base, cfg.weights
    if name == "hsi_only":
        dim = spectra.LATENT_DIM
        s = StudentConfig(input_dim=dim, model_dim=dim, heads=base.heads, ffn=base.ffn, depth=base.depth,
                          dropout=base.dropout, use_hsi=True, use_ancillary=False, projection=False)
        return s, PURE_TASK
    raise ConfigError(f"unknown ablation row {name!r}")


@dataclass
class StudentRun:
    name: str
    seed: int
    report: MetricsReport
    result: TrainResult
    seconds: float
    config_hash: str
    model: StudentModel = None
    val_pred: np.ndarray = None


def run_student(world: World, up: Upstream, student_cfg: StudentConfig, weights: DistillWeights,
                seed: int, name: str = "student", cfg: ExperimentConfig = None) -> StudentRun:
    cfg = cfg or world.cfg
    t0 = time.perf_counter()
    x = student_inputs(world, up, student_cfg.input_dim > spectra.LATENT_DIM)
    y = world.data.labels
    tr_all = world.sat_indices("train")
    tr = tr_all[geopair.undersample_zeros(y[tr_all], cfg.split.zero_keep_fraction, seed=seed)]
    va = world.sat_indices("validation")
    targets = None
    if weights.uses_teacher:
        f = world.ftir_of_sat[tr]
        mask = f >= 0
        full = teacher_targets(up.teacher, up.z_ftir[np.where(mask, f, 0)], mask)
        targets = TeacherTargets(full.acts, full.preds, mask)
    model = StudentModel(student_cfg, seed=seed)
    sched = replace(cfg, **{"schedule.seed": seed}).schedule
    res = train_student(model, x[tr], y[tr], x[va], y[va], weights, targets, sched)
    pred = predict(model, x[va])
    h = _row_hash(student_cfg, weights)
    rep = evaluate(pred, y[va], cfg.split.strata_edges, seed=seed, config_hash=h, row=name)
    return StudentRun(name, seed, rep, res, time.perf_counter() - t0, h, model, pred)


def _row_hash(student_cfg: StudentConfig, weights: DistillWeights) -> str:
    return config_hash({"student": to_dict(student_cfg), "weights": to_dict(weights)})


def check_distinct_rows(cfg: ExperimentConfig, rows=ROWS) -> dict:
    """Row name -> config hash; raises if two ablation rows would train the same thing."""
    hashes = {r: _row_hash(*row_setup(r, cfg)) for r in rows}
    seen: dict = {}
    for r, h in hashes.items():
        if h in seen:
            raise ConfigError(f"ablation rows {seen[h]!r} and {r!r} share config hash {h}")
        seen[h] = r
    return hashes


@dataclass
class AblationTable:
    runs: list  # StudentRun
    rows: tuple = ROWS

    def by_row(self, name: str) -> list:
        return [r for r in self.runs if r.name == name]

    def median(self, name: str, metric: str = "mae") -> float:
        return float(np.median([getattr(r.report, metric) for r in self.by_row(name)]))

    def spread(self, name: str, metric: str = "mae") -> float:
        vals = [getattr(r.report, metric) for r in self.by_row(name)]
        return float(np.std(vals))

    def summary(self) -> list:
        out = []
        for name in self.rows:
            if not self.by_row(name):
                continue
            out.append({
                "row": ROW_NUMBERS.get(name, ""), "config": name, "seeds": len(self.by_row(name)),
                "mae_median": self.median(name, "mae"), "mae_std": self.spread(name, "mae"),
                "r2_median": self.median(name, "r2"), "r2_std": self.spread(name, "r2"),
                "rmse_median": self.median(name, "rmse"), "rmse_std": self.spread(name, "rmse"),
            })
        return out


def ablation_suite(world: World, up: Upstream, cfg: ExperimentConfig = None, rows=ROWS, seeds=None,
                   on_run=None) -> AblationTable:
    cfg = cfg or world.cfg
    check_distinct_rows(cfg, rows)
    runs = []
    for seed in seeds if seeds is not None else cfg.seeds:
        for name in rows:
            s_cfg, w = row_setup(name, cfg)
            run = run_student(world, up, s_cfg, w, seed, name, cfg)
            runs.append(run)
            if on_run is not None:
                on_run(run)
    return AblationTable(runs, tuple(rows))


@dataclass
class GridEntry:
    alpha: float
    beta: float
    gamma: float
    layer_weights: tuple
    mae: float
    r2: float
    rmse: float


def grid_search(world: World, up: Upstream, candidates=None, layer_candidates=None, seed: int = 0,
                cfg: ExperimentConfig = None) -> list:
    """Train one distilled student per weight candidate; ranked by validation MAE (ties keep input order)."""
    cfg = cfg or world.cfg
    candidates = candidates if candidates is not None else cfg.grid
    layer_candidates = layer_candidates if layer_candidates is not None else cfg.layer_grid
    entries = []
    for a, b, g in candidates:
        for lw in layer_candidates:
            w = DistillWeights(a, b, g, tuple(lw), cfg.weights.huber_delta, cfg.weights.smooth_l1_delta)
            run = run_student(world, up, cfg.student, w, seed, "grid", cfg)
            r = run.report
            entries.append(GridEntry(a, b, g, tuple(lw), r.mae, r.r2, r.rmse))
    order = sorted(range(len(entries)), key=lambda i: (entries[i].mae, i))
    return [entries[i] for i in order]
