"""Teacher and student regressors and the three-term distillation objective.

The teacher reads frozen laboratory embeddings. The student reads a 72-d vector:
the satellite embedding in positions 0-63 and ancillary covariates in 64-71.
Student training mixes a Huber task loss, layer-wise feature matching against
the teacher (on the spectral slice only) and a batch-level KL term on outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import (
    EncoderLayerConfig,
    Linear,
    Module,
    TransformerEncoder,
    no_grad,
    scaled_sigmoid,
    set_rng,
    sinusoidal_positional_encoding,
)
from .numerics import softmax as np_softmax
from .numerics import tensor as T
from .pipeline.metrics import evaluate
from .pipeline.schedule import TrainSchedule, run_schedule
from .spectra import ANCILLARY_DIM, LATENT_DIM, STUDENT_INPUT_DIM


@dataclass(frozen=True)
class DistillWeights:
    alpha: float = 0.07
    beta: float = 0.90
    gamma: float = 0.10
    layer_weights: tuple = (1.35, 1.05, 0.65)
    huber_delta: float = 1.0
    smooth_l1_delta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "layer_weights", tuple(float(w) for w in self.layer_weights))
        if len(self.layer_weights) != 3:
            raise ValueError("exactly 3 layer weights are required")
        if min(self.alpha, self.beta, self.gamma, *self.layer_weights) < 0:
            raise ValueError("distillation weights must be nonnegative")
        if self.huber_delta <= 0 or self.smooth_l1_delta <= 0:
            raise ValueError("loss thresholds must be positive")

    @property
    def uses_teacher(self) -> bool:
        return self.beta > 0 or self.gamma > 0


# -- losses ------------------------------------------------------------------
def _pair(a, b):
    a, b = T.as_tensor(a), T.as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty input")
    return a, b


def huber_loss(y, yhat, delta: float = 1.0):
    """Mean Huber loss: r^2/2 inside delta, delta*(|r| - delta/2) outside."""
    y, yhat = _pair(y, yhat)
    return T.mean(T.huber(yhat - y, delta))


def smooth_l1(a, b, delta: float = 0.1):
    """Mean of d^2/(2 delta) for |d| < delta, else |d| - delta/2."""
    a, b = _pair(a, b)
    return T.mean(T.smooth_l1(a - b, delta))


def feature_distill_loss(student_acts, teacher_acts, weights=(1.35, 1.05, 0.65), delta: float = 0.1,
                         spectral_dim: int = LATENT_DIM):
    """(1/L) sum_l w_l * SmoothL1(student_l[:, :64], teacher_l) for L aligned layers."""
    if not (len(student_acts) == len(teacher_acts) == len(weights)):
        raise ValueError("student, teacher and weight layer counts differ")
    total = 0.0
    for s, t, w in zip(student_acts, teacher_acts, weights):
        s = T.as_tensor(s)
        total = total + w * smooth_l1(s[..., :spectral_dim], T.Tensor(np.asarray(getattr(t, "data", t))), delta)
    return total / len(weights)


def kl_output_loss(teacher_preds, student_preds):
    """KL(softmax(teacher) || softmax(student)), each softmax taken across the batch."""
    t = np.asarray(getattr(teacher_preds, "data", teacher_preds), dtype=np.float64).ravel()
    s = T.as_tensor(student_preds)
    s = T.reshape(s, (s.size,))
    if t.size != s.size:
        raise ValueError("teacher and student batches differ in size")
    if t.size < 2:
        raise ValueError("a batch of one gives a degenerate output distribution")
    p = np_softmax(t)
    logp = np.log(np.maximum(p, np.finfo(float).tiny))
    return T.tsum(T.Tensor(p) * (T.Tensor(logp) - T.log_softmax(s, axis=-1)))


def composite_loss(task, feature, kl, weights: DistillWeights = DistillWeights()):
    return weights.alpha * task + weights.beta * feature + weights.gamma * kl


# -- models ------------------------------------------------------------------
@dataclass(frozen=True)
class TeacherConfig:
    latent_dim: int = LATENT_DIM
    token_size: int = 8
    model_dim: int = 64
    heads: int = 4
    ffn: int = 128
    depth: int = 3
    dropout: float = 0.1

    def __post_init__(self):
        if self.latent_dim % self.token_size:
            raise ValueError("token_size must divide latent_dim")
        if self.model_dim % self.heads:
            raise ValueError("heads must divide model_dim")


class _Standardized(Module):
    """Per-feature input standardization with statistics stored as buffers."""

    _buffers = ("in_mean", "in_std")

    def _init_stats(self, dim: int) -> None:
        self.in_mean = np.zeros(dim)
        self.in_std = np.ones(dim)

    def fit_input_stats(self, x) -> None:
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        self.in_mean = x.mean(axis=0)
        sd = x.std(axis=0)
        self.in_std = np.where(sd > 1e-12, sd, 1.0)


class TeacherModel(_Standardized):
    """Laboratory embedding -> token sequence -> transformer -> mean pool -> bounded output."""

    def __init__(self, cfg: TeacherConfig = TeacherConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self._init_stats(cfg.latent_dim)
        rng = np.random.default_rng(seed)
        self.n_tokens = cfg.latent_dim // cfg.token_size
        layer = EncoderLayerConfig(cfg.model_dim, cfg.heads, cfg.model_dim // cfg.heads, cfg.ffn, cfg.dropout)
        self.embed = Linear(cfg.token_size, cfg.model_dim, rng)
        self.encoder = TransformerEncoder(layer, cfg.depth, rng)
        self.head = Linear(cfg.model_dim, 1, rng)
        self.pe = sinusoidal_positional_encoding(self.n_tokens, cfg.model_dim)
        set_rng(self, np.random.default_rng(seed + 1))

    def forward(self, z):
        z = T.as_tensor(z)
        if z.ndim != 2 or z.shape[1] != self.cfg.latent_dim:
            raise ValueError(f"teacher expects (n, {self.cfg.latent_dim}) input, got {z.shape}")
        z = (z - self.in_mean) / self.in_std
        tokens = self.embed(T.reshape(z, (z.shape[0], self.n_tokens, self.cfg.token_size))) + self.pe
        _, acts = self.encoder(tokens)
        pooled = [T.mean(a, axis=1) for a in acts]
        pred = scaled_sigmoid(T.reshape(self.head(pooled[-1]), (z.shape[0],)))
        return pred, pooled


@dataclass(frozen=True)
class StudentConfig:
    input_dim: int = STUDENT_INPUT_DIM
    model_dim: int = STUDENT_INPUT_DIM
    heads: int = 8
    ffn: int = 256
    depth: int = 4
    dropout: float = 0.1
    use_hsi: bool = True
    use_ancillary: bool = True
    projection: bool = True

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ValueError("heads must divide model_dim")
        if not self.projection and self.input_dim != self.model_dim:
            raise ValueError("without a projection the input width must equal model_dim")
        if self.input_dim not in (LATENT_DIM, STUDENT_INPUT_DIM):
            raise ValueError("student input is the 64-d embedding, optionally with 8 ancillary values")
        if self.input_dim == LATENT_DIM and self.use_ancillary:
            raise ValueError("a 64-d input carries no ancillary block")
        if not (self.use_hsi or self.use_ancillary):
            raise ValueError("student needs at least one input block")


class StudentModel(_Standardized):
    """Standardized input, optional block masking, width-preserving projection, transformer.

    The input is a single token; a fixed sinusoidal offset marks the 64 spectral
    positions so the projected spectral block carries position information.
    """

    def __init__(self, cfg: StudentConfig = StudentConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        layer = EncoderLayerConfig(cfg.model_dim, cfg.heads, cfg.model_dim // cfg.heads, cfg.ffn, cfg.dropout)
        self.proj = Linear(cfg.input_dim, cfg.model_dim, rng) if cfg.projection else None
        self.encoder = TransformerEncoder(layer, cfg.depth, rng)
        self.head = Linear(cfg.model_dim, 1, rng)
        self._init_stats(cfg.input_dim)
        offset = np.zeros(cfg.model_dim)
        offset[:LATENT_DIM] = sinusoidal_positional_encoding(LATENT_DIM, 2)[:, 0]
        self.offset = offset
        mask = np.ones(cfg.input_dim)
        if not cfg.use_hsi:
            mask[:LATENT_DIM] = 0.0
        if not cfg.use_ancillary and cfg.input_dim > LATENT_DIM:
            mask[LATENT_DIM:] = 0.0
        self.mask = mask
        set_rng(self, np.random.default_rng(seed + 1))

    def prepare(self, x) -> np.ndarray:
        x = np.asarray(getattr(x, "data", x), dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.cfg.input_dim:
            raise ValueError(f"student expects (n, {self.cfg.input_dim}) input, got {x.shape}")
        return (x - self.in_mean) / self.in_std * self.mask

    def forward(self, x):
        h = T.Tensor(self.prepare(x))
        if self.proj is not None:
            h = self.proj(h)
        h = h + self.offset
        n = h.shape[0]
        _, acts = self.encoder(T.reshape(h, (n, 1, self.cfg.model_dim)))
        pooled = [T.mean(a, axis=1) for a in acts]
        pred = scaled_sigmoid(T.reshape(self.head(pooled[-1]), (n,)))
        return pred, pooled


def predict(model: Module, x, batch_size: int = 512) -> np.ndarray:
    was = model.training
    model.eval()
    try:
        with no_grad():
            return np.concatenate([model(x[i:i + batch_size])[0].data for i in range(0, len(x), batch_size)])
    finally:
        model.train(was)


@dataclass
class TeacherTargets:
    """Frozen teacher outputs aligned with student samples; ``mask`` marks samples that have one."""

    acts: np.ndarray  # (n, layers, 64)
    preds: np.ndarray  # (n,)
    mask: np.ndarray  # (n,) bool


def teacher_targets(teacher: TeacherModel, z, mask=None, batch_size: int = 512) -> TeacherTargets:
    z = np.asarray(z, dtype=np.float64)
    mask = np.ones(len(z), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    was = teacher.training
    teacher.eval()
    acts, preds = [], []
    with no_grad():
        for i in range(0, len(z), batch_size):
            p, a = teacher(z[i:i + batch_size])
            preds.append(p.data)
            acts.append(np.stack([x.data for x in a], axis=1))
    teacher.train(was)
    acts = np.concatenate(acts)
    preds = np.concatenate(preds)
    acts[~mask] = 0.0
    preds[~mask] = 0.0
    return TeacherTargets(acts, preds, mask)


# -- training ----------------------------------------------------------------
def _val_monitor(model, x_val, y_val):
    def monitor():
        rep = evaluate(predict(model, x_val), y_val)
        return rep.mae, {"val_mae": rep.mae, "val_r2": rep.r2, "val_rmse": rep.rmse}

    return monitor


def train_teacher(teacher: TeacherModel, z_train, y_train, z_val, y_val,
                  schedule: TrainSchedule = TrainSchedule(), delta: float = 1.0):
    """Huber regression on laboratory embeddings; best epoch chosen by validation MAE."""
    z_train, y_train = np.asarray(z_train, dtype=np.float64), np.asarray(y_train, dtype=np.float64)
    teacher.fit_input_stats(z_train)
    params = teacher.parameter_set()

    def objective(idx):
        pred, _ = teacher(z_train[idx])
        loss = huber_loss(y_train[idx], pred, delta)
        v = loss.item()
        return loss, {"task": v, "total": v}

    return run_schedule(teacher, params, len(z_train), objective, _val_monitor(teacher, z_val, y_val),
                        schedule, stage="train_teacher")


def distill_terms(student: StudentModel, x, y, targets: TeacherTargets = None, weights: DistillWeights = DistillWeights()):
    """Task, feature and KL terms plus their weighted total on one batch.

    Only samples with a teacher target enter the feature and KL terms; a batch
    with fewer than two such samples contributes task loss only.
    """
    pred, acts = student(x)
    task = huber_loss(y, pred, weights.huber_delta)
    zero = T.Tensor(0.0)
    feature, kl = zero, zero
    if targets is not None and weights.uses_teacher:
        m = np.flatnonzero(targets.mask)
        if len(m) >= 2:
            L = len(weights.layer_weights)
            s_acts = [a[m] for a in acts[:L]]
            t_acts = [targets.acts[m, l] for l in range(L)]
            feature = feature_distill_loss(s_acts, t_acts, weights.layer_weights, weights.smooth_l1_delta)
            kl = kl_output_loss(targets.preds[m], pred[m])
    total = composite_loss(task, feature, kl, weights)
    return {"task": task, "feature": feature, "kl": kl, "total": total}


def train_student(student: StudentModel, x_train, y_train, x_val, y_val,
                  weights: DistillWeights = DistillWeights(), targets: TeacherTargets = None,
                  schedule: TrainSchedule = TrainSchedule()):
    """Optimize the composite objective; best epoch chosen by validation MAE."""
    x_train, y_train = np.asarray(x_train, dtype=np.float64), np.asarray(y_train, dtype=np.float64)
    student.fit_input_stats(x_train)
    params = student.parameter_set()

    def objective(idx):
        sub = None
        if targets is not None:
            sub = TeacherTargets(targets.acts[idx], targets.preds[idx], targets.mask[idx])
        terms = distill_terms(student, x_train[idx], y_train[idx], sub, weights)
        return terms["total"], {k: float(v.data) for k, v in terms.items()}

    return run_schedule(student, params, len(x_train), objective, _val_monitor(student, x_val, y_val),
                        schedule, stage="train_student")


__all__ = [
    "ANCILLARY_DIM",
    "DistillWeights",
    "StudentConfig",
    "StudentModel",
    "TeacherConfig",
    "TeacherModel",
    "TeacherTargets",
    "composite_loss",
    "distill_terms",
    "feature_distill_loss",
    "huber_loss",
    "kl_output_loss",
    "predict",
    "smooth_l1",
    "teacher_targets",
    "train_student",
    "train_teacher",
]
