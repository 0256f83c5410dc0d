"""Spectral adaptation unit: two encoder paths into one 64-d latent space.

Each path is a fully connected stack (Linear, batch norm, ReLU, dropout per
hidden layer). A shared transformer refinement stage and a shared linear
projection with layer normalization produce the latent ``z``. Mirrored
decoders reconstruct each modality from ``z``.

Training runs in two stages. :func:`pretrain_ftir` fits the laboratory path as
an autoencoder. :func:`finetune_align` then freezes it and pulls satellite
embeddings toward their paired laboratory embeddings by cosine distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    BatchNorm1d,
    Dropout,
    EncoderLayerConfig,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    TransformerEncoder,
    no_grad,
    set_rng,
    sinusoidal_positional_encoding,
)
from .numerics import tensor as T
from .pipeline.schedule import TrainSchedule, run_schedule
from .spectra import FTIR_BANDS, LATENT_DIM, SAT_BANDS

PATHS = ("ftir", "satellite")
ALIGN_METRICS = ("cosine", "kld", "jsd")


def _inv_softplus(w: float) -> float:
    return math.log(math.expm1(w))


@dataclass(frozen=True)
class SauConfig:
    ftir_dims: tuple = (FTIR_BANDS, 1024, 512, 256, LATENT_DIM)
    sat_dims: tuple = (SAT_BANDS, 256, 128, LATENT_DIM)
    dropout: float = 0.2
    token_size: int = 8
    refine_layers: int = 3
    refine_heads: int = 4
    refine_head_dim: int = 32
    refine_ffn: int = 128
    refine_dropout: float = 0.1
    l2_normalize: bool = True
    freeze_ftir: bool = True
    aux_decoder_mse: bool = True
    align_metric: str = "cosine"
    balance_weights: bool = True
    learnable_weights: bool = True
    alpha_init: float = 1.0
    beta_init: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "ftir_dims", tuple(self.ftir_dims))
        object.__setattr__(self, "sat_dims", tuple(self.sat_dims))
        if self.ftir_dims[-1] != self.sat_dims[-1]:
            raise ValueError("both paths must end in the same latent width")
        if self.ftir_dims[-1] % self.token_size:
            raise ValueError("token_size must divide the latent width")
        if self.alpha_init < 0 or self.beta_init < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.learnable_weights and min(self.alpha_init, self.beta_init) <= 0:
            raise ValueError("learnable loss weights must start positive")
        if self.align_metric not in ALIGN_METRICS:
            raise ValueError(f"align_metric must be one of {ALIGN_METRICS}")

    @property
    def latent_dim(self) -> int:
        return self.ftir_dims[-1]

    @property
    def refine_dim(self) -> int:
        return self.refine_heads * self.refine_head_dim


class MLPStack(Module):
    """Linear layers; every hidden layer is followed by batch norm, ReLU and dropout."""

    def __init__(self, dims, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.dims = tuple(dims)
        self.linears = [Linear(a, b, rng) for a, b in zip(self.dims[:-1], self.dims[1:])]
        self.norms = [BatchNorm1d(d) for d in self.dims[1:-1]]
        self.drops = [Dropout(dropout) for _ in self.dims[1:-1]]

    def forward(self, x):
        h = x
        for i, lin in enumerate(self.linears):
            h = lin(h)
            if i < len(self.norms):
                h = self.drops[i](T.relu(self.norms[i](h)))
        return h


class TokenRefiner(Module):
    """Treat a latent vector as a token sequence, run a transformer, pool, and add back.

    The output projection starts at zero so the stage begins as the identity.
    """

    def __init__(self, latent_dim: int, token_size: int, cfg: EncoderLayerConfig, depth: int, rng):
        super().__init__()
        self.token_size = token_size
        self.n_tokens = latent_dim // token_size
        self.embed = Linear(token_size, cfg.model_dim, rng)
        self.encoder = TransformerEncoder(cfg, depth, rng)
        self.out = Linear(cfg.model_dim, latent_dim, rng, zero=True)
        self.pe = sinusoidal_positional_encoding(self.n_tokens, cfg.model_dim)

    def forward(self, h):
        b = h.shape[0]
        tokens = self.embed(T.reshape(h, (b, self.n_tokens, self.token_size))) + self.pe
        out, _ = self.encoder(tokens)
        return h + self.out(T.mean(out, axis=1))


class SauModel(Module):
    def __init__(self, cfg: SauConfig = SauConfig(), seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.ftir_encoder = MLPStack(cfg.ftir_dims, cfg.dropout, rng)
        self.sat_encoder = MLPStack(cfg.sat_dims, cfg.dropout, rng)
        layer_cfg = EncoderLayerConfig(cfg.refine_dim, cfg.refine_heads, cfg.refine_head_dim, cfg.refine_ffn, cfg.refine_dropout)
        self.refine = TokenRefiner(cfg.latent_dim, cfg.token_size, layer_cfg, cfg.refine_layers, rng)
        self.projection = Linear(cfg.latent_dim, cfg.latent_dim, rng)
        self.norm = LayerNorm(cfg.latent_dim)
        self.ftir_decoder = MLPStack(cfg.ftir_dims[::-1], cfg.dropout, rng)
        self.sat_decoder = MLPStack(cfg.sat_dims[::-1], cfg.dropout, rng)
        learn = cfg.learnable_weights
        self.rho_alpha = Parameter(np.array(_inv_softplus(cfg.alpha_init) if learn else 0.0), trainable=learn)
        self.rho_beta = Parameter(np.array(_inv_softplus(cfg.beta_init) if learn else 0.0), trainable=learn)
        set_rng(self, np.random.default_rng(seed + 1))

    @property
    def alpha(self):
        return T.softplus(self.rho_alpha) if self.cfg.learnable_weights else self.cfg.alpha_init

    @property
    def beta(self):
        return T.softplus(self.rho_beta) if self.cfg.learnable_weights else self.cfg.beta_init

    def encoder(self, path: str) -> MLPStack:
        return {"ftir": self.ftir_encoder, "satellite": self.sat_encoder}[_check_path(path)]

    def decoder(self, path: str) -> MLPStack:
        return {"ftir": self.ftir_decoder, "satellite": self.sat_decoder}[_check_path(path)]

    def features(self, x, path: str):
        """Encoder path plus refinement: everything before the shared projection."""
        x = T.as_tensor(x)
        want = self.encoder(path).dims[0]
        if x.ndim != 2 or x.shape[1] != want:
            raise ValueError(f"{path} path expects {want} bands, got shape {x.shape}")
        return self.refine(self.encoder(path)(x))

    def project(self, h):
        return self.norm(self.projection(h))

    def forward(self, x, path: str = "ftir"):
        return self.project(self.features(x, path))


def _check_path(path: str) -> str:
    if path not in PATHS:
        raise ValueError(f"path must be one of {PATHS}, got {path!r}")
    return path


def encode(x, path: str, model: SauModel, training: bool = False, batch_size: int = 256) -> np.ndarray:
    """64-d embeddings for a (n, bands) or (bands,) array. Eval mode unless ``training``."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = arr[None] if single else arr
    was = model.training
    model.train(training)
    try:
        with no_grad():
            out = np.concatenate([model(arr[i:i + batch_size], path).data for i in range(0, len(arr), batch_size)])
    finally:
        model.train(was)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite embedding")
    return out[0] if single else out


# -- losses ------------------------------------------------------------------
def cosine_distance(u, v) -> float:
    """1 - cos(u, v); scale-invariant in either argument."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine distance is undefined for a zero vector")
    return float(np.clip(1.0 - (u @ v) / (nu * nv), 0.0, 2.0))


def _l2_normalize(z):
    n = T.sqrt(T.tsum(z * z, axis=-1, keepdims=True))
    if np.any(n.data == 0):
        raise ValueError("cannot normalize a zero embedding")
    return z / n


def pair_cosine_distance(zf, zs, normalize: bool = True):
    """Per-row cosine distance between two (n, d) tensors."""
    zf, zs = T.as_tensor(zf), T.as_tensor(zs)
    if normalize:
        cos = T.tsum(_l2_normalize(zf) * _l2_normalize(zs), axis=-1)
    else:
        nf = T.sqrt(T.tsum(zf * zf, axis=-1))
        ns = T.sqrt(T.tsum(zs * zs, axis=-1))
        if np.any(nf.data == 0) or np.any(ns.data == 0):
            raise ValueError("zero embedding")
        cos = T.tsum(zf * zs, axis=-1) / (nf * ns)
    return 1.0 - cos


def recon_loss(x, xhat, alpha=1.0):
    """alpha * mean over rows of the squared reconstruction error norm."""
    x, xhat = T.as_tensor(x), T.as_tensor(xhat)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    d = xhat - x
    return alpha * T.mean(T.tsum(d * d, axis=-1))


def _kld_rows(p_logits, q_logits):
    lp = T.log_softmax(p_logits, axis=-1)
    lq = T.log_softmax(q_logits, axis=-1)
    return T.tsum(T.exp(lp) * (lp - lq), axis=-1)


def _jsd_rows(a, b):
    pa, pb = T.softmax(a, axis=-1), T.softmax(b, axis=-1)
    m = 0.5 * (pa + pb)
    lm = T.log(m)
    return 0.5 * T.tsum(pa * (T.log(pa) - lm), axis=-1) + 0.5 * T.tsum(pb * (T.log(pb) - lm), axis=-1)


def align_loss(zf, zs, beta=1.0, metric: str = "cosine", normalize: bool = True):
    """beta * mean alignment distance between paired embeddings."""
    zf, zs = T.as_tensor(zf), T.as_tensor(zs)
    if zf.shape[0] == 0:
        raise ValueError("empty pair list")
    if metric == "cosine":
        d = pair_cosine_distance(zf, zs, normalize)
    elif metric == "kld":
        d = _kld_rows(zf, zs)
    elif metric == "jsd":
        d = _jsd_rows(zf, zs)
    else:
        raise ValueError(f"unknown alignment metric {metric!r}")
    return beta * T.mean(d)


def sau_losses(model: SauModel, xf, xs) -> dict:
    """Weighted reconstruction of both paths and paired alignment, plus their sum."""
    zf = model(xf, "ftir")
    zs = model(xs, "satellite")
    rec = recon_loss(xf, model.ftir_decoder(zf), model.alpha) + recon_loss(xs, model.sat_decoder(zs), model.alpha)
    al = align_loss(zf, zs, model.beta, model.cfg.align_metric, model.cfg.l2_normalize)
    return {"recon": rec, "align": al, "total": rec + al}


def sau_total_loss(model: SauModel, xf, xs):
    return sau_losses(model, xf, xs)["total"]


def weight_balance_penalty(*weights):
    """-sum(log w): keeps learnable loss weights from collapsing to zero."""
    out = 0.0
    for w in weights:
        out = out - T.log(w)
    return out


# -- training ----------------------------------------------------------------
def _set_trainable(model: SauModel, prefixes) -> None:
    ps = model.parameter_set()
    ps.freeze("")
    for p in prefixes:
        ps.unfreeze(p)


def _restore_trainable(model: SauModel) -> None:
    ps = model.parameter_set()
    ps.unfreeze("")
    if not model.cfg.learnable_weights:
        ps.freeze("rho_")


def heldout_recon(model: SauModel, x, path: str = "ftir", batch_size: int = 256) -> float:
    """Unweighted mean squared reconstruction norm in eval mode."""
    if len(x) == 0:
        raise ValueError("held-out reconstruction needs at least one spectrum")
    model.eval()
    total = 0.0
    with no_grad():
        for i in range(0, len(x), batch_size):
            xb = x[i:i + batch_size]
            total += float(recon_loss(xb, model.decoder(path)(model(xb, path))).data) * len(xb)
    return total / len(x)


def heldout_alignment(model: SauModel, xf, xs) -> float:
    """Mean cosine distance between paired eval-mode embeddings."""
    zf = encode(xf, "ftir", model)
    zs = encode(xs, "satellite", model)
    return float(np.mean(pair_cosine_distance(zf, zs).data))


def pretrain_ftir(model: SauModel, x_train, x_val, schedule: TrainSchedule = TrainSchedule()):
    """Autoencoder fit of the laboratory path; the satellite path stays untouched."""
    x_train = np.asarray(x_train, dtype=np.float64)
    x_val = np.asarray(x_val, dtype=np.float64)
    prefixes = ["ftir_encoder.", "refine.", "projection.", "norm.", "ftir_decoder."]
    _set_trainable(model, prefixes + (["rho_alpha"] if model.cfg.learnable_weights else []))
    params = model.parameter_set()
    balance = model.cfg.balance_weights and model.cfg.learnable_weights

    def objective(idx):
        xb = x_train[idx]
        rec = recon_loss(xb, model.ftir_decoder(model(xb, "ftir")), model.alpha)
        obj = rec + weight_balance_penalty(model.alpha) if balance else rec
        return obj, {"recon": rec.item(), "align": 0.0, "total": rec.item()}

    def monitor():
        v = heldout_recon(model, x_val, "ftir")
        return v, {"heldout_recon": v}

    result = run_schedule(model, params, len(x_train), objective, monitor, schedule, stage="pretrain_ftir")
    _restore_trainable(model)
    return result


def finetune_align(model: SauModel, xf_train, xs_train, xf_val, xs_val, schedule: TrainSchedule = TrainSchedule()):
    """Pull satellite embeddings onto their paired laboratory embeddings.

    With ``freeze_ftir`` the laboratory encoder, its decoder and the refinement
    stage are frozen and held in eval mode; the satellite path, the shared
    projection and the loss weights train.
    """
    xf_train = np.asarray(xf_train, dtype=np.float64)
    xs_train = np.asarray(xs_train, dtype=np.float64)
    if len(xf_train) != len(xs_train) or len(xf_train) == 0:
        raise ValueError("need a nonempty list of aligned pairs")
    cfg = model.cfg
    frozen = (model.ftir_encoder, model.ftir_decoder, model.refine) if cfg.freeze_ftir else ()
    prefixes = ["sat_encoder.", "sat_decoder.", "projection.", "norm.", "rho_alpha", "rho_beta"]
    if not cfg.freeze_ftir:
        prefixes += ["ftir_encoder.", "ftir_decoder.", "refine."]
    if not cfg.learnable_weights:
        prefixes = prefixes[:-2]
    _set_trainable(model, prefixes)
    params = model.parameter_set()
    balance = cfg.balance_weights and cfg.learnable_weights

    cached = None
    if cfg.freeze_ftir:
        model.eval()
        with no_grad():
            cached = np.concatenate([model.features(xf_train[i:i + 256], "ftir").data for i in range(0, len(xf_train), 256)])

    def set_mode(training):
        model.train(training)
        for m in frozen:
            m.eval()

    def objective(idx):
        xf, xs = xf_train[idx], xs_train[idx]
        zf = model.project(T.Tensor(cached[idx])) if cached is not None else model(xf, "ftir")
        zs = model(xs, "satellite")
        al = align_loss(zf, zs, model.beta, cfg.align_metric, cfg.l2_normalize)
        if cfg.aux_decoder_mse:
            rec = recon_loss(xf, model.ftir_decoder(zf), model.alpha) + recon_loss(xs, model.sat_decoder(zs), model.alpha)
            total = rec + al
            obj = total + weight_balance_penalty(model.alpha, model.beta) if balance else total
        else:
            rec = T.Tensor(0.0)
            total = al
            obj = total + weight_balance_penalty(model.beta) if balance else total
        return obj, {"recon": rec.item(), "align": al.item(), "total": total.item()}

    def monitor():
        v = heldout_alignment(model, xf_val, xs_val)
        return v, {"heldout_cosine": v}

    result = run_schedule(model, params, len(xf_train), objective, monitor, schedule,
                          stage="finetune_align", set_mode=set_mode)
    _restore_trainable(model)
    return result
