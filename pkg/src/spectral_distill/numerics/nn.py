"""Layers built on :mod:`spectral_distill.numerics.tensor`.

Functional forms (``multi_head_self_attention``, ``transformer_encoder_layer``)
take a flat name -> Tensor mapping so they can be exercised without a module
tree; the :class:`Module` subclasses own their parameters and call them.
"""

from __future__ import annotations

import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A leaf tensor that is trainable unless frozen."""

    __slots__ = ()

    def __init__(self, data, trainable: bool = True):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=trainable)

    @property
    def trainable(self) -> bool:
        return self.requires_grad


class ParameterSet(Mapping):
    """Ordered named parameters with their gradient buffers."""

    def __init__(self, items):
        self._items = OrderedDict(items)

    def __getitem__(self, name):
        return self._items[name]

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def trainable(self) -> "ParameterSet":
        return ParameterSet((k, p) for k, p in self._items.items() if p.requires_grad)

    def freeze(self, prefix: str = "") -> None:
        for name, p in self._items.items():
            if name.startswith(prefix):
                p.requires_grad = False
                p.grad = None

    def unfreeze(self, prefix: str = "") -> None:
        for name, p in self._items.items():
            if name.startswith(prefix):
                p.requires_grad = True

    def zero_grad(self) -> None:
        for p in self._items.values():
            p.grad = None

    def gradient(self, name: str) -> np.ndarray:
        """Gradient buffer for ``name``; exactly zero for frozen or untouched tensors."""
        p = self._items[name]
        if not p.requires_grad or p.grad is None:
            return np.zeros_like(p.data)
        return p.grad

    def checksum(self, prefix: str = "") -> str:
        h = hashlib.sha256()
        for name, p in self._items.items():
            if name.startswith(prefix):
                h.update(name.encode())
                h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()


class Module:
    """Minimal module tree: parameters, buffers, children, train/eval flag."""

    _buffers: tuple = ()

    def __init__(self):
        self.training = True

    def children(self) -> Iterator[tuple]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix: str = ""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameter_set(self) -> ParameterSet:
        return ParameterSet(self.named_parameters())

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data.copy()) for k, p in self.named_parameters())
        for k, b in self.named_buffers():
            state[k] = np.array(b, dtype=np.float64)
        return state

    def load_state_dict(self, state: Mapping) -> None:
        params = dict(self.named_parameters())
        buffers = {k for k, _ in self.named_buffers()}
        missing = (set(params) | buffers) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for k, p in params.items():
            if p.data.shape != np.shape(state[k]):
                raise ValueError(f"shape mismatch for {k}: {p.data.shape} vs {np.shape(state[k])}")
            p.data = np.array(state[k], dtype=np.float64)
        for k in buffers:
            owner, attr = self._resolve(k)
            setattr(owner, attr, np.array(state[k], dtype=np.float64))

    def _resolve(self, dotted: str):
        parts = dotted.split(".")
        node = self
        i = 0
        while i < len(parts) - 1:
            value = getattr(node, parts[i])
            if isinstance(value, (list, tuple)):
                node = value[int(parts[i + 1])]
                i += 2
            else:
                node = value
                i += 1
        return node, parts[-1]

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Linear(Module):
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator, zero: bool = False):
        super().__init__()
        w = np.zeros((fan_in, fan_out)) if zero else xavier_uniform(rng, fan_in, fan_out)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(fan_out))

    def forward(self, x):
        return T.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm1d(Module):
    """Batch statistics while training; running statistics in eval mode."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        if not self.training:
            return T.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var, self.eps)
        n = x.shape[0]
        if n < 2:
            raise ValueError("batch normalization needs at least 2 samples in training mode")
        m = self.momentum
        self.running_mean = (1 - m) * self.running_mean + m * x.data.mean(axis=0)
        self.running_var = (1 - m) * self.running_var + m * x.data.var(axis=0, ddof=1)
        return T.batch_norm(x, self.gamma, self.beta, None, None, self.eps)


class Dropout(Module):
    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = np.random.default_rng(0)

    def forward(self, x):
        if not self.training or self.rate == 0.0:
            return x
        return T.dropout(x, self.rate, self.rng)


def sinusoidal_positional_encoding(seq_len: int, model_dim: int) -> np.ndarray:
    """Standard sine/cosine table; even columns sine, odd columns cosine."""
    if seq_len < 1:
        raise ValueError("seq_len must be >= 1")
    if model_dim < 2 or model_dim % 2:
        raise ValueError(f"model_dim must be even, got {model_dim}")
    pos = np.arange(seq_len)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, model_dim, 2) / model_dim)
    table = np.empty((seq_len, model_dim))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table


def scaled_sigmoid(z, lo: float = 0.05, hi: float = 90.0):
    """Map to the open interval (lo, hi); works on floats and Tensors."""
    if not lo < hi:
        raise ValueError("need lo < hi")
    floor, ceil = np.nextafter(lo, hi), np.nextafter(hi, lo)
    if not isinstance(z, Tensor):
        s = T._sigmoid(np.asarray(z, dtype=np.float64))
        out = np.clip(lo + (hi - lo) * s, floor, ceil)
        return float(out) if out.ndim == 0 else out
    s = T._sigmoid(z.data)
    out = np.clip(lo + (hi - lo) * s, floor, ceil)
    # the clip moves values by at most one ulp, so the unclipped slope is used
    return Tensor._make(out, (z,), lambda g: (g * (hi - lo) * s * (1.0 - s),))


def softmax(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    e = np.exp(v - v.max())
    return e / e.sum()


@dataclass(frozen=True)
class EncoderLayerConfig:
    model_dim: int
    head_count: int
    per_head_dim: int
    ffn_dim: int
    dropout_rate: float = 0.1

    def __post_init__(self):
        for field in ("model_dim", "head_count", "per_head_dim", "ffn_dim"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")

    @property
    def projection_dim(self) -> int:
        return self.head_count * self.per_head_dim


def init_attention_params(cfg: EncoderLayerConfig, rng: np.random.Generator) -> dict:
    d, p = cfg.model_dim, cfg.projection_dim
    return {
        "wq": Parameter(xavier_uniform(rng, d, p)),
        "bq": Parameter(np.zeros(p)),
        "wk": Parameter(xavier_uniform(rng, d, p)),
        "bk": Parameter(np.zeros(p)),
        "wv": Parameter(xavier_uniform(rng, d, p)),
        "bv": Parameter(np.zeros(p)),
        "wo": Parameter(xavier_uniform(rng, p, d)),
        "bo": Parameter(np.zeros(d)),
    }


def multi_head_self_attention(x, cfg: EncoderLayerConfig, params: Mapping, return_weights: bool = False):
    """Scaled dot-product self-attention over (L, d) or (B, L, d) input."""
    x = T.as_tensor(x)
    if x.shape[-1] != cfg.model_dim:
        raise ValueError(f"input width {x.shape[-1]} != model_dim {cfg.model_dim}")
    if params["wq"].shape != (cfg.model_dim, cfg.projection_dim):
        raise ValueError("query projection does not match the layer config")
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    b, length, _ = x.shape
    h, dh = cfg.head_count, cfg.per_head_dim

    def heads(w, bias):
        return (T.matmul(x, params[w]) + params[bias]).reshape(b, length, h, dh).transpose(0, 2, 1, 3)

    q, k, v = heads("wq", "bq"), heads("wk", "bk"), heads("wv", "bv")
    scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))
    weights = T.softmax(scores, axis=-1)
    ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, length, h * dh)
    out = T.matmul(ctx, params["wo"]) + params["bo"]
    if squeeze:
        out = out.reshape(length, cfg.model_dim)
        weights_np = weights.data[0]
    else:
        weights_np = weights.data
    return (out, weights_np) if return_weights else out


def init_encoder_layer_params(cfg: EncoderLayerConfig, rng: np.random.Generator) -> dict:
    params = init_attention_params(cfg, rng)
    d = cfg.model_dim
    params.update(
        {
            "ln1_gamma": Parameter(np.ones(d)),
            "ln1_beta": Parameter(np.zeros(d)),
            "ffn_w1": Parameter(xavier_uniform(rng, d, cfg.ffn_dim)),
            "ffn_b1": Parameter(np.zeros(cfg.ffn_dim)),
            "ffn_w2": Parameter(xavier_uniform(rng, cfg.ffn_dim, d)),
            "ffn_b2": Parameter(np.zeros(d)),
            "ln2_gamma": Parameter(np.ones(d)),
            "ln2_beta": Parameter(np.zeros(d)),
        }
    )
    return params


def transformer_encoder_layer(x, cfg: EncoderLayerConfig, params: Mapping, training: bool, rng=None):
    """Post-norm encoder layer: LN(x + MHSA(x)) followed by LN(h + FFN(h))."""

    def drop(t):
        if training and cfg.dropout_rate > 0:
            if rng is None:
                raise ValueError("training with dropout needs an rng")
            return T.dropout(t, cfg.dropout_rate, rng)
        return t

    attn = multi_head_self_attention(x, cfg, params)
    h = T.layer_norm(x + drop(attn), params["ln1_gamma"], params["ln1_beta"])
    f = T.relu(T.matmul(h, params["ffn_w1"]) + params["ffn_b1"])
    f = T.matmul(drop(f), params["ffn_w2"]) + params["ffn_b2"]
    return T.layer_norm(h + drop(f), params["ln2_gamma"], params["ln2_beta"])


class EncoderLayer(Module):
    def __init__(self, cfg: EncoderLayerConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        for name, p in init_encoder_layer_params(cfg, rng).items():
            setattr(self, name, p)
        self.rng = np.random.default_rng(0)

    def params(self) -> dict:
        return {name: p for name, p in vars(self).items() if isinstance(p, Parameter)}

    def forward(self, x):
        return transformer_encoder_layer(x, self.cfg, self.params(), self.training, self.rng)


class TransformerEncoder(Module):
    """Stack of encoder layers; returns the final output and every layer's output."""

    def __init__(self, cfg: EncoderLayerConfig, depth: int, rng: np.random.Generator):
        super().__init__()
        self.layers = [EncoderLayer(cfg, rng) for _ in range(depth)]

    def forward(self, x):
        acts = []
        for layer in self.layers:
            x = layer(x)
            acts.append(x)
        return x, acts


def set_rng(module: Module, rng: np.random.Generator) -> None:
    """Share one dropout generator across every stochastic submodule."""
    for m in module.modules():
        if isinstance(m, (Dropout, EncoderLayer)):
            m.rng = rng
