"""Finite-difference cases shared by the op tests and the acceptance gate.

Each case builds fresh parameters and returns (scalar closure, ParameterSet).
Inputs are kept away from kinks (relu at 0, huber at +-delta, abs at 0).
"""

import numpy as np

from spectral_distill.numerics import EncoderLayerConfig, Parameter, ParameterSet, gradient_check
from spectral_distill.numerics import tensor as T
from spectral_distill.numerics.nn import (
    init_encoder_layer_params,
    multi_head_self_attention,
    transformer_encoder_layer,
)


def _away_from(x, points, gap=0.05):
    for p in points:
        near = np.abs(x - p) < gap
        x = np.where(near, p + np.sign(x - p + 1e-12) * gap * 2, x)
    return x


def _params(rng, **shapes):
    out = {}
    for name, bounds in shapes.items():
        shape, lo, hi = bounds
        out[name] = Parameter(rng.uniform(lo, hi, size=shape))
    return out


def _weights(rng, shape):
    return rng.normal(size=shape)


def _case(fn, **shapes):
    def build(seed=0):
        rng = np.random.default_rng(seed)
        p = _params(rng, **shapes)
        w = {k: _weights(rng, fn(p).shape) for k in ("out",)}
        ps = ParameterSet(p.items())
        return (lambda: T.tsum(fn(p) * w["out"])), ps

    return build


def _kinked(fn, kinks, **shapes):
    def build(seed=0):
        rng = np.random.default_rng(seed)
        p = _params(rng, **shapes)
        for v in p.values():
            v.data = _away_from(v.data, kinks)
        w = _weights(rng, fn(p).shape)
        return (lambda: T.tsum(fn(p) * w)), ParameterSet(p.items())

    return build


def _attention(seed=0):
    rng = np.random.default_rng(seed)
    cfg = EncoderLayerConfig(8, 2, 3, 12, 0.0)
    x = Parameter(rng.normal(size=(2, 4, 8)))
    params = init_encoder_layer_params(cfg, rng)
    w = rng.normal(size=(2, 4, 8))
    ps = ParameterSet([("x", x)] + [(k, v) for k, v in params.items()])
    return (lambda: T.tsum(multi_head_self_attention(x, cfg, params) * w)), ps


def _encoder_layer(seed=0):
    rng = np.random.default_rng(seed)
    cfg = EncoderLayerConfig(8, 2, 4, 16, 0.1)
    x = Parameter(rng.normal(size=(3, 5, 8)))
    params = init_encoder_layer_params(cfg, rng)
    w = rng.normal(size=(3, 5, 8))
    ps = ParameterSet([("x", x)] + [(k, v) for k, v in params.items()])
    return (lambda: T.tsum(transformer_encoder_layer(x, cfg, params, training=False) * w)), ps


def _batch_norm(seed=0):
    rng = np.random.default_rng(seed)
    x = Parameter(rng.normal(size=(6, 4)))
    g = Parameter(rng.uniform(0.5, 1.5, size=4))
    b = Parameter(rng.normal(size=4))
    w = rng.normal(size=(6, 4))
    return (lambda: T.tsum(T.batch_norm(x, g, b, None, None) * w)), ParameterSet([("x", x), ("g", g), ("b", b)])


def _layer_norm(seed=0):
    rng = np.random.default_rng(seed)
    x = Parameter(rng.normal(size=(3, 5)))
    g = Parameter(rng.uniform(0.5, 1.5, size=5))
    b = Parameter(rng.normal(size=5))
    w = rng.normal(size=(3, 5))
    return (lambda: T.tsum(T.layer_norm(x, g, b) * w)), ParameterSet([("x", x), ("g", g), ("b", b)])


def _getitem(seed=0):
    rng = np.random.default_rng(seed)
    x = Parameter(rng.normal(size=(5, 4)))
    idx = np.array([0, 2, 2, 4])
    w = rng.normal(size=(4, 2))
    return (lambda: T.tsum(T.getitem(x, (idx, slice(1, 3))) * w)), ParameterSet([("x", x)])


def _concat(seed=0):
    rng = np.random.default_rng(seed)
    a = Parameter(rng.normal(size=(3, 2)))
    b = Parameter(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 6))
    return (lambda: T.tsum(T.concat([a, b], axis=-1) * w)), ParameterSet([("a", a), ("b", b)])


OP_CASES = {
    "add": _case(lambda p: p["a"] + p["b"], a=((3, 4), -1, 1), b=((4,), -1, 1)),
    "sub": _case(lambda p: p["a"] - p["b"], a=((3, 4), -1, 1), b=((3, 1), -1, 1)),
    "mul": _case(lambda p: p["a"] * p["b"], a=((3, 4), -1, 1), b=((1, 4), -1, 1)),
    "div": _case(lambda p: p["a"] / p["b"], a=((3, 4), -1, 1), b=((3, 4), 0.5, 2)),
    "power": _case(lambda p: T.power(p["a"], 2.5), a=((3, 4), 0.5, 2)),
    "matmul": _case(lambda p: p["a"] @ p["b"], a=((3, 4), -1, 1), b=((4, 2), -1, 1)),
    "matmul_batched": _case(lambda p: p["a"] @ p["b"], a=((2, 3, 4), -1, 1), b=((4, 5), -1, 1)),
    "exp": _case(lambda p: T.exp(p["a"]), a=((3, 4), -1, 1)),
    "log": _case(lambda p: T.log(p["a"]), a=((3, 4), 0.5, 2)),
    "sqrt": _case(lambda p: T.sqrt(p["a"]), a=((3, 4), 0.5, 2)),
    "abs": _kinked(lambda p: T.tabs(p["a"]), [0.0], a=((3, 4), -1, 1)),
    "relu": _kinked(lambda p: T.relu(p["a"]), [0.0], a=((3, 4), -1, 1)),
    "sigmoid": _case(lambda p: T.sigmoid(p["a"]), a=((3, 4), -3, 3)),
    "softplus": _case(lambda p: T.softplus(p["a"]), a=((3, 4), -3, 3)),
    "sum_axis": _case(lambda p: T.tsum(p["a"], axis=1, keepdims=True), a=((3, 4), -1, 1)),
    "mean_axis": _case(lambda p: T.mean(p["a"], axis=0), a=((3, 4), -1, 1)),
    "reshape": _case(lambda p: T.reshape(p["a"], (2, 6)), a=((3, 4), -1, 1)),
    "transpose": _case(lambda p: T.transpose(p["a"], (1, 0, 2)), a=((2, 3, 4), -1, 1)),
    "getitem": _getitem,
    "concat": _concat,
    "softmax": _case(lambda p: T.softmax(p["a"], axis=-1), a=((3, 4), -2, 2)),
    "log_softmax": _case(lambda p: T.log_softmax(p["a"], axis=-1), a=((3, 4), -2, 2)),
    "layer_norm": _layer_norm,
    "batch_norm": _batch_norm,
    "huber": _kinked(lambda p: T.huber(p["a"], 1.0), [-1.0, 1.0], a=((4, 4), -3, 3)),
    "smooth_l1": _kinked(lambda p: T.smooth_l1(p["a"], 0.1), [-0.1, 0.1], a=((4, 4), -0.5, 0.5)),
    "attention": _attention,
    "encoder_layer": _encoder_layer,
}


def check_case(name, tol=1e-4):
    fn, ps = OP_CASES[name]()
    return gradient_check(fn, ps, tol=tol)
