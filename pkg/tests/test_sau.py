import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectral_distill import sau
from spectral_distill.numerics import gradient_check
from spectral_distill.pipeline.schedule import TrainSchedule

TINY = sau.SauConfig(ftir_dims=(30, 16, 8), sat_dims=(12, 10, 8), token_size=4, refine_layers=1,
                     refine_heads=2, refine_head_dim=4, refine_ffn=8)


def _data(n=24, seed=0):
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(n, 3))
    xf = base @ rng.normal(size=(3, 30)) + 0.05 * rng.normal(size=(n, 30))
    xs = base @ rng.normal(size=(3, 12)) + 0.05 * rng.normal(size=(n, 12))
    return xf, xs


def test_cosine_distance_reference_angles():
    assert sau.cosine_distance([1.0, 2.0], [1.0, 2.0]) == pytest.approx(0.0, abs=1e-15)
    assert sau.cosine_distance([1.0, 0.0], [0.0, 3.0]) == 1.0
    assert sau.cosine_distance([1.0, 2.0], [-2.0, -4.0]) == pytest.approx(2.0, abs=1e-15)
    with pytest.raises(ValueError):
        sau.cosine_distance([0.0, 0.0], [1.0, 0.0])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, 5, elements=st.floats(-10, 10)), arrays(np.float64, 5, elements=st.floats(-10, 10)),
       st.floats(0.01, 100))
def test_cosine_distance_bounded_and_scale_invariant(u, v, c):
    if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
        return
    d = sau.cosine_distance(u, v)
    assert 0.0 <= d <= 2.0
    assert sau.cosine_distance(c * u, v) == pytest.approx(d, abs=1e-12)


def test_recon_loss_hand_values():
    x = np.zeros((2, 3))
    xhat = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    assert sau.recon_loss(x, xhat).item() == 2.0
    assert sau.recon_loss(x, xhat, 0.5).item() == 1.0
    assert sau.recon_loss(x, xhat, 0.0).item() == 0.0
    assert sau.recon_loss(x, x).item() == 0.0


def test_align_loss_reference_values():
    zf = np.array([[1.0, 0.0], [0.0, 2.0]])
    assert sau.align_loss(zf, 3 * zf).item() == pytest.approx(0.0, abs=1e-15)
    assert sau.align_loss(zf, zf[:, ::-1]).item() == pytest.approx(1.0, abs=1e-15)
    assert sau.align_loss(zf, zf[:, ::-1], beta=0.0).item() == 0.0
    with pytest.raises(ValueError):
        sau.align_loss(np.zeros((0, 2)), np.zeros((0, 2)))


def test_total_is_sum_of_parts():
    model = sau.SauModel(TINY, seed=0).eval()
    xf, xs = _data(6)
    parts = sau.sau_losses(model, xf, xs)
    assert parts["total"].item() == pytest.approx(parts["recon"].item() + parts["align"].item(), abs=1e-12)


def test_sau_gradients_pass_finite_differences():
    model = sau.SauModel(TINY, seed=0).eval()
    xf, xs = _data(4)
    rep = gradient_check(lambda: sau.sau_total_loss(model, xf, xs), model.parameter_set(), max_entries=8)
    assert rep.passed, rep.worst()


def test_refiner_starts_as_identity():
    model = sau.SauModel(TINY, seed=1).eval()
    xf, _ = _data(5)
    h = model.ftir_encoder(xf).data
    np.testing.assert_array_equal(model.features(xf, "ftir").data, h)


def test_balance_penalty():
    assert sau.weight_balance_penalty(1.0).item() == 0.0
    w = sau.weight_balance_penalty(math.e, math.e ** 2)
    assert float(getattr(w, "data", w)) == pytest.approx(-3.0, abs=1e-12)


def test_encode_shape_determinism_and_path_checks():
    model = sau.SauModel(TINY, seed=2)
    xf, xs = _data(10)
    a = sau.encode(xf, "ftir", model)
    assert a.shape == (10, 8)
    np.testing.assert_array_equal(a, sau.encode(xf, "ftir", model))
    assert sau.encode(xf[0], "ftir", model).shape == (8,)
    with pytest.raises(ValueError):
        sau.encode(xs, "ftir", model)
    with pytest.raises(ValueError):
        sau.encode(xf, "lidar", model)


def test_default_architecture_widths():
    cfg = sau.SauConfig()
    assert cfg.ftir_dims == (1765, 1024, 512, 256, 64)
    assert cfg.sat_dims == (218, 256, 128, 64)
    assert cfg.latent_dim == 64 and cfg.token_size == 8


def test_pretrain_touches_only_the_laboratory_path():
    model = sau.SauModel(TINY, seed=3)
    xf, _ = _data(24)
    ps = model.parameter_set()
    before = {p: ps.checksum(p) for p in ("sat_encoder.", "sat_decoder.", "rho_beta", "ftir_encoder.")}
    sau.pretrain_ftir(model, xf[:16], xf[16:], TrainSchedule(batch_size=8, max_epochs=2))
    ps = model.parameter_set()
    for p in ("sat_encoder.", "sat_decoder.", "rho_beta"):
        assert ps.checksum(p) == before[p], p
    assert ps.checksum("ftir_encoder.") != before["ftir_encoder."]
    assert all(p.trainable for p in ps.values())


def test_finetune_freezes_laboratory_encoder_and_improves_alignment():
    model = sau.SauModel(TINY, seed=4)
    xf, xs = _data(48, seed=1)
    sau.pretrain_ftir(model, xf[:40], xf[40:], TrainSchedule(batch_size=8, max_epochs=3))
    ps = model.parameter_set()
    frozen = {p: ps.checksum(p) for p in ("ftir_encoder.", "ftir_decoder.", "refine.")}
    start = sau.heldout_alignment(model, xf[40:], xs[40:])
    res = sau.finetune_align(model, xf[:40], xs[:40], xf[40:], xs[40:], TrainSchedule(batch_size=8, max_epochs=15))
    ps = model.parameter_set()
    for p, c in frozen.items():
        assert ps.checksum(p) == c, p
    assert res.best_value <= start


def test_finetune_rejects_misaligned_pairs():
    model = sau.SauModel(TINY, seed=0)
    xf, xs = _data(6)
    with pytest.raises(ValueError):
        sau.finetune_align(model, xf, xs[:5], xf, xs)


def test_heldout_recon_rejects_empty():
    with pytest.raises(ValueError):
        sau.heldout_recon(sau.SauModel(TINY), np.zeros((0, 30)))


@pytest.mark.parametrize("kw", [dict(token_size=7), dict(sat_dims=(218, 32)), dict(align_metric="l1"),
                                dict(alpha_init=0.0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        sau.SauConfig(**kw)
