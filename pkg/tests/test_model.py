import numpy as np
import pytest

from smoothcert import autodiff as ad
from smoothcert.autodiff import Tensor, finite_diff_check, gradients, no_grad
from smoothcert.model import (
    EncoderConfig,
    build_encoder,
    classify,
    ema_update,
    init_head,
    init_projector,
    param_count,
    project,
    time_features,
)
from smoothcert.rng import gaussian, stream


MICRO_VIT = EncoderConfig(
    input_shape=(1, 4, 4),
    arch="vit",
    patch_size=2,
    depth=1,
    width=8,
    heads=2,
    time_dim=4,
    projector_hidden=8,
    projector_out=4,
    num_classes=3,
)

MICRO_MLP = EncoderConfig(
    input_shape=(1, 4, 4),
    arch="mlp",
    width=8,
    mlp_hidden=8,
    time_dim=4,
    projector_hidden=8,
    projector_out=4,
    num_classes=3,
)


@pytest.fixture(params=["vit", "mlp"])
def encoder_setup(request):
    cfg = MICRO_VIT if request.param == "vit" else MICRO_MLP
    enc = build_encoder(cfg)
    return cfg, enc, enc.init_params(0)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(input_shape=(1, 5, 5), arch="vit", patch_size=2)
    with pytest.raises(ValueError):
        EncoderConfig(arch="resnet")
    with pytest.raises(ValueError):
        EncoderConfig(width=10, heads=4)


def test_encode_output_shape(encoder_setup):
    cfg, enc, theta = encoder_setup
    x = Tensor(gaussian(stream(1), (3, 1, 4, 4)))
    rep = enc(theta, x, 0.5)
    assert rep.shape == (3, cfg.width)


def test_encode_deterministic_and_time_sensitive(encoder_setup):
    cfg, enc, theta = encoder_setup
    x = Tensor(gaussian(stream(2), (2, 1, 4, 4)))
    a = enc(theta, x, 0.5)
    b = enc(theta, x, 0.5)
    c = enc(theta, x, 2.5)
    assert np.array_equal(a.data, b.data)
    assert not np.allclose(a.data, c.data)


def test_encode_input_validation(encoder_setup):
    cfg, enc, theta = encoder_setup
    with pytest.raises(ValueError):
        enc(theta, Tensor(np.zeros((2, 1, 5, 5))), 0.5)
    with pytest.raises(ValueError):
        enc(theta, Tensor(np.zeros((2, 1, 4, 4))), -0.1)


def test_projector_shape_and_zero_final_layer():
    nu = init_projector(MICRO_VIT, 0)
    rep = Tensor(gaussian(stream(3), (2, 8)))
    out = project(nu, rep)
    assert out.shape == (2, 4)
    nu["proj2.w"] = Tensor(np.zeros_like(nu["proj2.w"].data), requires_grad=True)
    nu["proj2.b"] = Tensor(np.zeros_like(nu["proj2.b"].data), requires_grad=True)
    assert np.array_equal(project(nu, rep).data, np.zeros((2, 4)))


def test_classify_zero_params_uniform_softmax():
    omega = {
        "head.w": Tensor(np.zeros((8, 3)), requires_grad=True),
        "head.b": Tensor(np.zeros(3), requires_grad=True),
    }
    logits = classify(omega, Tensor(gaussian(stream(4), (5, 8))))
    assert np.array_equal(logits.data, np.zeros((5, 3)))
    assert np.allclose(ad.softmax(logits).data, np.full((5, 3), 1 / 3))


def test_classify_shift_invariance():
    omega = init_head(MICRO_VIT, 0)
    rep = Tensor(gaussian(stream(5), (2, 8)))
    logits = classify(omega, rep)
    shifted = logits + 7.3
    assert np.allclose(ad.softmax(logits).data, ad.softmax(shifted).data, atol=1e-12)


def test_ema_update_endpoints_and_arithmetic():
    online = {"w": Tensor(np.ones((2, 2)), requires_grad=True)}
    ema = {"w": np.zeros((2, 2))}
    assert np.array_equal(ema_update(ema, online, 0.0)["w"], np.ones((2, 2)))
    assert np.array_equal(ema_update(ema, online, 1.0)["w"], np.zeros((2, 2)))
    assert np.allclose(ema_update(ema, online, 0.99)["w"], np.full((2, 2), 0.01))
    with pytest.raises(ValueError):
        ema_update(ema, online, 1.5)
    with pytest.raises(ValueError):
        ema_update({"v": np.zeros(2)}, online, 0.5)


def test_ema_never_moved_by_gradients(encoder_setup):
    cfg, enc, theta = encoder_setup
    ema = {k: v.data.copy() for k, v in theta.items()}
    x = Tensor(gaussian(stream(6), (2, 1, 4, 4)))
    loss = ad.tsum(enc(theta, x, 0.3) ** 2.0)
    gradients(loss, list(theta.values()))
    for k in ema:
        assert np.array_equal(ema[k], theta[k].data)


def test_param_count_stable_across_inits():
    enc = build_encoder(MICRO_VIT)
    n1 = param_count(enc.init_params(0), init_projector(MICRO_VIT, 0), init_head(MICRO_VIT, 0))
    n2 = param_count(enc.init_params(99), init_projector(MICRO_VIT, 99), init_head(MICRO_VIT, 99))
    assert n1 == n2 > 0


def test_time_features_distinct_times():
    a = time_features(0.25, 32)
    b = time_features(1.0, 32)
    assert a.shape == (32,)
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        time_features(-1.0, 32)


@pytest.mark.parametrize("arch", ["vit", "mlp"])
def test_encoder_gradients_against_finite_differences(arch):
    cfg = MICRO_VIT if arch == "vit" else MICRO_MLP
    enc = build_encoder(cfg)
    theta = enc.init_params(1)
    x = gaussian(stream(7), (2, 1, 4, 4))
    w = gaussian(stream(8), (2, cfg.width))
    names = sorted(theta)

    def f(params):
        p = dict(zip(names, params))
        return ad.tsum(enc(p, Tensor(x), 0.7) * Tensor(w))

    err = finite_diff_check(f, [theta[n] for n in names], step=1e-5)
    assert err < 1e-4, f"{arch} encoder gradient error {err}"


def test_projector_and_head_gradients():
    nu = init_projector(MICRO_MLP, 2)
    omega = init_head(MICRO_MLP, 2)
    rep = gaussian(stream(9), (3, 8))
    wp = gaussian(stream(10), (3, 4))
    wh = gaussian(stream(11), (3, 3))
    nu_names, om_names = sorted(nu), sorted(omega)

    def f(params):
        nu_p = dict(zip(nu_names, params[: len(nu_names)]))
        om_p = dict(zip(om_names, params[len(nu_names) :]))
        return ad.tsum(project(nu_p, Tensor(rep)) * Tensor(wp)) + ad.tsum(classify(om_p, Tensor(rep)) * Tensor(wh))

    leaves = [nu[n] for n in nu_names] + [omega[n] for n in om_names]
    assert finite_diff_check(f, leaves, step=1e-5) < 1e-4


def test_eval_forward_produces_constants(encoder_setup):
    cfg, enc, theta = encoder_setup
    x = Tensor(gaussian(stream(12), (1, 1, 4, 4)))
    with no_grad():
        rep = enc(theta, x, 0.4)
    assert not rep.requires_grad
