import math

import numpy as np
import pytest

from pogdiff.autodiff import ShapeError, Tensor, backward
from pogdiff.nn import Mlp, MlpDenoiser, load_checkpoint, save_checkpoint, timestep_embedding
from pogdiff.optim import NonFiniteGradientError, Optimizer, OptimizerConfig


def test_zero_initialised_last_layer_outputs_zero():
    net = Mlp([3, 5, 2], "tanh", rng=np.random.default_rng(0), zero_last=True)
    out = net(Tensor(np.random.default_rng(1).normal(size=(4, 3))))
    np.testing.assert_array_equal(out.data, np.zeros((4, 2)))


def test_identity_layer_passes_input_through():
    net = Mlp([3, 3], "identity")
    net.layers[0][0].data = np.eye(3)
    v = np.array([[0.5, -1.0, 2.0]])
    np.testing.assert_array_equal(net(Tensor(v)).data, v)


def test_two_layer_net_is_deterministic():
    a = Mlp([2, 4, 1], "tanh", rng=np.random.default_rng(7))
    b = Mlp([2, 4, 1], "tanh", rng=np.random.default_rng(7))
    x = Tensor(np.random.default_rng(0).normal(size=(5, 2)))
    np.testing.assert_array_equal(a(x).data, b(x).data)


def test_mlp_rejects_wrong_input_width():
    with pytest.raises(ShapeError):
        Mlp([3, 2])(Tensor(np.ones((2, 4))))


def test_unknown_activation_rejected():
    with pytest.raises(ValueError):
        Mlp([2, 2], "gelu")


def test_timestep_embedding_values():
    e = timestep_embedding(np.array([25, 100]), 100)
    np.testing.assert_allclose(e, [[0.25, 1.0, 0.0], [1.0, 0.0, 1.0]], atol=1e-15)


def test_denoiser_broadcasts_scalar_t_and_validates():
    m = MlpDenoiser(2, 3, 10, (4,), rng=np.random.default_rng(0))
    x, y = np.zeros((5, 2)), np.zeros((5, 3))
    assert m(x, 3, y).shape == (5, 2)
    with pytest.raises(ValueError):
        m(x, 11, y)
    with pytest.raises(ValueError):
        m(x, 0, y)
    with pytest.raises(ShapeError):
        m(x, 3, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        m(np.zeros((5, 3)), 3, y)


def test_checkpoint_roundtrip_is_exact(tmp_path):
    m = MlpDenoiser(2, 4, 50, (6, 5), "relu", rng=np.random.default_rng(3))
    save_checkpoint(m, tmp_path / "m.ckpt")
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.hidden == [6, 5] and back.activation == "relu" and back.T == 50
    for k, p in m.parameters().items():
        np.testing.assert_array_equal(back.parameters()[k].data, p.data)
    x, y = np.random.default_rng(0).normal(size=(3, 2)), np.ones((3, 4))
    np.testing.assert_array_equal(back(x, 7, y).data, m(x, 7, y).data)


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"not a checkpoint\n{}\n")
    with pytest.raises(ValueError, match="magic"):
        load_checkpoint(tmp_path / "bad.ckpt")
    m = MlpDenoiser(2, 2, 10, (3,))
    save_checkpoint(m, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "short.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "short.ckpt")


def _param(v, name="w"):
    return {name: Tensor(np.array(v, dtype=float), requires_grad=True, name=name)}


def test_sgd_step():
    p = _param([[1.0, -2.0]])
    Optimizer(OptimizerConfig(lr=0.1, method="sgd")).step(p, {"w": np.array([[0.5, 1.0]])})
    np.testing.assert_allclose(p["w"].data, [[0.95, -2.1]], rtol=0, atol=1e-15)


@pytest.mark.parametrize("method", ["sgd", "adam"])
def test_zero_gradient_leaves_parameters(method):
    p = _param([[1.0, -2.0]])
    opt = Optimizer(OptimizerConfig(lr=0.1, method=method))
    for _ in range(3):
        opt.step(p, {"w": np.zeros((1, 2))})
    np.testing.assert_array_equal(p["w"].data, [[1.0, -2.0]])


def test_adam_matches_scalar_reference_and_converges():
    # oracle: plain-python Adam on f(w) = (w - 3)^2
    cfg = OptimizerConfig(lr=0.05, method="adam")
    w_ref, m, v = -1.0, 0.0, 0.0
    p = _param([[-1.0]])
    opt = Optimizer(cfg)
    for k in range(1, 501):
        g = 2 * (w_ref - 3.0)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        w_ref -= cfg.lr * (m / (1 - cfg.beta1 ** k)) / (math.sqrt(v / (1 - cfg.beta2 ** k)) + cfg.eps)
        loss = (p["w"] - Tensor(np.array([[3.0]]))).square().sum()
        opt.step(p, backward(loss, p))
        assert p["w"].data[0, 0] == pytest.approx(w_ref, abs=1e-12)
    assert abs(w_ref - 3.0) < 1e-3


def test_non_finite_gradient_aborts_without_partial_update():
    params = {**_param([[1.0]], "a"), **_param([[2.0]], "b")}
    opt = Optimizer(OptimizerConfig(lr=0.1, method="sgd"))
    with pytest.raises(NonFiniteGradientError) as info:
        opt.step(params, {"a": np.array([[1.0]]), "b": np.array([[np.nan]])})
    assert info.value.parameter == "b"
    assert params["a"].data[0, 0] == 1.0 and opt.step_count == 0


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(method="rmsprop")
    with pytest.raises(ValueError):
        OptimizerConfig(lr=0.0)
