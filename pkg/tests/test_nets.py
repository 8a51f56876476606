import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exoadapt import nets
from exoadapt.errors import NumericalDivergence


def test_init_rejects_mismatched_chain():
    with pytest.raises(ValueError):
        nets.DenseNet([2, 3, 1], ["tanh"], seed=0)
    with pytest.raises(ValueError):
        nets.DenseNet([2, 3, 1], ["tanh", "nope"], seed=0)
    with pytest.raises(ValueError):
        nets.DenseNet([2, 0, 1], ["tanh", "identity"], seed=0)


def test_init_deterministic_and_xavier_bounded():
    a = nets.DenseNet([5, 7, 3], ["tanh", "identity"], seed=42)
    b = nets.DenseNet([5, 7, 3], ["tanh", "identity"], seed=42)
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    for w in a.weights:
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.all(np.abs(w) <= limit)
    for bias in a.biases:
        assert np.all(bias == 0.0)


def test_forward_matches_hand_matmul_oracle():
    # 2-3-1 tanh/identity net with hand-set weights, checked against an
    # independent (explicit loop) evaluation.
    net = nets.DenseNet([2, 3, 1], ["tanh", "identity"], seed=0)
    w0 = np.array([[0.1, -0.2, 0.3], [0.4, 0.5, -0.6]])
    b0 = np.array([0.01, -0.02, 0.03])
    w1 = np.array([[1.5], [-0.5], [2.0]])
    b1 = np.array([0.25])
    net.weights = [w0.copy(), w1.copy()]
    net.biases = [b0.copy(), b1.copy()]
    x = np.array([0.7, -1.1])

    hidden = np.zeros(3)
    for j in range(3):
        acc = b0[j]
        for i in range(2):
            acc += x[i] * w0[i, j]
        hidden[j] = np.tanh(acc)
    expected = b1[0]
    for j in range(3):
        expected += hidden[j] * w1[j, 0]

    out = net.forward(x)
    assert out.shape == (1,)
    assert abs(out[0] - expected) < 1e-15


def test_forward_is_pure_and_batch_consistent():
    net = nets.DenseNet([4, 6, 2], ["relu", "identity"], seed=3)
    x = np.random.default_rng(0).normal(size=(5, 4))
    first = net.forward(x)
    second = net.forward(x)
    assert np.array_equal(first, second)
    # batch GEMM and per-row GEMV may differ in the last ulp
    rows = np.stack([net.forward(xi) for xi in x])
    assert np.allclose(first, rows, atol=1e-12, rtol=0)


def test_backward_single_linear_layer_outer_product():
    # one identity layer, upstream gradient of ones: dL/dW = x outer 1
    net = nets.DenseNet([3, 2], ["identity"], seed=0)
    x = np.array([1.0, -2.0, 0.5])
    _, cache = net.forward_cache(x)
    gw, gb = net.backward(cache, np.ones(2))
    assert np.allclose(gw[0], np.outer(x, np.ones(2)), atol=1e-15)
    assert np.allclose(gb[0], np.ones(2), atol=1e-15)


def test_backward_requires_valid_cache():
    net = nets.DenseNet([3, 2], ["identity"], seed=0)
    with pytest.raises(ValueError):
        net.backward(None, np.ones(2))
    other = nets.DenseNet([3, 4, 2], ["tanh", "identity"], seed=0)
    _, cache = other.forward_cache(np.zeros(3))
    with pytest.raises(ValueError):
        net.backward(cache, np.ones(2))


def test_backward_matches_finite_differences_4_8_4():
    net = nets.DenseNet([4, 8, 4], ["tanh", "identity"], seed=11)
    rng = np.random.default_rng(7)
    x = rng.normal(size=4)
    target = rng.normal(size=4)
    assert nets.gradient_check(net, x, target, fd_step=1e-5) < 1e-4


@settings(max_examples=25, deadline=None)
@given(
    sizes=st.lists(st.integers(1, 16), min_size=2, max_size=4),
    act=st.sampled_from(["tanh", "relu", "identity"]),
    seed=st.integers(0, 2**31 - 1),
)
def test_gradient_check_property(sizes, act, seed):
    net = nets.DenseNet(sizes, [act] * (len(sizes) - 1), seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=sizes[0])
    target = rng.normal(size=sizes[-1])
    assert nets.gradient_check(net, x, target, fd_step=1e-5) < 1e-4


def test_train_recovers_linear_regression_slope():
    # y = 2x fitted by a single linear neuron; oracle is the closed-form
    # least-squares slope on the same data.
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, size=(200, 1))
    y = 2.0 * x
    net = nets.DenseNet([1, 1], ["identity"], seed=1)
    cfg = nets.TrainConfig(step_size=5e-2, batch_size=32, epochs=300, seed=2)
    curve = nets.train(net, x, y, loss="mse", cfg=cfg)
    slope_oracle = float(np.linalg.lstsq(x, y, rcond=None)[0][0, 0])
    fitted = float(net.weights[0][0, 0])
    assert abs(slope_oracle - 2.0) < 1e-12
    assert abs(fitted - slope_oracle) < 1e-2
    assert curve[-1] <= curve[0]


def test_train_curve_smoothed_monotone():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(128, 3))
    y = np.tanh(x @ np.array([[0.5], [-1.0], [0.25]]))
    net = nets.DenseNet([3, 8, 1], ["tanh", "identity"], seed=4)
    curve = np.array(
        nets.train(net, x, y, cfg=nets.TrainConfig(batch_size=16, epochs=120, seed=0))
    )
    smooth = np.convolve(curve, np.ones(10) / 10.0, mode="valid")
    assert np.all(np.diff(smooth) <= 1e-6)


def test_train_deterministic_given_seed():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(64, 2))
    y = x @ np.array([[1.0], [-1.0]])
    outs = []
    for _ in range(2):
        net = nets.DenseNet([2, 4, 1], ["tanh", "identity"], seed=8)
        nets.train(net, x, y, cfg=nets.TrainConfig(epochs=20, seed=8))
        outs.append([w.copy() for w in net.weights])
    for wa, wb in zip(*outs):
        assert np.array_equal(wa, wb)


def test_train_divergence_raises():
    x = np.array([[1.0], [2.0]])
    y = np.array([[1e3], [-1e3]])
    net = nets.DenseNet([1, 1], ["identity"], seed=0)
    with np.errstate(all="ignore"), pytest.raises(NumericalDivergence):
        nets.train(net, x, y, cfg=nets.TrainConfig(step_size=1e160, epochs=50, seed=0))


def test_vae_training_decreases_loss_and_is_deterministic():
    rng = np.random.default_rng(3)
    base = rng.uniform(0.2, 0.8, size=(1, 12))
    data = np.clip(base + 0.05 * rng.standard_normal((160, 12)), 0, 1)
    curves = []
    recons = []
    for _ in range(2):
        enc = nets.DenseNet([12, 16, 4], ["tanh", "identity"], seed=21)
        dec = nets.DenseNet([2, 16, 12], ["tanh", "identity"], seed=22)
        cfg = nets.TrainConfig(step_size=2e-3, batch_size=32, epochs=80, seed=5)
        curves.append(nets.train((enc, dec), data, loss="vae", cfg=cfg))
        mu = enc.forward(data)[:, :2]
        recons.append(dec.forward(mu))
    assert curves[0] == curves[1]
    assert np.array_equal(recons[0], recons[1])
    assert curves[0][-1] < 0.5 * curves[0][0]


def test_vae_shape_validation():
    enc = nets.DenseNet([12, 5], ["identity"], seed=0)  # odd output width
    dec = nets.DenseNet([2, 12], ["identity"], seed=0)
    with pytest.raises(ValueError):
        nets.train((enc, dec), np.zeros((4, 12)), loss="vae", cfg=nets.TrainConfig())


def test_kl_closed_form_zero_at_standard_normal():
    mu = np.zeros((3, 4))
    logvar = np.zeros((3, 4))
    _, kl = nets.vae_loss_terms(np.zeros((3, 1)), np.zeros((3, 1)), mu, logvar)
    assert np.all(kl == 0.0)
    # KL for N(m, s^2) vs N(0, 1): 0.5*(m^2 + s^2 - 1 - ln s^2), summed
    mu = np.array([[0.3, -0.7]])
    logvar = np.array([[0.2, -0.4]])
    expected = 0.5 * np.sum(mu**2 + np.exp(logvar) - 1.0 - logvar)
    _, kl = nets.vae_loss_terms(np.zeros((1, 1)), np.zeros((1, 1)), mu, logvar)
    assert abs(kl[0] - expected) < 1e-15


def test_serialization_round_trip_bitwise():
    net = nets.DenseNet([6, 9, 2], ["relu", "tanh"], seed=13)
    buf = io.BytesIO()
    nets.save_net(net, buf)
    buf.seek(0)
    back = nets.load_net(buf)
    assert back.layer_sizes == net.layer_sizes
    assert back.activations == net.activations
    for wa, wb in zip(net.weights, back.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(net.biases, back.biases):
        assert np.array_equal(ba, bb)
    x = np.random.default_rng(0).normal(size=6)
    assert np.array_equal(net.forward(x), back.forward(x))


def test_serialization_rejects_garbage():
    with pytest.raises(ValueError):
        nets.load_net(io.BytesIO(b"NOPE" + b"\x00" * 64))
    net = nets.DenseNet([2, 2], ["tanh"], seed=0)
    buf = io.BytesIO()
    nets.save_net(net, buf)
    truncated = io.BytesIO(buf.getvalue()[:-8])
    with pytest.raises(ValueError):
        nets.load_net(truncated)
