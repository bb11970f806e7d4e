import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from models import fd_jacobian

from softclik.core import FIBER_BOX, Box
from softclik.neuralop import (MlpParams, OperatorNet, grid_backward, mlp_backward, mlp_forward,
                               operator_backward, operator_eval, operator_grad_qa, operator_grad_s)
from softclik.trainer import Adam


def tiny_net(seed=0, scale=1.0):
    """[3, 4, 6] / [1, 4, 6] with v = 2, d = 3: 94 parameters."""
    rng = np.random.default_rng(seed)
    net = OperatorNet.create((3, 4, 6), (1, 4, 6), v=2, d=3, seed=seed)
    for p in net.parameters():
        p[...] = rng.normal(scale=scale, size=p.shape)
    net.out_mean = rng.normal(size=3)
    net.out_std = rng.uniform(0.5, 2.0, size=3)
    return net


def random_q(rng, n=None):
    return rng.uniform(FIBER_BOX.lo, FIBER_BOX.hi, size=(n, 3) if n else 3)


def test_mlp_zero():
    out, _ = mlp_forward(MlpParams.zeros([3, 5, 2]), np.ones((4, 3)))
    np.testing.assert_array_equal(out, 0.0)


def test_mlp_identity():
    x = np.random.default_rng(0).normal(size=(5, 3))
    out, _ = mlp_forward(MlpParams([np.eye(3)], [np.zeros(3)]), x)
    np.testing.assert_array_equal(out, x)


def test_mlp_hand_computed():
    W1, b1 = np.array([[0.3], [-0.2]]), np.array([0.1, 0.05])
    W2, b2 = np.array([[0.7, -0.4]]), np.array([0.02])
    x = 0.6
    h = np.tanh([0.3 * x + 0.1, -0.2 * x + 0.05])
    expected = 0.7 * h[0] - 0.4 * h[1] + 0.02
    out, _ = mlp_forward(MlpParams([W1, W2], [b1, b2]), np.array([[x]]))
    assert out[0, 0] == pytest.approx(expected, abs=1e-12)


def test_mlp_shape_checks():
    with pytest.raises(ValueError):
        MlpParams([np.zeros((4, 3)), np.zeros((2, 5))], [np.zeros(4), np.zeros(2)])
    with pytest.raises(ValueError):
        MlpParams([np.zeros((4, 3))], [np.zeros(3)])
    with pytest.raises(ValueError):
        mlp_forward(MlpParams.zeros([3, 2]), np.zeros((1, 4)))


def test_mlp_backward_input_gradient():
    rng = np.random.default_rng(1)
    p = MlpParams.init([3, 5, 4, 2], rng)
    x = rng.normal(size=3)
    _, tape = mlp_forward(p, x[None, :])
    for k in range(2):
        seed = np.zeros((1, 2))
        seed[0, k] = 1.0
        g, _ = mlp_backward(p, tape, seed, need_params=False)
        F = fd_jacobian(lambda xx: mlp_forward(p, xx[None, :])[0][0, k], x)
        np.testing.assert_allclose(g[0], F, rtol=1e-7, atol=1e-10)


def test_readout_all_ones():
    ones_b = MlpParams([np.zeros((6, 3))], [np.ones(6)])
    ones_t = MlpParams([np.zeros((6, 1))], [np.ones(6)])
    net = OperatorNet(ones_b, ones_t, v=2, d=3)
    np.testing.assert_array_equal(operator_eval(net, [-1, -1, -1], 0.3), [2.0, 2.0, 2.0])


def test_reshape_convention():
    """Feature j * d + k is latent j of coordinate k."""
    v, d = 4, 3
    M = np.arange(v * d, dtype=float).reshape(v, d) + 1.0
    branch = MlpParams([np.zeros((v * d, 3))], [M.ravel()])
    scale = np.arange(1.0, v + 1.0)
    trunk = MlpParams([np.zeros((v * d, 1))], [np.repeat(scale, d)])  # latent j weighted by j + 1
    net = OperatorNet(branch, trunk, v=v, d=d)
    np.testing.assert_allclose(operator_eval(net, [-1, -1, -1], 0.5), scale @ M)
    np.testing.assert_array_equal(M.ravel().reshape(v, d), M)


def test_zero_branch():
    net = tiny_net()
    for W, b in zip(net.branch.weights, net.branch.biases):
        W[...] = 0.0
        b[...] = 0.0
    s = np.linspace(0, 1, 7)
    np.testing.assert_array_equal(operator_eval(net, [-1, -0.5, 0], s), np.tile(net.out_mean, (7, 1)))
    np.testing.assert_array_equal(operator_grad_qa(net, [-1, -0.5, 0], s), 0.0)


def test_linear_branch_gradient_closed_form():
    rng = np.random.default_rng(2)
    W, b = rng.normal(size=(1, 3)), rng.normal(size=1)
    trunk = MlpParams.init([1, 5, 1], rng)
    box = Box([-2.0, -1.0, 0.0], [0.0, 3.0, 0.5])
    net = OperatorNet(MlpParams([W], [b]), trunk, v=1, d=1, q_box=box, out_mean=[0.3], out_std=[2.0])
    q, s = np.array([-1.0, 0.5, 0.1]), 0.35
    tr = mlp_forward(trunk, np.array([[2 * s - 1]]))[0][0, 0]
    expected = 2.0 * tr * W[0] * (2.0 / (box.hi - box.lo))
    np.testing.assert_allclose(operator_grad_qa(net, q, s)[0], expected, rtol=1e-14)


def test_grad_qa_matches_finite_differences():
    rng = np.random.default_rng(3)
    worst = 0.0
    for k in range(100):
        net = OperatorNet.create((3, 16, 16, 12), (1, 16, 16, 12), v=4, d=3, seed=k)
        net.out_std = np.array([0.05, 0.1, 0.2])
        q, s = random_q(rng), rng.uniform()
        J = operator_grad_qa(net, q, s)
        F = fd_jacobian(lambda qq: operator_eval(net, qq, s), q, h=1e-5)
        worst = max(worst, np.linalg.norm(J - F) / np.linalg.norm(J))
    assert worst < 1e-6


def test_grad_qa_full_size_vectorized_in_s():
    net = OperatorNet.create(seed=4)
    q, s = np.array([-0.4, -1.2, -0.9]), np.linspace(0, 1, 8)  # s = 1/2 maps to a zero trunk input
    J = operator_grad_qa(net, q, s)
    assert J.shape == (8, 3, 3)
    for k in (0, 4, 7):
        np.testing.assert_allclose(J[k], operator_grad_qa(net, q, s[k]), rtol=1e-13, atol=1e-15)
        F = fd_jacobian(lambda qq: operator_eval(net, qq, s[k]), q, h=1e-5)
        assert np.linalg.norm(J[k] - F) < 1e-6 * np.linalg.norm(J[k])


def test_grad_s_matches_finite_differences():
    net = tiny_net(5)
    q = np.array([-0.3, -1.0, -0.2])
    for s in (0.1, 0.5, 0.93):
        F = (operator_eval(net, q, s + 1e-6) - operator_eval(net, q, s - 1e-6)) / 2e-6
        np.testing.assert_allclose(operator_grad_s(net, q, s), F, rtol=1e-6, atol=1e-9)


def test_param_gradients_match_finite_differences():
    net = tiny_net(6, scale=0.7)
    assert sum(p.size for p in net.parameters()) <= 100
    rng = np.random.default_rng(6)
    Q, s, target = random_q(rng, 4), rng.uniform(size=4), rng.normal(size=(4, 3))
    loss, grads = operator_backward(net, Q, s, target)
    h = 1e-6
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            lp = operator_backward(net, Q, s, target)[0]
            p[idx] = old - h
            lm = operator_backward(net, Q, s, target)[0]
            p[idx] = old
            fd = (lp - lm) / (2 * h)
            worst = max(worst, abs(g[idx] - fd) / max(abs(fd), 1e-3))
    assert worst < 1e-5


def test_perfect_target_has_zero_loss():
    net = tiny_net(7)
    rng = np.random.default_rng(7)
    Q, s = random_q(rng, 5), rng.uniform(size=5)
    target = np.stack([operator_eval(net, q, si) for q, si in zip(Q, s)])
    loss, grads = operator_backward(net, Q, s, target)
    assert loss < 1e-28
    assert max(np.abs(g).max() for g in grads) < 1e-14


def test_one_adam_step_descends():
    net = tiny_net(8, scale=0.5)
    rng = np.random.default_rng(8)
    Q, s, target = random_q(rng, 16), rng.uniform(size=16), rng.normal(size=(16, 3))
    before, grads = operator_backward(net, Q, s, target)
    Adam(net.parameters()).step(grads, 1e-3)
    assert operator_backward(net, Q, s, target)[0] < before


def test_grid_backward_equals_pairwise():
    net = tiny_net(9)
    rng = np.random.default_rng(9)
    Q, s = random_q(rng, 3), np.linspace(0, 1, 5)
    targets = rng.normal(size=(3, 5, 3))
    loss, grads = grid_backward(net, Q, s, targets)
    Qp = np.repeat(Q, 5, axis=0)
    sp = np.tile(s, 3)
    loss2, grads2 = operator_backward(net, Qp, sp, net.denormalize_out(targets.reshape(-1, 3)))
    assert loss == pytest.approx(loss2, rel=1e-12)
    for a, b in zip(grads, grads2):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(s=st.floats(1e-6, 1 - 1e-6), q=st.lists(st.floats(-1.67, 0.0), min_size=3, max_size=3))
def test_continuous_in_s(s, q):
    net = OperatorNet.create(seed=1)
    net.out_std = np.full(3, 0.05)
    L = 0.18
    here = operator_eval(net, q, s)
    for t in (s - 1e-6, s + 1e-6):
        assert np.abs(operator_eval(net, q, t) - here).max() < 1e-6 * L


def test_outside_box_warns():
    net = tiny_net()
    with pytest.warns(RuntimeWarning, match="outside"):
        operator_eval(net, [0.5, 0.0, 0.0], 0.5)


def test_construction_checks():
    b, t = MlpParams.zeros([3, 6]), MlpParams.zeros([1, 6])
    with pytest.raises(ValueError):
        OperatorNet(b, t, v=3, d=3)
    with pytest.raises(ValueError):
        OperatorNet(b, MlpParams.zeros([2, 6]), v=2, d=3)
    with pytest.raises(ValueError):
        OperatorNet(b, t, v=2, d=3, out_std=[1.0, 0.0, 1.0])
    net = OperatorNet.create()
    assert net.branch.sizes == [3, 64, 64, 64, 192] and net.trunk.sizes == [1, 64, 64, 64, 192]
    np.testing.assert_allclose(net.normalize_q(FIBER_BOX.lo), -1.0)
    np.testing.assert_allclose(net.normalize_q(FIBER_BOX.hi), 1.0)
