"""Tensor ops, reverse-mode gradients, Adam, and checkpoint round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciail import nn
from ciail.errors import (
    DimensionError,
    StaleTapeError,
    TrainingDivergenceError,
)


def manual_two_layer_tanh(x, w0, b0, w1, b1):
    # straight-line scalar oracle: two matrix products and tanh, no graph code
    h = np.tanh(x @ w0 + b0)
    return h @ w1 + b1


def test_forward_identity_layer():
    spec = nn.MLPSpec((2, 2))
    mlp = nn.MLP(spec, [nn.Param("W0", np.eye(2)), nn.Param("b0", np.zeros((1, 2)))])
    y, tape = mlp.forward(np.array([[1.0, 2.0]]))
    assert np.allclose(y.val, [[1.0, 2.0]])
    assert tape.output is y


def test_forward_zero_weights_returns_bias():
    spec = nn.MLPSpec((3, 2))
    b = np.array([[0.5, -1.5]])
    mlp = nn.MLP(spec, [nn.Param("W0", np.zeros((3, 2))), nn.Param("b0", b.copy())])
    for _ in range(3):
        x = np.random.default_rng(0).normal(size=(4, 3))
        y, _ = mlp.forward(x)
        assert np.allclose(y.val, np.broadcast_to(b, (4, 2)))


def test_forward_matches_hand_computed_two_layer():
    rng = np.random.default_rng(42)
    spec = nn.MLPSpec((3, 5, 2), hidden_activation="tanh")
    mlp = nn.MLP.init(spec, rng)
    x = rng.normal(size=(4, 3))
    y, _ = mlp.forward(x)
    w0, b0, w1, b1 = (p.val for p in mlp.params)
    assert np.allclose(y.val, manual_two_layer_tanh(x, w0, b0, w1, b1), atol=1e-12)


def test_forward_shape_mismatch_names_layer():
    mlp = nn.MLP.init(nn.MLPSpec((3, 2)), np.random.default_rng(0))
    with pytest.raises(DimensionError, match="layer 0"):
        mlp.forward(np.zeros((1, 4)))


def test_forward_deterministic():
    rng = np.random.default_rng(7)
    mlp = nn.MLP.init(nn.MLPSpec((4, 8, 1)), rng)
    x = rng.normal(size=(5, 4))
    y1, _ = mlp.forward(x)
    y2, _ = mlp.forward(x)
    assert np.array_equal(y1.val, y2.val)


def test_backward_linear_sum_loss():
    # L = sum(x @ W): dW = column sums of x, dx = row sums of W
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 3))
    mlp = nn.MLP(
        nn.MLPSpec((3, 2)),
        [nn.Param("W0", rng.normal(size=(3, 2))), nn.Param("b0", np.zeros((1, 2)))],
    )
    y, tape = mlp.forward(x)
    loss = nn.sum_(y)
    grads = nn.backward(nn.Tape(loss, mlp.params, tape.inputs))
    assert np.allclose(grads.params["W0"], x.sum(axis=0, keepdims=True).T @ np.ones((1, 2)))
    assert np.allclose(grads.params["b0"], np.full((1, 2), 4.0))
    assert np.allclose(grads.inputs[0], np.ones((4, 2)) @ mlp.params[0].val.T)


def test_backward_constant_network_zero_grads():
    mlp = nn.MLP(
        nn.MLPSpec((2, 1)),
        [nn.Param("W0", np.zeros((2, 1))), nn.Param("b0", np.zeros((1, 1)))],
    )
    x = np.ones((3, 2))
    y, tape = mlp.forward(x)
    grads = nn.backward(nn.Tape(nn.sum_(nn.mul(y, 0.0)), mlp.params, tape.inputs))
    assert np.allclose(grads.params["W0"], 0.0)
    assert np.allclose(grads.inputs[0], 0.0)


def test_backward_scalar_square():
    x = nn.Node(np.array([[3.0]]))
    y = nn.square(x)
    (g,) = nn.grad(y, [x])
    assert np.allclose(g.val, [[6.0]])


def test_backward_matches_finite_differences_on_mlp():
    rng = np.random.default_rng(11)
    mlp = nn.MLP.init(nn.MLPSpec((3, 6, 1), hidden_activation="tanh"), rng)
    x = rng.normal(size=(5, 3))
    y_target = rng.normal(size=(5, 1))

    def loss_node():
        y = mlp.apply(nn.as_node(x))
        return nn.mean_(nn.square(nn.sub(y, y_target)))

    loss = loss_node()
    grads = nn.backward(nn.Tape(loss, mlp.params, []))
    fd = nn.finite_diff_grad(lambda: float(loss_node().val), mlp.params, h=1e-5)
    for p in mlp.params:
        np.testing.assert_allclose(grads.params[p.name], fd[p.name], rtol=1e-4, atol=1e-6)


def test_stale_tape_detected():
    rng = np.random.default_rng(0)
    mlp = nn.MLP.init(nn.MLPSpec((2, 1)), rng)
    y, tape = mlp.forward(np.ones((1, 2)))
    mlp.params[0].assign(mlp.params[0].val * 2.0)
    with pytest.raises(StaleTapeError, match="W0"):
        nn.backward(tape)


def test_double_backward_through_input_gradient():
    # d/dw of (dy/dx)^2 for y = tanh(w*x): analytic check
    w = nn.Param("w", np.array([[0.7]]))
    x = nn.Node(np.array([[0.3]]))
    y = nn.tanh(nn.matmul(x, w))
    (gx,) = nn.grad(y, [x])  # dy/dx = w * (1 - tanh(wx)^2)
    pen = nn.sum_(nn.square(gx))
    (gw,) = nn.grad(pen, [w])
    wv, xv = 0.7, 0.3
    t = np.tanh(wv * xv)
    dydx = wv * (1 - t**2)
    # d/dw [ (w(1-t^2))^2 ] with t = tanh(wx)
    d = 2 * dydx * ((1 - t**2) + wv * (-2 * t * (1 - t**2) * xv))
    assert np.allclose(gw.val, [[d]], rtol=1e-10)


def test_adam_zero_grad_is_fixed_point():
    rng = np.random.default_rng(1)
    mlp = nn.MLP.init(nn.MLPSpec((2, 2)), rng)
    before = {p.name: p.val.copy() for p in mlp.params}
    state = nn.AdamState.for_params(mlp.params, lr=0.01)
    for _ in range(3):
        nn.adam_step(state, mlp.params, {p.name: np.zeros_like(p.val) for p in mlp.params})
    for p in mlp.params:
        assert np.array_equal(p.val, before[p.name])


def test_adam_first_step_magnitude():
    # single-step hand evaluation: m_hat/sqrt(v_hat) = 1 up to eps
    p = nn.Param("p", np.array([[0.0]]))
    state = nn.AdamState.for_params([p], lr=0.001)
    nn.adam_step(state, [p], {"p": np.array([[1.0]])})
    assert np.allclose(p.val, [[-0.001]], atol=1e-6)


def test_adam_monotone_direction():
    p = nn.Param("p", np.array([[1.0]]))
    state = nn.AdamState.for_params([p], lr=0.01)
    vals = [p.val.item()]
    for _ in range(2):
        nn.adam_step(state, [p], {"p": np.array([[2.5]])})
        vals.append(p.val.item())
    assert vals[0] > vals[1] > vals[2]


def test_adam_nonfinite_grad_names_param():
    p = nn.Param("policy.W0", np.zeros((1, 1)))
    state = nn.AdamState.for_params([p])
    with pytest.raises(TrainingDivergenceError, match="policy.W0"):
        nn.adam_step(state, [p], {"policy.W0": np.array([[np.nan]])})


def test_finite_diff_simple_cases():
    p = nn.Param("p", np.array([[1.0]]))
    g = nn.finite_diff_grad(lambda: float(p.val[0, 0] ** 2), [p], h=1e-5)
    assert abs(g["p"][0, 0] - 2.0) < 1e-8

    q = nn.Param("q", np.array([[1.0, 2.0]]))
    g = nn.finite_diff_grad(lambda: float((q.val**2).sum()), [q], h=1e-5)
    np.testing.assert_allclose(g["q"], [[2.0, 4.0]], atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_backward_matches_fd_random_bce(seed):
    # spec invariant: reverse mode vs central differences on random seeds
    rng = np.random.default_rng(seed)
    mlp = nn.MLP.init(nn.MLPSpec((3, 4, 1), hidden_activation="tanh"), rng)
    x = rng.normal(size=(4, 3))
    y = rng.integers(0, 2, size=(4, 1)).astype(float)

    def loss_node():
        z = mlp.apply(nn.as_node(x))
        return nn.mean_(nn.sub(nn.softplus(z), nn.mul(y, z)))

    grads = nn.backward(nn.Tape(loss_node(), mlp.params, []))
    fd = nn.finite_diff_grad(lambda: float(loss_node().val), mlp.params, h=1e-5)
    for p in mlp.params:
        np.testing.assert_allclose(grads.params[p.name], fd[p.name], rtol=1e-4, atol=1e-6)


def test_elementwise_op_grads():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 4))
    for op in (nn.tanh, nn.relu, nn.sigmoid, nn.softplus, nn.exp, nn.square):
        leaf = nn.Node(x.copy())
        out = nn.sum_(op(leaf))
        (g,) = nn.grad(out, [leaf])
        h = 1e-6
        fd = np.zeros_like(x)
        for i in np.ndindex(x.shape):
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            fd[i] = (op(nn.Node(xp)).val.sum() - op(nn.Node(xm)).val.sum()) / (2 * h)
        np.testing.assert_allclose(g.val, fd, rtol=1e-4, atol=1e-7, err_msg=op.__name__)


def test_logsumexp_and_gather():
    rng = np.random.default_rng(9)
    logits = rng.normal(size=(5, 4))
    idx = rng.integers(0, 4, size=5)
    leaf = nn.Node(logits.copy())
    logp = nn.sub(leaf, nn.logsumexp(leaf, axis=1))
    picked = nn.gather_cols(logp, idx)
    expected = logits[np.arange(5), idx] - np.log(np.exp(logits).sum(axis=1))
    assert np.allclose(picked.val[:, 0], expected)
    (g,) = nn.grad(nn.sum_(picked), [leaf])
    # gradient of sum of row log-probs: onehot(idx) - softmax
    soft = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    onehot = np.zeros_like(logits)
    onehot[np.arange(5), idx] = 1.0
    np.testing.assert_allclose(g.val, onehot - soft, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    arrays = {
        "pi.W0": rng.normal(size=(3, 4)),
        "pi.b0": rng.normal(size=(1, 4)),
        "v.W0": rng.normal(size=(4, 1)),
    }
    path = tmp_path / "ck.bin"
    nn.save_checkpoint(path, arrays)
    loaded = nn.load_checkpoint(path)
    assert list(loaded) == list(arrays)
    for k in arrays:
        assert np.array_equal(loaded[k], arrays[k])
    # byte-exact across save/load/save
    path2 = tmp_path / "ck2.bin"
    nn.save_checkpoint(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()
    assert path.read_bytes().startswith(b"CIAIL1")
