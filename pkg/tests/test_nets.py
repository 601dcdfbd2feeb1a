"""Forward/backward correctness of the little MLP and its masked softmax."""

import numpy as np
import pytest

from hanalab import nets

from helpers import fd_grad as _fd_grad, rel_err as _rel_err


def test_shapes_and_param_count():
    params = nets.init_params([7, 5, 4], seed=0)  # 3 actions + value unit
    x = np.random.default_rng(1).normal(size=(4, 7))
    logits, value, _ = nets.forward(params, x)
    assert logits.shape == (4, 3)
    assert value.shape == (4,)
    assert nets.n_params(params) == 7 * 5 + 5 + 5 * 4 + 4


def test_init_deterministic():
    a = nets.init_params([6, 4, 2], seed=42)
    b = nets.init_params([6, 4, 2], seed=42)
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_pack_unpack_roundtrip():
    params = nets.init_params([5, 4, 3], seed=3)
    theta = nets.pack(params)
    back = nets.unpack(theta, params)
    for k in params:
        np.testing.assert_array_equal(params[k], back[k])


def test_backward_matches_fd_logits():
    rng = np.random.default_rng(0)
    params = nets.init_params([6, 8, 5], seed=9)
    x = rng.normal(size=(5, 6))
    w = rng.normal(size=(5, 4))  # arbitrary linear functional of the logits

    def loss(p):
        logits, _, _ = nets.forward(p, x)
        return float((w * logits).sum())

    logits, _, cache = nets.forward(params, x)
    grads = nets.backward(params, cache, dlogits=w, dvalue=np.zeros(5))
    assert _rel_err(nets.pack(grads), _fd_grad(loss, params)) < 1e-7


def test_backward_matches_fd_value():
    rng = np.random.default_rng(4)
    params = nets.init_params([5, 6, 4], seed=11)
    x = rng.normal(size=(7, 5))
    w = rng.normal(size=7)

    def loss(p):
        _, value, _ = nets.forward(p, x)
        return float((w * value).sum())

    _, _, cache = nets.forward(params, x)
    grads = nets.backward(params, cache, dlogits=np.zeros((7, 3)), dvalue=w)
    assert _rel_err(nets.pack(grads), _fd_grad(loss, params)) < 1e-7


def test_backward_accumulates_two_passes():
    rng = np.random.default_rng(5)
    params = nets.init_params([4, 5, 3], seed=2)
    xa = rng.normal(size=(3, 4))
    xb = rng.normal(size=(3, 4))
    wa = rng.normal(size=(3, 2))
    wb = rng.normal(size=3)

    def loss(p):
        la, _, _ = nets.forward(p, xa)
        _, vb, _ = nets.forward(p, xb)
        return float((wa * la).sum() + (wb * vb).sum())

    _, _, ca = nets.forward(params, xa)
    _, _, cb = nets.forward(params, xb)
    grads = nets.backward(params, ca, dlogits=wa, dvalue=np.zeros(3))
    grads = nets.backward(params, cb, dlogits=np.zeros((3, 2)), dvalue=wb,
                          grads=grads)
    assert _rel_err(nets.pack(grads), _fd_grad(loss, params)) < 1e-7


def test_masked_log_softmax_basics():
    logits = np.array([[1.0, 2.0, 3.0]])
    legal = np.array([[True, False, True]])
    logp = nets.masked_log_softmax(logits, legal, inv_temp=1.0)
    p = np.exp(logp[0])
    assert p[1] < 1e-200
    assert abs(p[0] + p[2] - 1.0) < 1e-12
    # masking then renormalising matches two-action softmax directly
    expect = np.exp([1.0, 3.0]) / np.exp([1.0, 3.0]).sum()
    np.testing.assert_allclose(p[[0, 2]], expect, atol=1e-12)


def test_masked_softmax_temperature():
    logits = np.array([[0.0, 1.0]])
    legal = np.ones((1, 2), dtype=bool)
    hot = nets.masked_softmax(logits, legal, inv_temp=100.0)
    assert hot[0, 1] > 1 - 1e-12
    soft = nets.masked_softmax(logits, legal, inv_temp=1e-6)
    np.testing.assert_allclose(soft[0], [0.5, 0.5], atol=1e-5)


def test_masked_softmax_extreme_logits_stable():
    logits = np.array([[1e5, -1e5, 0.0]])
    legal = np.array([[True, True, False]])
    p = nets.masked_softmax(logits, legal, inv_temp=1.0)
    assert np.isfinite(p).all()
    assert abs(p.sum() - 1.0) < 1e-12
    assert p[0, 2] == 0.0


def test_single_legal_action_is_certain():
    logits = np.array([[-3.0, 7.0, 0.5]])
    legal = np.array([[False, True, False]])
    p = nets.masked_softmax(logits, legal, inv_temp=1.0)
    np.testing.assert_allclose(p[0], [0.0, 1.0, 0.0], atol=1e-300)
    logp = nets.masked_log_softmax(logits, legal, inv_temp=1.0)
    assert logp[0, 1] == 0.0


def test_all_illegal_raises():
    logits = np.zeros((1, 3))
    legal = np.zeros((1, 3), dtype=bool)
    with pytest.raises(ValueError):
        nets.masked_softmax(logits, legal, inv_temp=1.0)
