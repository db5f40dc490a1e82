import numpy as np
import pytest

from oracles import gru_scalar
from tempograph import autodiff as ad
from tempograph.autodiff import ShapeError, gradient_check
from tempograph.nn import (ParameterSet, adam_step, gru_cell, init_attention, init_gru, init_mlp,
                           mlp_forward, multi_head_attention)


def test_glorot_init_bounds_and_zero_bias():
    p = ParameterSet(0)
    init_mlp(p, "m", [6, 10, 2])
    bound = np.sqrt(6 / 16)
    assert np.abs(p["m.w0"].data).max() <= bound
    assert (p["m.b0"].data == 0).all() and (p["m.b1"].data == 0).all()


# --------------------------------------------------------------------- MLP

def test_mlp_identity_layer():
    p = ParameterSet()
    p.add("m.w0", np.eye(3))
    p.add_zeros("m.b0", (3,))
    x = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(mlp_forward(p, "m", x, [3, 3], "linear").data, x)


def test_mlp_zero_params_zero_output(rng):
    p = ParameterSet()
    init_mlp(p, "m", [4, 5, 2])
    for name in p:
        p[name].data[...] = 0
    assert (mlp_forward(p, "m", rng.normal(size=(3, 4)), [4, 5, 2]).data == 0).all()


def test_mlp_matches_hand_composition(rng):
    p = ParameterSet(3)
    init_mlp(p, "m", [4, 6, 6, 2])
    for name in p:
        p[name].data[...] = rng.uniform(-1, 1, p[name].shape)
    x = rng.uniform(-1, 1, (5, 4))
    h = np.tanh(x @ p["m.w0"].data + p["m.b0"].data)
    h = np.tanh(h @ p["m.w1"].data + p["m.b1"].data)
    want = h @ p["m.w2"].data + p["m.b2"].data
    np.testing.assert_allclose(mlp_forward(p, "m", x, [4, 6, 6, 2], "tanh").data, want, rtol=0, atol=1e-14)


def test_mlp_dim_mismatch():
    p = ParameterSet()
    init_mlp(p, "m", [3, 2])
    with pytest.raises(ShapeError):
        mlp_forward(p, "m", np.zeros((1, 4)), [3, 2])


def test_mlp_gradient(rng):
    p = ParameterSet(1)
    init_mlp(p, "m", [3, 7, 2])
    for name in p:
        p[name].data[...] = rng.uniform(-1, 1, p[name].shape)
    x = ad.Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    w = rng.normal(size=(4, 2))
    fn = lambda: ad.sum(ad.mul(mlp_forward(p, "m", x, [3, 7, 2], "tanh"), w))  # noqa: E731
    assert gradient_check(fn, [x] + [p[n] for n in p]) < 1e-5


# --------------------------------------------------------------------- GRU

def _gru(size_in=1, size_h=1, value=None, rng=None):
    p = ParameterSet(0)
    init_gru(p, "g", size_in, size_h)
    for name in p:
        p[name].data[...] = 0.0 if value is None else rng.uniform(-1, 1, p[name].shape)
    return p


def test_gru_zero_params_hand_arithmetic():
    p = _gru()
    # z = 0.5, r = 0.5, h~ = tanh(0) = 0  ->  h' = 0.5 * 1.0
    np.testing.assert_allclose(gru_cell(p, "g", np.array([[0.3]]), np.array([[1.0]])).data, [[0.5]])
    np.testing.assert_array_equal(gru_cell(p, "g", np.array([[0.3]]), np.array([[0.0]])).data, [[0.0]])


def test_gru_matches_scalar_oracle(rng):
    p = _gru(value=1, rng=rng)
    W = {g: p[f"g.W{g}"].data[0, 0] for g in "zrh"}
    U = {g: p[f"g.U{g}"].data[0, 0] for g in "zrh"}
    b = {g: p[f"g.b{g}"].data[0] for g in "zrh"}
    for x, h in [(0.3, -0.7), (-1.0, 0.2), (0.0, 0.9)]:
        got = gru_cell(p, "g", np.array([[x]]), np.array([[h]])).data[0, 0]
        assert got == pytest.approx(gru_scalar(x, h, W, U, b), abs=1e-14)


def test_gru_gradient(rng):
    p = _gru(4, 3, value=1, rng=rng)
    x = ad.Tensor(rng.uniform(-1, 1, (5, 4)), requires_grad=True)
    h = ad.Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    w = rng.normal(size=(5, 3))
    fn = lambda: ad.sum(ad.mul(gru_cell(p, "g", x, h), w))  # noqa: E731
    assert gradient_check(fn, [x, h] + [p[n] for n in p]) < 1e-5


def test_gru_dim_mismatch():
    p = _gru(2, 3)
    with pytest.raises(ShapeError):
        gru_cell(p, "g", np.zeros((1, 3)), np.zeros((1, 3)))


# --------------------------------------------------------------- attention

def _att(rng, dq=4, dk=6, dm=4):
    p = ParameterSet(2)
    init_attention(p, "a", dq, dk, dk, dm)
    for name in p:
        p[name].data[...] = rng.uniform(-1, 1, p[name].shape)
    return p


def test_attention_single_unmasked_key_passes_its_value(rng):
    p = _att(rng)
    q = rng.uniform(-1, 1, (1, 4))
    keys = rng.uniform(-1, 1, (1, 3, 6))
    mask = np.array([[False, True, False]])
    out = multi_head_attention(p, "a", q, keys, keys, 2, mask)
    want = keys[0, 1] @ p["a.Wv"].data @ p["a.Wo"].data + p["a.bo"].data
    np.testing.assert_allclose(out.out.data[0], want, atol=1e-13)
    np.testing.assert_allclose(out.weights[0, :, 1], 1.0)


def test_attention_identical_keys_uniform(rng):
    p = _att(rng)
    keys = np.repeat(rng.uniform(-1, 1, (1, 1, 6)), 4, axis=1)
    mask = np.array([[True, True, False, True]])
    w = multi_head_attention(p, "a", rng.uniform(-1, 1, (1, 4)), keys, keys, 2, mask).weights
    np.testing.assert_allclose(w[0][:, mask[0]], 1 / 3, atol=1e-15)


def test_attention_weights_normalized_and_all_masked_zero(rng):
    p = _att(rng)
    keys = rng.uniform(-1, 1, (5, 7, 6))
    mask = rng.random((5, 7)) < 0.6
    mask[0] = False
    mask[1, 0] = True
    res = multi_head_attention(p, "a", rng.uniform(-1, 1, (5, 4)), keys, keys, 2, mask)
    assert (res.out.data[0] == 0).all()
    for r in range(1, 5):
        if mask[r].any():
            np.testing.assert_allclose(res.weights[r][:, mask[r]].sum(-1), 1.0, atol=1e-12)


def test_attention_gradient(rng):
    p = _att(rng)
    q = ad.Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)
    keys = ad.Tensor(rng.uniform(-1, 1, (3, 5, 6)), requires_grad=True)
    mask = np.array([[1, 1, 1, 0, 0], [1, 0, 0, 0, 0], [0, 0, 0, 0, 0]], bool)
    w = rng.normal(size=(3, 4))
    fn = lambda: ad.sum(ad.mul(multi_head_attention(p, "a", q, keys, keys, 2, mask).out, w))  # noqa: E731
    assert gradient_check(fn, [q, keys] + [p[n] for n in p]) < 1e-5


def test_attention_head_divisibility(rng):
    p = _att(rng, dm=4)
    with pytest.raises(ShapeError):
        multi_head_attention(p, "a", np.zeros((1, 4)), np.zeros((1, 2, 6)), np.zeros((1, 2, 6)), 3,
                             np.ones((1, 2), bool))


# -------------------------------------------------------------------- Adam

def test_adam_zero_gradient_fixed_point():
    p = ParameterSet()
    p.add("w", np.array([1.0, -2.0]))
    adam_step(p, 1e-2)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_magnitude_is_lr():
    p = ParameterSet()
    p.add("w", np.array([0.5]))
    p["w"].grad[...] = 3.0
    adam_step(p, 1e-3)
    # m_hat = g, v_hat = g^2 -> step = lr * g / (|g| + eps)
    assert p["w"].data[0] == pytest.approx(0.5 - 1e-3 * 3.0 / (3.0 + 1e-8), abs=1e-15)
    assert (p["w"].grad == 0).all()


def test_adam_deterministic():
    def run():
        p = ParameterSet(5)
        init_mlp(p, "m", [3, 3])
        for k in range(5):
            p["m.w0"].grad[...] = np.sin(np.arange(9).reshape(3, 3) + k)
            adam_step(p, 1e-2)
        return p.digest()
    assert run() == run()


def test_parameter_state_roundtrip_and_append_rows():
    p = ParameterSet(0)
    p.add("M", np.ones((2, 3)))
    p.append_rows("M", np.full((1, 3), 7.0))
    assert p["M"].shape == (3, 3) and p.entry("M").m.shape == (3, 3)
    q = ParameterSet(0)
    q.add("M", np.zeros((1, 3)))
    q.load_state(p.state())
    assert q.digest() == p.digest()
    with pytest.raises(KeyError):
        p.add("M", np.zeros(1))
