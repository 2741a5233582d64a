import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sigrec import _kernels
from sigrec.nn.core import (
    AdamState,
    DenseParams,
    GruLayerParams,
    adam_update,
    cross_entropy,
    dense_softmax_forward,
    dropout_mask,
    finite_difference_gradient,
    gru_cell_backward,
    gru_cell_forward,
    gru_layer_backward,
    gru_layer_forward,
    gru_sequence_forward,
    max_relative_error,
    softmax,
)


def _random_gru(rng, d_in=3, hidden=4, scale=0.5):
    return GruLayerParams(
        rng.normal(scale=scale, size=(d_in, 3 * hidden)),
        rng.normal(scale=scale, size=(hidden, 3 * hidden)),
        rng.normal(scale=scale, size=3 * hidden),
    )


# -- GRU cell ---------------------------------------------------------------

def test_cell_zero_params_fixed_point():
    p = GruLayerParams.zeros(3, 4)
    h, _ = gru_cell_forward(np.ones(3), np.zeros(4), p)
    assert np.all(h == 0)


def test_cell_zero_params_halves_state():
    p = GruLayerParams.zeros(3, 4)
    v = np.array([0.3, -1.0, 2.0, 0.5])
    h, (_, _, z, _, h_tilde) = gru_cell_forward(np.ones(3), v, p)
    assert np.allclose(z, 0.5) and np.allclose(h_tilde, 0.0)
    np.testing.assert_allclose(h, 0.5 * v, atol=1e-15)


def test_cell_rejects_non_finite():
    with pytest.raises(ValueError):
        gru_cell_forward(np.array([np.nan, 0, 0]), np.zeros(4), GruLayerParams.zeros(3, 4))


def test_cell_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    p = _random_gru(rng)
    x, h_prev = rng.normal(size=3), rng.normal(size=4)
    w = rng.normal(size=4)  # scalar objective: w . h

    def loss(_=None):
        return float(w @ gru_cell_forward(x, h_prev, p)[0])

    _, cache = gru_cell_forward(x, h_prev, p)
    dx, dh_prev, grads = gru_cell_backward(w, cache, p)
    num = finite_difference_gradient(loss, {"W": p.W, "U": p.U, "b": p.b})
    for name in ("W", "U", "b"):
        assert max_relative_error(getattr(grads, name), num[name], 1e-8) < 1e-5
    assert max_relative_error(dx, finite_difference_gradient(lambda _: loss(), x), 1e-8) < 1e-5
    assert max_relative_error(dh_prev, finite_difference_gradient(lambda _: loss(), h_prev), 1e-8) < 1e-5


def test_cell_backward_missing_cache():
    with pytest.raises(ValueError):
        gru_cell_backward(np.ones(4), None, GruLayerParams.zeros(3, 4))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-1, 1)), arrays(np.float64, 3, elements=st.floats(-50, 50)),
       st.integers(0, 2**31))
def test_cell_bounded(h_prev, x, seed):
    p = _random_gru(np.random.default_rng(seed), scale=3.0)
    h, _ = gru_cell_forward(x, h_prev, p)
    assert np.all(np.abs(h) <= 1.0)


# -- sequences ----------------------------------------------------------------

def test_sequence_length_one_equals_cell():
    rng = np.random.default_rng(1)
    p = _random_gru(rng)
    xs = rng.normal(size=(5, 3))
    h_seq, _ = gru_sequence_forward(xs, 1, p)
    h_cell, _ = gru_cell_forward(xs[0], np.zeros(4), p)
    np.testing.assert_allclose(h_seq, h_cell, atol=1e-14)


def test_sequence_matches_cell_loop():
    rng = np.random.default_rng(2)
    p = _random_gru(rng)
    xs = rng.normal(size=(6, 3))
    h = np.zeros(4)
    for x in xs[:4]:
        h, _ = gru_cell_forward(x, h, p)
    np.testing.assert_allclose(gru_sequence_forward(xs, 4, p)[0], h, atol=1e-14)


def test_sequence_zero_params():
    xs = np.random.default_rng(3).normal(size=(7, 3))
    assert np.all(gru_sequence_forward(xs, 7, GruLayerParams.zeros(3, 4))[0] == 0)


def test_sequence_padding_invariance():
    rng = np.random.default_rng(4)
    p = _random_gru(rng)
    xs = rng.normal(size=(4, 3))
    padded = np.vstack([xs, rng.normal(size=(6, 3))])
    a = gru_sequence_forward(xs, 4, p)[0]
    b = gru_sequence_forward(padded, 4, p)[0]
    assert np.array_equal(a, b)


def test_sequence_errors():
    p = GruLayerParams.zeros(3, 4)
    with pytest.raises(ValueError):
        gru_sequence_forward(np.zeros((3, 3)), 0, p)
    with pytest.raises(ValueError):
        gru_sequence_forward(np.zeros((3, 3)), 4, p)


def test_layer_bptt_matches_finite_differences():
    rng = np.random.default_rng(5)
    p = _random_gru(rng)
    x = rng.normal(size=(5, 2, 3))
    lengths = np.array([5, 3])
    w = rng.normal(size=(5, 2, 4))

    def loss(_=None):
        return float((gru_layer_forward(x, lengths, p)[0] * w).sum())

    _, cache = gru_layer_forward(x, lengths, p)
    dx, grads = gru_layer_backward(w, cache, p)
    num = finite_difference_gradient(loss, {"W": p.W, "U": p.U, "b": p.b})
    for name in ("W", "U", "b"):
        assert max_relative_error(getattr(grads, name), num[name], 1e-8) < 1e-5
    assert max_relative_error(dx, finite_difference_gradient(lambda _: loss(), x), 1e-8) < 1e-5


def test_masked_steps_get_no_input_gradient():
    rng = np.random.default_rng(6)
    p = _random_gru(rng)
    x = rng.normal(size=(6, 1, 3))
    out, cache = gru_layer_forward(x, np.array([2]), p)
    d_out = np.zeros_like(out)
    d_out[-1] = 1.0
    dx, _ = gru_layer_backward(d_out, cache, p)
    assert np.all(dx[2:] == 0)
    assert np.any(dx[:2] != 0)


def test_zero_upstream_gives_zero_grads():
    rng = np.random.default_rng(7)
    p = _random_gru(rng)
    x = rng.normal(size=(4, 2, 3))
    out, cache = gru_layer_forward(x, np.array([4, 2]), p)
    dx, g = gru_layer_backward(np.zeros_like(out), cache, p)
    assert not dx.any() and not g.W.any() and not g.U.any() and not g.b.any()


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_kernels_compiled_and_interpreted_agree(dtype):
    rng = np.random.default_rng(8)
    T, B, H = 7, 3, 5
    xw = rng.normal(size=(T, B, 3 * H)).astype(dtype)
    u_zr = rng.normal(scale=0.4, size=(H, 2 * H)).astype(dtype)
    u_h = rng.normal(scale=0.4, size=(H, H)).astype(dtype)
    lengths = np.array([7, 4, 1])
    fast = _kernels.gru_forward_kernel(xw, u_zr, u_h, lengths)
    slow = _kernels.gru_forward_kernel.py_func(xw, u_zr, u_h, lengths)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    for a, b in zip(fast, slow):
        assert a.dtype == dtype
        np.testing.assert_allclose(a, b, atol=tol)
    d_out = rng.normal(size=(T, B, H)).astype(dtype)
    fb = _kernels.gru_backward_kernel(d_out, *fast, u_zr, u_h, lengths)
    sb = _kernels.gru_backward_kernel.py_func(d_out, *slow, u_zr, u_h, lengths)
    for a, b in zip(fb, sb):
        assert a.dtype == dtype
        np.testing.assert_allclose(a, b, atol=10 * tol)


# -- heads, loss, dropout ---------------------------------------------------------

def test_softmax_examples():
    p = dense_softmax_forward(np.ones(3), DenseParams(np.zeros((3, 7)), np.zeros(7)))
    np.testing.assert_allclose(p, np.full(7, 1 / 7))
    np.testing.assert_allclose(softmax(np.array([math.log(2), 0.0])), [2 / 3, 1 / 3], atol=1e-15)


@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-500, 500)))
def test_softmax_normalised(logits):
    p = softmax(logits)
    assert np.all(p > 0) or np.ptp(logits) > 700
    assert abs(p.sum() - 1) < 1e-6


def test_cross_entropy_examples():
    assert cross_entropy(np.array([0.0, 1.0]), 1) == 0.0
    assert cross_entropy(np.full(12, 1 / 12), 5) == pytest.approx(math.log(12))
    assert cross_entropy(np.array([1e-30, 1.0]), 0) == pytest.approx(-math.log(1e-12))


def test_dropout_mask():
    rng = np.random.default_rng(0)
    assert np.all(dropout_mask((5, 5), 0.0, rng) == 1)
    m = dropout_mask(10_000, 0.2, rng)
    assert abs(m.mean() - 1.0) < 0.05
    assert set(np.unique(m).tolist()) <= {0.0, np.float32(1 / 0.8)}
    a = dropout_mask(50, 0.2, np.random.default_rng(3))
    b = dropout_mask(50, 0.2, np.random.default_rng(3))
    assert np.array_equal(a, b)


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_fresh_state():
    p = {"w": np.array([1.0, -2.0])}
    adam_update(p, {"w": np.zeros(2)}, AdamState())
    assert p["w"].tolist() == [1.0, -2.0]


@given(st.integers(0, 1000), arrays(np.float64, 3, elements=st.floats(0, 10)))
def test_adam_zero_gradient_identity_without_momentum(t, v):
    p = {"w": np.array([0.5, 1.5, -3.0])}
    state = AdamState(t=t, m={"w": np.zeros(3)}, v={"w": v.copy()})
    adam_update(p, {"w": np.zeros(3)}, state)
    assert p["w"].tolist() == [0.5, 1.5, -3.0]


def test_adam_first_step():
    p = {"w": np.array([0.0])}
    adam_update(p, {"w": np.array([1.0])}, AdamState(lr=1e-4))
    assert p["w"][0] == pytest.approx(-1e-4 / (1 + 1e-8), rel=1e-12)


def test_adam_monotone_under_constant_gradient():
    p = {"w": np.array([0.0, 0.0])}
    state = AdamState(lr=1e-3)
    prev = p["w"].copy()
    for _ in range(50):
        adam_update(p, {"w": np.array([2.0, -0.5])}, state)
        assert p["w"][0] < prev[0] and p["w"][1] > prev[1]
        prev = p["w"].copy()


# -- finite differences ---------------------------------------------------------

def test_fd_quadratic_and_constant():
    assert finite_difference_gradient(lambda t: t ** 2, 3.0) == pytest.approx(6.0, abs=1e-6)
    assert finite_difference_gradient(lambda t: 4.0, np.ones(3)).tolist() == [0.0, 0.0, 0.0]


def test_fd_matches_softmax_cross_entropy():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=10)
    y = 4
    analytic = softmax(logits)
    analytic[y] -= 1
    num = finite_difference_gradient(lambda z: cross_entropy(softmax(z), y), logits.copy())
    assert np.max(np.abs(analytic - num)) < 1e-6


def test_gru_dispatch_threshold():
    from sigrec._accel import USE_NUMBA

    assert _kernels._gru_compiled(1, 64) == USE_NUMBA
    assert not _kernels._gru_compiled(128, 256)
