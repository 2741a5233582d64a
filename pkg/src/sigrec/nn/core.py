"""GRU, dense/softmax, cross-entropy, dropout, Adam and a finite-difference oracle.

Gate convention: h = (1 - z) * h_prev + z * h~, with the reset gate applied
to h_prev before the candidate's recurrent matrix. Weight matrices are stored
input-major (d_in x 3H, H x 3H) in gate order z, r, h~, so a row-vector
input ``x`` projects as ``x @ W``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import _kernels

CE_FLOOR = 1e-12


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot(rng, shape, dtype=np.float32):
    limit = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass
class GruLayerParams:
    W: np.ndarray  # [d_in, 3H]
    U: np.ndarray  # [H, 3H]
    b: np.ndarray  # [3H]

    @classmethod
    def init(cls, rng, d_in: int, hidden: int, dtype=np.float32) -> "GruLayerParams":
        W = np.concatenate([glorot(rng, (d_in, hidden), dtype) for _ in range(3)], axis=1)
        U = np.concatenate([glorot(rng, (hidden, hidden), dtype) for _ in range(3)], axis=1)
        return cls(W, U, np.zeros(3 * hidden, dtype=dtype))

    @classmethod
    def zeros(cls, d_in: int, hidden: int, dtype=np.float64) -> "GruLayerParams":
        return cls(
            np.zeros((d_in, 3 * hidden), dtype),
            np.zeros((hidden, 3 * hidden), dtype),
            np.zeros(3 * hidden, dtype),
        )

    @property
    def hidden(self) -> int:
        return self.U.shape[0]

    @property
    def d_in(self) -> int:
        return self.W.shape[0]

    def _gate(self, arr, k):
        H = self.hidden
        return arr[..., k * H:(k + 1) * H]

    W_z = property(lambda self: self._gate(self.W, 0))
    W_r = property(lambda self: self._gate(self.W, 1))
    W_h = property(lambda self: self._gate(self.W, 2))
    U_z = property(lambda self: self._gate(self.U, 0))
    U_r = property(lambda self: self._gate(self.U, 1))
    U_h = property(lambda self: self._gate(self.U, 2))
    b_z = property(lambda self: self._gate(self.b, 0))
    b_r = property(lambda self: self._gate(self.b, 1))
    b_h = property(lambda self: self._gate(self.b, 2))

    TENSORS = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")

    def tensors(self) -> dict[str, np.ndarray]:
        """Per-gate views, in checkpoint order."""
        return {name: getattr(self, name) for name in self.TENSORS}

    def size(self) -> int:
        return self.W.size + self.U.size + self.b.size


@dataclass
class DenseParams:
    W: np.ndarray  # [H, K]
    b: np.ndarray  # [K]

    @classmethod
    def init(cls, rng, hidden: int, classes: int, dtype=np.float32) -> "DenseParams":
        return cls(glorot(rng, (hidden, classes), dtype), np.zeros(classes, dtype=dtype))

    def size(self) -> int:
        return self.W.size + self.b.size


# ---------------------------------------------------------------------------
# GRU: single step (reference path)

def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def gru_cell_forward(x, h_prev, p: GruLayerParams):
    _check_finite(x, h_prev)
    H = p.hidden
    a = x @ p.W + p.b
    z = sigmoid(a[:H] + h_prev @ p.U_z)
    r = sigmoid(a[H:2 * H] + h_prev @ p.U_r)
    h_tilde = np.tanh(a[2 * H:] + (r * h_prev) @ p.U_h)
    h = (1 - z) * h_prev + z * h_tilde
    return h, (x, h_prev, z, r, h_tilde)


def gru_cell_backward(dh, cache, p: GruLayerParams):
    """Gradients of one cell step. Returns (dx, dh_prev, GruLayerParams of grads)."""
    if cache is None:
        raise ValueError("missing cache")
    x, h_prev, z, r, h_tilde = cache
    dz = dh * (h_tilde - h_prev)
    da_h = dh * z * (1 - h_tilde ** 2)
    d_rh = da_h @ p.U_h.T
    dr = d_rh * h_prev
    da_z = dz * z * (1 - z)
    da_r = dr * r * (1 - r)
    da = np.concatenate([da_z, da_r, da_h])
    grads = GruLayerParams(
        np.outer(x, da),
        np.concatenate([np.outer(h_prev, da_z), np.outer(h_prev, da_r), np.outer(r * h_prev, da_h)], axis=1),
        da,
    )
    dh_prev = dh * (1 - z) + d_rh * r + da_z @ p.U_z.T + da_r @ p.U_r.T
    dx = da @ p.W.T
    return dx, dh_prev, grads


# ---------------------------------------------------------------------------
# GRU: masked batched sequences (kernel path)

@dataclass
class GruCache:
    x: np.ndarray  # [T, B, d_in]
    lengths: np.ndarray
    states: np.ndarray
    zs: np.ndarray
    rs: np.ndarray
    cands: np.ndarray


def _split_u(p: GruLayerParams):
    H = p.hidden
    return np.ascontiguousarray(p.U[:, :2 * H]), np.ascontiguousarray(p.U[:, 2 * H:])


def gru_layer_forward(x, lengths, p: GruLayerParams):
    """x: [T, B, d_in] time-major. Returns (outputs [T, B, H], cache)."""
    T, B, d = x.shape
    xw = (x.reshape(T * B, d) @ p.W + p.b).reshape(T, B, -1)
    u_zr, u_h = _split_u(p)
    lengths = np.asarray(lengths, dtype=np.int64)
    states, zs, rs, cands = _kernels.gru_forward(np.ascontiguousarray(xw), u_zr, u_h, lengths)
    return states[1:], GruCache(x, lengths, states, zs, rs, cands)


def gru_layer_backward(d_out, cache: GruCache, p: GruLayerParams):
    """Backprop through time. Returns (dx [T, B, d_in], grads)."""
    if cache is None:
        raise ValueError("missing cache")
    u_zr, u_h = _split_u(p)
    d_xw, d_u_zr, d_u_h = _kernels.gru_backward(
        np.ascontiguousarray(d_out), cache.states, cache.zs, cache.rs, cache.cands, u_zr, u_h, cache.lengths
    )
    T, B, d = cache.x.shape
    flat = d_xw.reshape(T * B, -1)
    grads = GruLayerParams(
        cache.x.reshape(T * B, d).T @ flat,
        np.concatenate([d_u_zr, d_u_h], axis=1),
        flat.sum(axis=0),
    )
    dx = (flat @ p.W.T).reshape(T, B, d)
    return dx, grads


def gru_sequence_forward(xs, true_length: int, p: GruLayerParams):
    """Run one sequence; returns (final hidden state, cache)."""
    xs = np.asarray(xs)
    if true_length < 1:
        raise ValueError("true_length must be >= 1")
    if true_length > len(xs):
        raise ValueError("true_length exceeds sequence length")
    _check_finite(xs)
    out, cache = gru_layer_forward(xs[:, None, :].astype(p.W.dtype), np.array([true_length]), p)
    return out[-1, 0], cache


# ---------------------------------------------------------------------------
# heads and losses

def softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def dense_softmax_forward(h, p: DenseParams):
    return softmax(h @ p.W + p.b)


def cross_entropy(prob, true_class) -> float | np.ndarray:
    """-ln p[true], floored at 1e-12. Accepts one vector or a [B, K] batch."""
    prob = np.asarray(prob)
    if prob.ndim == 1:
        return float(-np.log(max(float(prob[true_class]), CE_FLOOR)))
    picked = prob[np.arange(len(prob)), np.asarray(true_class)]
    return -np.log(np.maximum(picked, CE_FLOOR))


def dropout_mask(shape, rate: float, rng, dtype=np.float32):
    """Inverted dropout: 0 with probability ``rate``, otherwise 1 / (1 - rate)."""
    if not 0 <= rate < 1:
        raise ValueError("dropout rate must be in [0, 1)")
    if rate == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


# ---------------------------------------------------------------------------
# optimisation

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(params: dict, grads: dict, state: AdamState) -> None:
    """Bias-corrected Adam step, in place on ``params``. Names without a grad are skipped."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if max_norm and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def finite_difference_gradient(loss_fn, params, eps: float = 1e-5):
    """Central-difference gradient of ``loss_fn(params)``.

    ``params`` is an array or a dict of arrays; entries are perturbed in
    place and restored afterwards.
    """
    if isinstance(params, dict):
        return {k: _fd_one(lambda: loss_fn(params), a, eps) for k, a in params.items()}
    params = np.asarray(params, dtype=np.float64)
    if params.ndim == 0:
        params = params.reshape(1)
        return _fd_one(lambda: loss_fn(params[0]), params, eps)[0]
    return _fd_one(lambda: loss_fn(params), params, eps)


def _fd_one(f, arr, eps):
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return grad


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
