"""Hot inner loops: GRU recurrence (forward/backward) and the CBOW update sweep.

Every kernel is written once in the numpy subset numba understands and is
compiled only when numba is enabled (see ``_accel``). Arrays are time-major
and C-contiguous; float literals are avoided so float32 inputs stay float32.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, jit

# Below this many state cells (batch * hidden) the compiled recurrence wins;
# above it numpy's SIMD tanh beats numba's scalar libm calls
# (see benchmarks/bench_kernels.py).
GRU_JIT_MAX_CELLS = 256


@jit
def gru_forward_kernel(xw, u_zr, u_h, lengths):
    """Run the masked GRU recurrence.

    xw: [T, B, 3H] input projections plus biases, gate order (z, r, h~).
    Steps t >= lengths[b] copy the previous state forward.
    Returns states [T+1, B, H] (states[0] = 0) and gates z, r, h~ [T, B, H].
    """
    T, B, H3 = xw.shape
    H = H3 // 3
    states = np.zeros((T + 1, B, H), dtype=xw.dtype)
    zs = np.zeros((T, B, H), dtype=xw.dtype)
    rs = np.zeros((T, B, H), dtype=xw.dtype)
    cands = np.zeros((T, B, H), dtype=xw.dtype)
    h = np.zeros((B, H), dtype=xw.dtype)
    for t in range(T):
        m = (lengths > t).astype(xw.dtype).reshape((B, 1))
        x_t = xw[t]
        g = x_t[:, : 2 * H] + np.dot(h, u_zr)
        z = (1 + np.tanh(g[:, :H] / 2)) / 2
        r = (1 + np.tanh(g[:, H:] / 2)) / 2
        rh = np.ascontiguousarray(r * h)
        c = np.tanh(x_t[:, 2 * H:] + np.dot(rh, u_h))
        h = h + m * (z * (c - h))
        states[t + 1] = h
        zs[t] = z
        rs[t] = r
        cands[t] = c
    return states, zs, rs, cands


@jit
def gru_backward_kernel(d_out, states, zs, rs, cands, u_zr, u_h, lengths):
    """Backpropagation through time for ``gru_forward_kernel``.

    d_out: [T, B, H] gradient of the loss w.r.t. states[1:].
    Returns (d_xw [T, B, 3H], d_u_zr [H, 2H], d_u_h [H, H]).
    """
    T, B, H = zs.shape
    d_xw = np.zeros((T, B, 3 * H), dtype=zs.dtype)
    d_u_zr = np.zeros_like(u_zr)
    d_u_h = np.zeros_like(u_h)
    u_zr_t = np.ascontiguousarray(u_zr.T)
    u_h_t = np.ascontiguousarray(u_h.T)
    dh = np.zeros((B, H), dtype=zs.dtype)
    for t in range(T - 1, -1, -1):
        dh += d_out[t]
        m = (lengths > t).astype(zs.dtype).reshape((B, 1))
        h_prev = states[t]
        z = zs[t]
        r = rs[t]
        c = cands[t]
        dhn = m * dh
        # masked steps pass the gradient straight through
        dh_prev = dh - dhn + dhn * (1 - z)
        dz = dhn * (c - h_prev)
        da_h = dhn * z * (1 - c * c)
        rh = r * h_prev
        d_u_h += np.dot(np.ascontiguousarray(rh.T), da_h)
        d_rh = np.dot(da_h, u_h_t)
        dr = d_rh * h_prev
        dh_prev += d_rh * r
        da_zr = np.empty((B, 2 * H), dtype=zs.dtype)
        da_zr[:, :H] = dz * z * (1 - z)
        da_zr[:, H:] = dr * r * (1 - r)
        d_u_zr += np.dot(np.ascontiguousarray(h_prev.T), da_zr)
        dh_prev += np.dot(da_zr, u_zr_t)
        d_xw[t, :, : 2 * H] = da_zr
        d_xw[t, :, 2 * H:] = da_h
        dh = dh_prev
    return d_xw, d_u_zr, d_u_h


def _gru_compiled(batch: int, hidden: int) -> bool:
    return USE_NUMBA and batch * hidden < GRU_JIT_MAX_CELLS


def gru_forward(xw, u_zr, u_h, lengths):
    fn = gru_forward_kernel if _gru_compiled(xw.shape[1], u_h.shape[0]) else gru_forward_kernel.py_func
    return fn(xw, u_zr, u_h, lengths)


def gru_backward(d_out, states, zs, rs, cands, u_zr, u_h, lengths):
    fn = gru_backward_kernel if _gru_compiled(zs.shape[1], zs.shape[2]) else gru_backward_kernel.py_func
    return fn(d_out, states, zs, rs, cands, u_zr, u_h, lengths)


@jit
def cbow_sweep(w_in, w_out, tokens, sent_lo, sent_hi, positions, cands, window,
               lr0, step0, total_steps, min_lr_frac):
    """One pass of CBOW negative-sampling updates over ``positions``.

    tokens/sent_lo/sent_hi: flat corpus ids with each token's sentence bounds
    [lo, hi). cands[p, k, :] are pre-drawn candidates for negative slot k;
    the first one differing from the center is used, otherwise the slot is
    skipped. Each update is the exact gradient step of the position's loss
    with all scores taken before any row moves. The learning rate decays
    linearly with the global step. Returns (loss sum, updates applied).
    """
    d = w_in.shape[1]
    n_neg = cands.shape[1]
    n_try = cands.shape[2]
    h = np.zeros(d, dtype=w_in.dtype)
    neu = np.zeros(d, dtype=w_in.dtype)
    targets = np.zeros(n_neg + 1, dtype=np.int64)
    grads = np.zeros(n_neg + 1, dtype=np.float64)
    loss = 0.0
    applied = 0
    for p in range(positions.shape[0]):
        pos = positions[p]
        lo = max(sent_lo[pos], pos - window)
        hi = min(sent_hi[pos], pos + window + 1)
        n_ctx = hi - lo - 1
        if n_ctx <= 0:
            continue
        center = tokens[pos]
        frac = 1 - (step0 + p) / total_steps
        lr = lr0 * max(frac, min_lr_frac)
        h[:] = 0
        for j in range(lo, hi):
            if j != pos:
                h += w_in[tokens[j]]
        h *= 1 / n_ctx
        targets[0] = center
        n_t = 1
        for k in range(n_neg):
            for s in range(n_try):
                cand = cands[p, k, s]
                if cand != center:
                    targets[n_t] = cand
                    n_t += 1
                    break
        neu[:] = 0
        for k in range(n_t):
            f = float(np.dot(w_out[targets[k]], h))
            if f >= 0:
                e = math.exp(-f)
                sig = 1 / (1 + e)
                softplus_neg = math.log1p(e)  # -log sigmoid(f)
                softplus_pos = f + softplus_neg  # -log sigmoid(-f)
            else:
                e = math.exp(f)
                sig = e / (1 + e)
                softplus_pos = math.log1p(e)
                softplus_neg = softplus_pos - f
            if k == 0:
                loss += softplus_neg
                grads[k] = sig - 1
            else:
                loss += softplus_pos
                grads[k] = sig
            neu += grads[k] * w_out[targets[k]]
        for k in range(n_t):
            w_out[targets[k]] -= (lr * grads[k]) * h
        neu *= lr / n_ctx
        for j in range(lo, hi):
            if j != pos:
                w_in[tokens[j]] -= neu
        applied += 1
    return loss, applied
