"""Compare the compiled hot kernels with their pure-Python/numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 3] [--steps 160] [--shapes 1x64,32x64,...]

The fallback is each kernel's ``py_func`` (the exact code path taken when
SIGREC_DISABLE_NUMBA=1). Outputs are checked for agreement before timing.
The last column shows which path the runtime dispatcher picks for that shape.
"""

import argparse
import timeit

import numpy as np

from sigrec import _kernels, backend


def _gru_inputs(rng, steps, batch, hidden):
    xw = rng.normal(size=(steps, batch, 3 * hidden)).astype(np.float32)
    u_zr = rng.normal(scale=0.1, size=(hidden, 2 * hidden)).astype(np.float32)
    u_h = rng.normal(scale=0.1, size=(hidden, hidden)).astype(np.float32)
    lengths = rng.integers(steps // 2, steps + 1, size=batch)
    return xw, u_zr, u_h, lengths


def _cbow_inputs(rng, vocab, dim, n_tokens, negatives=5, window=5):
    tokens = rng.integers(2, vocab, size=n_tokens).astype(np.int64)
    lo = (np.arange(n_tokens) // 200 * 200).astype(np.int64)
    hi = np.minimum(lo + 200, n_tokens).astype(np.int64)
    positions = np.arange(n_tokens, dtype=np.int64)
    cands = rng.integers(2, vocab, size=(n_tokens, negatives, 9)).astype(np.int64)
    w_in = ((rng.random((vocab, dim)) - 0.5) / dim).astype(np.float32)
    w_out = np.zeros((vocab, dim), dtype=np.float32)
    return w_in, w_out, tokens, lo, hi, positions, cands, window


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def _shapes(text):
    out = []
    for item in text.split(","):
        b, h = item.lower().split("x")
        out.append((int(b), int(h)))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--steps", type=int, default=160)
    ap.add_argument("--shapes", type=_shapes, default=_shapes("1x64,8x64,32x64,1x256,8x256,128x256"),
                    help="comma-separated BATCHxHIDDEN list for the GRU kernels")
    ap.add_argument("--cbow-tokens", type=int, default=20_000)
    args = ap.parse_args(argv)
    if backend() != "numba":
        raise SystemExit("numba is disabled (SIGREC_DISABLE_NUMBA); nothing to compare against")

    rng = np.random.default_rng(0)
    cases = []
    for batch, hidden in args.shapes:
        xw, u_zr, u_h, lengths = _gru_inputs(rng, args.steps, batch, hidden)
        fwd = _kernels.gru_forward_kernel(xw, u_zr, u_h, lengths)
        ref = _kernels.gru_forward_kernel.py_func(xw, u_zr, u_h, lengths)
        assert all(np.allclose(a, b, atol=1e-5) for a, b in zip(fwd, ref))
        d_out = rng.normal(size=fwd[1].shape).astype(np.float32)
        pick = "numba" if _kernels._gru_compiled(batch, hidden) else "numpy"
        tag = f"T={args.steps} B={batch} H={hidden}"
        cases.append((f"gru_forward {tag}", pick,
                      lambda a=(xw, u_zr, u_h, lengths): _kernels.gru_forward_kernel(*a),
                      lambda a=(xw, u_zr, u_h, lengths): _kernels.gru_forward_kernel.py_func(*a)))
        cases.append((f"gru_backward {tag}", pick,
                      lambda a=(d_out, *fwd, u_zr, u_h, lengths): _kernels.gru_backward_kernel(*a),
                      lambda a=(d_out, *ref, u_zr, u_h, lengths): _kernels.gru_backward_kernel.py_func(*a)))

    cb = _cbow_inputs(rng, 500, 128, args.cbow_tokens)

    def cbow(fn):
        w_in, w_out = cb[0].copy(), cb[1].copy()
        return fn(w_in, w_out, *cb[2:], 0.025, 0, len(cb[2]), 1e-4)

    assert np.isclose(cbow(_kernels.cbow_sweep)[0], cbow(_kernels.cbow_sweep.py_func)[0], rtol=1e-4)
    cases.append((f"cbow_sweep {args.cbow_tokens} positions d=128", "numba",
                  lambda: cbow(_kernels.cbow_sweep), lambda: cbow(_kernels.cbow_sweep.py_func)))

    print(f"{'kernel':<36} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  dispatch")
    for name, pick, fast, slow in cases:
        tf = _best(fast, args.repeat) * 1e3
        ts = _best(slow, args.repeat) * 1e3
        print(f"{name:<36} {tf:>10.2f} {ts:>10.2f} {ts / tf:>7.1f}x  {pick}")


if __name__ == "__main__":
    main()
