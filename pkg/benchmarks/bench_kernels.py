"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

The first numba call compiles (or loads from cache) and is excluded.  Each
row also reports the max deviation between the two backends.
"""
import argparse
import timeit

import numpy as np

from brlab import _kernels as KN


def cases(rng):
    pts = rng.uniform(-40, 40, (1729, 2))  # one scattered-sum stencil
    freqs = rng.uniform(-0.25, 0.25, (256, 2))
    coef = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    ids = rng.integers(0, 16, 256)
    yield "trig_eval 1729x256", lambda b: KN.trig_eval(pts, freqs, coef, backend=b)
    yield "cube_table 1729x256x16", lambda b: KN.cube_table(pts, freqs, coef, ids, 16, backend=b)

    n = 128
    ax = -1 + (np.arange(n) + 0.5) * (2.0 / n)
    ball = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), -1).reshape(-1, 3)
    ball = ball[np.einsum("ij,ij->i", ball, ball) <= 1]
    dirs = rng.standard_normal((12, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cen = rng.uniform(-0.05, 0.05, (12, 3))
    hw = np.full(12, 1 / 32)
    yield f"tube_counts {ball.shape[0]}x12", lambda b: KN.tube_counts(ball, cen, dirs, hw, backend=b)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not KN.HAVE_NUMBA:
        raise SystemExit("numba backend unavailable (not installed or BRLAB_DISABLE_NUMBA set)")
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, fn in cases(rng):
        ref, fast = fn("numpy"), fn("numba")  # warm-up / compile
        diff = float(np.max(np.abs(np.asarray(ref) - np.asarray(fast))))
        t_np = min(timeit.repeat(lambda: fn("numpy"), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn("numba"), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28s} {t_np:10.2f} {t_nb:10.2f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
