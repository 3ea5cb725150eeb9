"""Hot loops with a numba implementation and a pure-numpy fallback.

Set ``BRLAB_DISABLE_NUMBA=1`` before import to force the numpy path (or when
numba is not installed).  Both paths return the same values up to rounding.
"""
import os

import numpy as np

_CHUNK = 1 << 22  # elements per dense block in the numpy path

try:
    if os.environ.get("BRLAB_DISABLE_NUMBA", "0") not in ("", "0"):
        raise ImportError("numba disabled by environment")
    from numba import config as _nb_config
    from numba import njit, prange

    if "NUMBA_THREADING_LAYER" not in os.environ:
        _nb_config.THREADING_LAYER = "workqueue"  # avoids probing an old system TBB
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised through the env flag
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------- numpy path

def _trig_eval_np(points, freqs, coef):
    m = points.shape[0]
    out = np.zeros(m, dtype=np.complex128)
    if freqs.shape[0] == 0:
        return out
    step = max(1, _CHUNK // freqs.shape[0])
    for s in range(0, m, step):
        ph = points[s:s + step] @ freqs.T
        out[s:s + step] = np.exp(1j * ph) @ coef
    return out


def _cube_table_np(points, freqs, coef, ids, ncubes):
    m = points.shape[0]
    out = np.zeros((m, ncubes), dtype=np.complex128)
    if freqs.shape[0] == 0:
        return out
    onehot = np.zeros((freqs.shape[0], ncubes))
    onehot[np.arange(freqs.shape[0]), ids] = 1.0
    step = max(1, _CHUNK // freqs.shape[0])
    for s in range(0, m, step):
        e = np.exp(1j * (points[s:s + step] @ freqs.T)) * coef
        out[s:s + step] = e @ onehot
    return out


def _tube_counts_np(points, centers, dirs, halfwidth):
    m = points.shape[0]
    counts = np.zeros(m, dtype=np.int64)
    if centers.shape[0] == 0:
        return counts
    step = max(1, _CHUNK // centers.shape[0])
    hw2 = halfwidth ** 2
    for s in range(0, m, step):
        y = points[s:s + step, None, :] - centers[None, :, :]
        along = np.einsum("mtd,td->mt", y, dirs)
        dist2 = np.einsum("mtd,mtd->mt", y, y) - along ** 2
        counts[s:s + step] = np.count_nonzero(dist2 <= hw2[None, :], axis=1)
    return counts


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _trig_eval_nb(points, freqs, coef):
        m, d = points.shape
        K = freqs.shape[0]
        out = np.zeros(m, dtype=np.complex128)
        for i in prange(m):
            acc_r = 0.0
            acc_i = 0.0
            for k in range(K):
                ph = 0.0
                for j in range(d):
                    ph += points[i, j] * freqs[k, j]
                c = np.cos(ph)
                s = np.sin(ph)
                acc_r += coef[k].real * c - coef[k].imag * s
                acc_i += coef[k].real * s + coef[k].imag * c
            out[i] = acc_r + 1j * acc_i
        return out

    @njit(cache=True, parallel=True)
    def _cube_table_nb(points, freqs, coef, ids, ncubes):
        m, d = points.shape
        K = freqs.shape[0]
        out = np.zeros((m, ncubes), dtype=np.complex128)
        for i in prange(m):
            for k in range(K):
                ph = 0.0
                for j in range(d):
                    ph += points[i, j] * freqs[k, j]
                c = np.cos(ph)
                s = np.sin(ph)
                q = ids[k]
                out[i, q] += (coef[k].real * c - coef[k].imag * s) + 1j * (
                    coef[k].real * s + coef[k].imag * c)
        return out

    @njit(cache=True, parallel=True)
    def _tube_counts_nb(points, centers, dirs, halfwidth):
        m, d = points.shape
        T = centers.shape[0]
        counts = np.zeros(m, dtype=np.int64)
        for i in prange(m):
            cnt = 0
            for t in range(T):
                along = 0.0
                nrm2 = 0.0
                for j in range(d):
                    y = points[i, j] - centers[t, j]
                    along += y * dirs[t, j]
                    nrm2 += y * y
                if nrm2 - along * along <= halfwidth[t] * halfwidth[t]:
                    cnt += 1
            counts[i] = cnt
        return counts


# ------------------------------------------------------------------ dispatch

def _prep(points, freqs, coef):
    points = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
    freqs = np.ascontiguousarray(np.atleast_2d(freqs), dtype=np.float64)
    coef = np.ascontiguousarray(coef, dtype=np.complex128).ravel()
    return points, freqs, coef


def trig_eval(points, freqs, coef, backend=None):
    """sum_k coef[k] * exp(i <points[m], freqs[k]>) for every row of ``points``."""
    points, freqs, coef = _prep(points, freqs, coef)
    if (backend or BACKEND) == "numba":
        return _trig_eval_nb(points, freqs, coef)
    return _trig_eval_np(points, freqs, coef)


def cube_table(points, freqs, coef, ids, ncubes, backend=None):
    """Per-cube partial trigonometric sums: out[m, q] = sum_{ids[k]==q} ..."""
    points, freqs, coef = _prep(points, freqs, coef)
    ids = np.ascontiguousarray(ids, dtype=np.int64)
    if (backend or BACKEND) == "numba":
        return _cube_table_nb(points, freqs, coef, ids, int(ncubes))
    return _cube_table_np(points, freqs, coef, ids, int(ncubes))


def tube_counts(points, centers, dirs, halfwidth, backend=None):
    """Number of infinite tubes (axis through center along unit dir) holding each point."""
    points = np.ascontiguousarray(points, dtype=np.float64)
    centers = np.ascontiguousarray(centers, dtype=np.float64).reshape(-1, points.shape[1])
    dirs = np.ascontiguousarray(dirs, dtype=np.float64).reshape(-1, points.shape[1])
    halfwidth = np.ascontiguousarray(halfwidth, dtype=np.float64).ravel()
    if (backend or BACKEND) == "numba":
        return _tube_counts_nb(points, centers, dirs, halfwidth)
    return _tube_counts_np(points, centers, dirs, halfwidth)
