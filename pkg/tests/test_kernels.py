import os
import subprocess
import sys

import numpy as np
import pytest

from brlab import _kernels as KN

needs_numba = pytest.mark.skipif(not KN.HAVE_NUMBA, reason="numba not installed")


def _data(seed=0, m=300, k=40, d=2):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-20, 20, (m, d))
    freqs = rng.uniform(-1, 1, (k, d))
    coef = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    return pts, freqs, coef


def test_numpy_trig_matches_direct_sum():
    pts, freqs, coef = _data()
    direct = np.exp(1j * pts @ freqs.T) @ coef
    assert np.allclose(KN.trig_eval(pts, freqs, coef, backend="numpy"), direct, atol=1e-12)


def test_empty_inputs():
    pts = np.zeros((5, 2))
    assert np.all(KN.trig_eval(pts, np.zeros((0, 2)), np.zeros(0), backend="numpy") == 0)
    assert np.all(KN.tube_counts(pts, np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0), backend="numpy") == 0)


@needs_numba
@pytest.mark.parametrize("d", [2, 3])
def test_backends_agree(d):
    pts, freqs, coef = _data(d, d=d)
    a = KN.trig_eval(pts, freqs, coef, backend="numba")
    b = KN.trig_eval(pts, freqs, coef, backend="numpy")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    ids = np.arange(freqs.shape[0]) % 3
    a = KN.cube_table(pts, freqs, coef, ids, 3, backend="numba")
    b = KN.cube_table(pts, freqs, coef, ids, 3, backend="numpy")
    assert np.allclose(a, b, rtol=1e-12, atol=1e-12)
    assert np.allclose(a.sum(axis=1), KN.trig_eval(pts, freqs, coef, backend="numpy"), atol=1e-11)


@needs_numba
def test_tube_counts_agree():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, (2000, 3))
    dirs = rng.standard_normal((25, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    cen = rng.uniform(-0.2, 0.2, (25, 3))
    hw = np.full(25, 0.1)
    a = KN.tube_counts(pts, cen, dirs, hw, backend="numba")
    b = KN.tube_counts(pts, cen, dirs, hw, backend="numpy")
    assert np.array_equal(a, b) and a.max() > 0


def test_env_flag_selects_numpy():
    env = dict(os.environ, BRLAB_DISABLE_NUMBA="1")
    code = "from brlab import _kernels as k; print(k.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_numpy_backend_end_to_end():
    """The Kakeya orthogonal oracle and a scattered sum under the forced numpy path."""
    env = dict(os.environ, BRLAB_DISABLE_NUMBA="1")
    code = (
        "import numpy as np\n"
        "from brlab import kakeya as K, decompose as D, grid as G\n"
        "r = K.kakeya_ratio(K.orthogonal_family(2, 64), 64).ratio\n"
        "g = G.make_grid(2, 64, 1/32)\n"
        "f = G.random_function(g, np.random.default_rng(0), box=0.25, representation=G.FREQUENCY)\n"
        "print(repr(r), repr(D.scattered_sum(D.trig_poly(f), 0.25, np.zeros(2)).value))\n"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    r, v = (float(x) for x in out.stdout.split())
    from brlab import decompose as D
    from brlab import grid as G
    from brlab import kakeya as K

    assert r == pytest.approx(K.kakeya_ratio(K.orthogonal_family(2, 64), 64).ratio, rel=1e-12)
    g = G.make_grid(2, 64, 1 / 32)
    f = G.random_function(g, np.random.default_rng(0), box=0.25, representation=G.FREQUENCY)
    assert v == pytest.approx(D.scattered_sum(D.trig_poly(f), 0.25, np.zeros(2)).value, rel=1e-10)
