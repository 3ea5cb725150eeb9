import math

import numpy as np
import pytest
from scipy.integrate import quad

from brlab import grid as G
from brlab import multiplier as Mu
from brlab.phase import phi, phi_l2_squared


def mode(g, xi, c=1.0):
    F = np.zeros(g.shape, dtype=complex)
    F[g.freq_index(xi)] = c
    return G.from_frequency(g, F)


def test_parse_round_trip():
    for text in ["tdelta(phase=sphere,delta=2^-6)", "sdelta(phase=affine-time,delta=2^-5,t=-1..1)",
                 "spherical(delta=2^-4)", "br(alpha=0.5,radius=1)", "stein(alpha=1,t=0.5..2,nt=101)"]:
        s = Mu.parse_operator(text)
        again = Mu.parse_operator(s.to_string())
        assert again == s


def test_parse_errors():
    for bad in ["tdelta(delta=0.3)", "nope()", "tdelta(phase=affine-time)", "tdelta(foo=1)", "tdelta(phase=paraboloid"]:
        with pytest.raises(ValueError):
            Mu.parse_operator(bad)


def test_identity_and_zero_symbols():
    g = G.make_grid(2, 16, 0.25)
    f = G.random_function(g, np.random.default_rng(0), representation=G.FREQUENCY)
    assert np.allclose(Mu.apply_multiplier(f, lambda c: 1.0).samples, f.space().samples)
    assert np.all(Mu.apply_multiplier(f, lambda c: 0.0).samples == 0)


def test_half_space_keeps_one_mode():
    g = G.make_grid(2, 16, 0.25)
    f = mode(g, (0.25, 0.0)) + mode(g, (-0.25, 0.0))
    out = Mu.apply_multiplier(f, lambda c: (c[0] > 0).astype(float))
    assert np.allclose(out.samples, mode(g, (0.25, 0.0)).space().samples)


def test_t_delta_on_and_off_slab():
    g = G.make_grid(2, 64, 1 / 32)
    spec = Mu.parse_operator("tdelta(phase=paraboloid,delta=2^-4)")
    on = mode(g, (0.25, 0.25 ** 2 / 2 + 0.0))
    assert np.allclose(Mu.t_delta(on, spec).samples, on.space().samples, atol=1e-15)
    off = mode(g, (0.0, 0.25))  # |tau - psi| = 0.25 > 2 delta
    assert np.all(Mu.t_delta(off, spec).samples == 0)


def test_t_delta_is_l2_contraction():
    g = G.make_grid(2, 64, 1 / 32)
    spec = Mu.parse_operator("tdelta(phase=sphere,delta=2^-4)")
    rng = np.random.default_rng(1)
    for _ in range(5):
        f = G.random_function(g, rng, representation=G.FREQUENCY)
        assert G.lp_norm(Mu.t_delta(f, spec), 2) <= G.lp_norm(f.space(), 2)


def test_t_delta_support_precondition():
    g = G.make_grid(2, 64, 1 / 32)
    spec = Mu.parse_operator("tdelta(delta=2^-4)")
    with pytest.raises(ValueError, match="support"):
        Mu.t_delta(mode(g, (0.75, 0.0)), spec)


def test_s_delta_single_mode_closed_form():
    g = G.make_grid(2, 64, 1 / 32)
    delta = 2.0 ** -4
    spec = Mu.parse_operator("sdelta(phase=affine-time,delta=2^-4)")
    f = mode(g, (0.25, 0.25 ** 2 / 2), c=2.0)
    out = Mu.s_delta(f, spec)
    expect = math.sqrt(delta * phi_l2_squared())
    assert np.allclose(out.samples / np.abs(f.space().samples), expect, rtol=1e-3)


def test_s_delta_disjoint_activation():
    g = G.make_grid(2, 64, 1 / 32)
    spec = Mu.parse_operator("sdelta(phase=affine-time,delta=2^-4)")
    a = mode(g, (0.0, -0.4))
    b = mode(g, (0.0, 0.4), c=1.5)
    both = Mu.s_delta(a + b, spec).samples
    sep = np.sqrt(Mu.s_delta(a, spec).samples ** 2 + Mu.s_delta(b, spec).samples ** 2)
    assert np.allclose(both, sep, rtol=1e-10)


def test_s_delta_vanishes_off_slab():
    g = G.make_grid(2, 64, 1 / 32)
    spec = Mu.parse_operator("sdelta(phase=affine-time,delta=2^-4,t=-0.25..0.25)")
    out = Mu.s_delta(mode(g, (0.0, 0.48)), spec)
    assert np.all(out.samples == 0)


def test_bochner_riesz_outside_ball():
    g = G.make_grid(2, 16, 0.25)
    spec = Mu.parse_operator("br(alpha=1,radius=0.5)")
    assert np.all(Mu.bochner_riesz(mode(g, (0.75, 0.0)), spec).samples == 0)


def test_bochner_riesz_monotone_in_alpha():
    g = G.make_grid(2, 16, 0.25)
    f = mode(g, (0.25, 0.25))
    vals = [np.abs(Mu.bochner_riesz(f, Mu.parse_operator(f"br(alpha={a},radius=1)")).samples).max()
            for a in (0.5, 1, 2, 8, 32)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_stein_square_closed_form():
    g = G.make_grid(2, 16, 0.25)
    r, T = 0.5, 2.0
    f = mode(g, (r, 0.0), c=3.0)
    out = Mu.stein_square(f, Mu.parse_operator("stein(alpha=1,t=0.5..2,nt=4001)"))
    expect = math.sqrt(1 - (r / T) ** 4)
    assert np.allclose(out.samples / np.abs(f.space().samples), expect, rtol=1e-4)


def test_spherical_single_mode():
    g = G.make_grid(2, 32, 1 / 8)
    f = mode(g, (1.0, 0.0))
    ratios = []
    for e in (4, 5):
        delta = 2.0 ** -e
        spec = Mu.parse_operator(f"spherical(delta=2^-{e})")
        out = Mu.spherical_square(f, spec)
        oracle = math.sqrt(quad(lambda t: float(phi((1 - 1 / t) / delta)) ** 2, 0.5, 2, points=[1], limit=200)[0])
        val = float(abs(out.samples.flat[0]) / abs(f.space().samples.flat[0]))
        assert val == pytest.approx(oracle, rel=1e-3)
        ratios.append(val)
    assert ratios[1] / ratios[0] == pytest.approx(math.sqrt(0.5), rel=0.05)


def test_spherical_inside_vanishes():
    g = G.make_grid(2, 32, 1 / 8)
    out = Mu.spherical_square(mode(g, (0.25, 0.0)), Mu.parse_operator("spherical(delta=2^-4)"))
    assert np.all(out.samples == 0)


def test_kernel_decay_and_slab_volume():
    sigma = 0.25
    Cs = []
    for e in (6, 7):
        spec = Mu.parse_operator(f"tdelta(phase=paraboloid,delta=2^-{e})")
        K = Mu.kernel(spec, sigma)
        Cs.append(Mu.kernel_decay_fit(K, spec.delta, sigma).C)
        K0 = abs(K.samples[(K.grid.n // 2,) * 2])
        assert K0 == pytest.approx(Mu.slab_prediction(spec, sigma), rel=0.1)
    assert 0.25 <= Cs[0] / Cs[1] <= 4


def test_kernel_zero_cutoff():
    spec = Mu.parse_operator("tdelta(delta=2^-4)")
    K = Mu.kernel(spec, 0.25, cutoff=lambda c: 0 * c[0])
    assert np.all(K.samples == 0)
    assert Mu.kernel_decay_fit(K, spec.delta, 0.25).C == 0
