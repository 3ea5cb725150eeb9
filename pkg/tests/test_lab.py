import math
from fractions import Fraction

import numpy as np
import pytest

from brlab import grid as G
from brlab import lab as L
from brlab import multiplier as Mu


# ------------------------------------------------------------------ exponents

def test_exponent_spot_values():
    assert L.exponents(2).p_circ == 4
    assert L.exponents(3).p_circ == Fraction(10, 3)
    assert L.exponents(4).p_circ == 3
    t9 = L.exponents(9)
    assert t9.p_s == Fraction(12, 5) and t9.p_s < t9.stein_tomas == Fraction(22, 9)
    assert t9.p_square_eff == Fraction(12, 5)
    t2 = L.exponents(2)
    assert t2.p_s is None and "degenerate" in t2.p_s_flag and t2.p_square_eff == 4


def test_square_crossover_at_eight():
    t8 = L.exponents(8)
    assert t8.p_s == t8.stein_tomas == Fraction(5, 2)
    for d in range(3, 8):
        t = L.exponents(d)
        assert t.p_square_eff == t.stein_tomas <= t.p_s


@pytest.mark.parametrize("d", range(2, 13))
def test_textual_rederivation(d):
    t, txt = L.exponents(d), L.exponents_textual(d)
    assert t.p_circ == txt["p_circ"]
    assert t.p_s == txt["p_s"]


def test_alpha_and_slopes():
    assert L.alpha_critical(2, 2) == 0
    assert L.alpha_critical(4, 2) == 0
    assert L.alpha_critical(6, 2) == Fraction(1, 6)
    assert L.slope_T(4, 2) == 0 and L.slope_T(6, 2) == Fraction(-1, 6)
    assert L.slope_S(4, 2) - L.slope_T(4, 2) == Fraction(1, 2)
    with pytest.raises(ValueError):
        L.exponents(1)


# ------------------------------------------------------------------ regression and ladders

@pytest.mark.parametrize("e", [-0.5, 0.0, 1 / 3, 1.25])
def test_fit_recovers_power_law(e):
    rng = np.random.default_rng(0)
    ds = 2.0 ** -np.arange(3, 9)
    vals = 3.0 * ds ** e * np.exp(0.005 * rng.standard_normal(ds.size))
    fit = L.fit_slope(ds, vals)
    assert abs(fit.slope - e) <= 0.01
    assert fit.residuals.shape == ds.shape


def test_ladders():
    assert L.parse_ladder("2^-3..2^-6") == [0.125, 0.0625, 0.03125, 0.015625]
    assert L.parse_ladder("2^-2, 2^-3") == [0.25, 0.125]
    with pytest.raises(ValueError, match="at least"):
        L.check_ladder([0.5, 0.25])
    with pytest.raises(ValueError, match="dyadic"):
        L.check_ladder([0.5, 0.25, 0.3, 0.125])


# ------------------------------------------------------------------ witnesses

SPEC = Mu.parse_operator("tdelta(phase=paraboloid,delta=2^-4)")


def test_witness_resolution_guard():
    g = G.make_grid(2, 64, 1 / 32)
    with pytest.raises(ValueError, match="resolution"):
        L.witness("knapp", SPEC, 2.0 ** -5, grid=g)


def test_random_slab_seeded():
    a = L.witness("random-slab", SPEC, seed=3)
    assert np.array_equal(a.samples, L.witness("random-slab", SPEC, seed=3).samples)
    assert not np.array_equal(a.samples, L.witness("random-slab", SPEC, seed=4).samples)


@pytest.mark.parametrize("e", [4, 6])
def test_knapp_mass(e):
    delta = 2.0 ** -e
    f = L.witness("knapp", SPEC, delta)
    assert G.lp_norm(f.space(), 2) ** 2 == pytest.approx(L.knapp_mass(SPEC, delta, 2), rel=0.1)


def test_focus_peaks_at_origin():
    f = L.witness("focus", SPEC)
    out = np.abs(L.apply_operator(SPEC, f).samples)
    g = f.grid
    assert out[(g.n // 2,) * 2] == pytest.approx(out.max())


def test_single_mode_ratio_is_one():
    rep = L.scaling_experiment(SPEC, ["single-mode"], 4, L.parse_ladder("2^-3..2^-6"))
    assert np.allclose(rep.best, 1.0, rtol=1e-9)
    assert abs(rep.slope) < 1e-9


def test_zero_witness_ratio():
    assert L.lp_ratio(SPEC, L.witness("zero", SPEC), [4])[4.0] == 0.0


def test_conj_needs_t_delta():
    s = Mu.parse_operator("sdelta(phase=affine-time,delta=2^-4)")
    with pytest.raises(ValueError, match="t_delta"):
        L.witness("conj", s)


def test_memory_budget_skips_points():
    rep = L.scaling_experiment(SPEC, ["focus"], 4, L.parse_ladder("2^-3..2^-7"),
                               memory_budget=L.grid_bytes(L.ladder_grid(2, 2.0 ** -5)))
    assert rep.skipped == [2.0 ** -6, 2.0 ** -7]
    assert len(rep.deltas) == 3


def test_report_rows():
    rep = L.scaling_experiment(SPEC, ["knapp", "focus"], [4, 6], L.parse_ladder("2^-3..2^-6"))
    assert set(rep) == {4.0, 6.0}
    r4 = rep[4.0]
    assert len(r4.rows()) == 4 and len(r4.rows(every_witness=True)) == 8
    for row, b in zip(r4.rows(), r4.best):
        assert row[5] == b


# ------------------------------------------------------------------ bilinear

LADDER = [2.0 ** -3, 2.0 ** -4]


def test_bilinear_zero_factor():
    rep = L.bilinear_transversal_experiment(SPEC, 4, 0.25, LADDER, zero=True)
    assert rep.lhs == [0.0, 0.0]


def test_bilinear_swap_symmetric():
    a = L.bilinear_transversal_experiment(SPEC, 4, 0.25, LADDER)
    b = L.bilinear_transversal_experiment(SPEC, 4, 0.25, LADDER, swap=True)
    assert np.allclose(a.lhs, b.lhs, rtol=1e-12)


def test_bilinear_preconditions():
    with pytest.raises(ValueError, match="non-transversal"):
        L.bilinear_transversal_experiment(SPEC, 4, 0.25, LADDER, centers=(0.0, 0.05))
    with pytest.raises(ValueError, match="p >= 4"):
        L.bilinear_transversal_experiment(SPEC, 3, 0.25, LADDER)


# ------------------------------------------------------------------ confined square function

SQ3 = Mu.parse_operator("sdelta(phase=affine-time,delta=2^-3)", d=3)
PLANE = [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]


def test_confined_stable_over_seeds():
    for seed in (0, 1):
        rep = L.confined_square_experiment(SQ3, PLANE, [0.25, 0.125], seed=seed)
        assert all(r > 0 for r in rep.ratios)
        assert rep.spread < 4


def test_confined_rejects_spread_normals():
    with pytest.raises(ValueError, match="confinement"):
        L.confined_square_experiment(SQ3, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [0.25])


def test_confined_delta_limit():
    with pytest.raises(ValueError, match="sigma_tilde"):
        L.confined_square_experiment(SQ3, PLANE, [0.5])


# ------------------------------------------------------------------ induction quantities

def test_induction_zero_suite():
    est = L.induction_estimate("A", 2.0 ** -4, suite=("zero",))
    assert est.value == 0.0


def test_induction_large_delta_bounded():
    est = L.induction_estimate("A", 1.0, phases=("paraboloid",))
    assert 0 < est.value < 10


def test_induction_errors():
    with pytest.raises(ValueError):
        L.induction_estimate("C", 0.25)
    with pytest.raises(ValueError, match="empty"):
        L.induction_estimate("A", 0.25, suite=())


def test_change_of_variables_identity():
    from brlab.phase import parse_phase

    for name, a in (("paraboloid", (0.1,)), ("sphere", (0.2,))):
        r = L.change_of_variables_check(parse_phase(name, 2), a, 0.25)
        assert r.rel_err < 0.02
        assert r.det > 0
    assert math.isfinite(r.lhs)
