import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brlab import phase as P


def test_bumps():
    assert P.phi(0.0) == pytest.approx(1.0)
    assert P.phi(2.0) == 0.0 and P.phi(-2.5) == 0.0
    assert P.bump(0.0) == pytest.approx(1.0)
    assert P.bump(1.0) == 0.0
    s = np.linspace(-3, 3, 101)
    assert np.all((P.phi(s) >= 0) & (P.phi(s) <= 1))
    pl = P.plateau(np.array([0.0, 0.9, 1.0, math.pi, 4.0]))
    assert pl[0] == 1 and pl[1] == 1 and pl[2] == 1 and pl[3] == 0 and pl[4] == 0


def test_paraboloid_derivatives():
    psi = P.parse_phase("paraboloid", 3)
    z = np.array([0.5, 0.0])
    assert psi.eval(z) == pytest.approx(0.125)
    assert np.allclose(psi.grad(z), [0.5, 0.0])
    assert np.allclose(psi.hess(z), np.eye(2))


def test_sphere_at_origin():
    psi = P.parse_phase("sphere", 3)
    z = np.zeros(2)
    assert psi.eval(z) == pytest.approx(0.0)
    assert np.allclose(psi.grad(z), 0.0)
    assert np.allclose(psi.hess(z), np.eye(2))


def test_br_time_derivative():
    psi = P.parse_phase("br:eps=0.1", 2)
    assert psi.eval(np.zeros(1), 0.0) == pytest.approx(0.0, abs=1e-14)
    assert psi.dt(np.zeros(1), 0.0) == pytest.approx(1.0)


def test_br_close_to_model_paraboloid():
    psi = P.parse_phase("br:eps=0.1", 2)
    assert psi.time
    assert float(psi.eval(np.array([0.2]), 0.0)) == pytest.approx(0.02, rel=0.02)


def test_sphere_domain_error():
    psi = P.parse_phase("sphere", 2)
    with pytest.raises(P.DomainError):
        psi.eval(np.array([1.2]))


@pytest.mark.parametrize("bad", ["wobble", "paraboloid:eps=1", "br:eps=2", "perturbed:h=1"])
def test_unknown_ids(bad):
    with pytest.raises(ValueError):
        P.parse_phase(bad, 2)


def test_cn_distance_references():
    assert P.cn_distance(P.parse_phase("paraboloid", 2)) == 0.0
    assert P.cn_distance(P.parse_phase("affine-time", 2)) == 0.0
    assert P.cn_distance(P.parse_phase("sphere", 3), order=2, box=0.25) > 0


def test_rescale_paraboloid_fixed_point():
    psi = P.parse_phase("paraboloid", 3)
    for a, eps in [((0.1, -0.2), 0.25), ((0.5, 0.5), 0.5), ((0.0, 0.3), 1 / 8)]:
        assert P.same_surface(P.rescale(psi, a, eps), psi)


def test_rescale_affine_time_fixed_point():
    psi = P.parse_phase("affine-time", 2)
    assert P.same_surface(P.rescale_time(psi, (0.0, 0.0), 0.25), psi)


def test_rescale_sphere_closed_form():
    psi = P.parse_phase("sphere", 2)
    eps = 0.25
    r = P.rescale(psi, (0.0,), eps)
    for z in (0.0, 0.3, -0.7):
        expect = (1 - math.sqrt(1 - eps ** 2 * z ** 2)) / eps ** 2
        assert r.eval(np.array([z])) == pytest.approx(expect, rel=1e-12, abs=1e-14)
    assert P.cn_distance(r, order=2, box=0.5) < 0.05


def test_rescale_sphere_linear_in_eps():
    psi = P.parse_phase("sphere", 2)
    for eps in (0.5, 0.25, 0.125):
        r = P.rescale(psi, (0.0,), eps)
        assert P.cn_distance(r, order=2, box=0.5) / eps <= 2.0


def test_rescale_out_of_range():
    psi = P.parse_phase("paraboloid", 2)
    with pytest.raises(ValueError):
        P.rescale(psi, (0.7,), 0.25)
    with pytest.raises(ValueError):
        P.rescale(psi, (0.1,), 0.75)


def test_normals():
    psi = P.parse_phase("paraboloid", 3)
    assert np.allclose(P.normal(psi, np.zeros(2)), [0, 0, 1])
    assert np.allclose(P.normal(psi, np.array([1.0, 0.0])), np.array([-1, 0, 1]) / math.sqrt(2))


def test_time_normal_matches_static():
    tp = P.parse_phase("affine-time", 2)
    st_ = P.parse_phase("paraboloid", 2)
    for zeta, tau in [(0.1, 0.3), (-0.2, 0.05)]:
        t = P.solve_time(tp, [np.array(zeta)], np.array(tau))
        assert float(t) == pytest.approx(tau - zeta ** 2 / 2, abs=1e-10)
        n = P.normal_field(tp, np.array([zeta, tau]))
        assert np.allclose(n, P.normal(st_, np.array([zeta])), atol=1e-9)


def test_transversality_volume():
    assert P.transversality_volume(*np.eye(3)) == pytest.approx(1.0)
    s = math.sqrt(2) / 2
    assert P.transversality_volume([1, 0], [s, s]) == pytest.approx(s)
    assert P.transversality_volume([1, 0, 0], [1, 0, 0]) == pytest.approx(0.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6))
def test_volume_bounded_by_lengths(vals):
    a, b = np.array(vals[:3]), np.array(vals[3:])
    v = P.transversality_volume(a, b)
    assert v <= np.linalg.norm(a) * np.linalg.norm(b) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.49, 0.49), st.floats(-0.49, 0.49))
def test_normal_is_unit(x, y):
    n = P.normal(P.parse_phase("sphere", 3), np.array([x, y]))
    assert np.linalg.norm(n) == pytest.approx(1.0)
    assert n[-1] > 0


def test_distance_to_span_rank_deficient():
    assert P.distance_to_span([0, 0, 1], [[1, 0, 0], [2, 0, 0]]) == pytest.approx(1.0)
    assert P.distance_to_span([1, 1, 0], [[1, 0, 0], [0, 1, 0]]) == pytest.approx(0.0)
