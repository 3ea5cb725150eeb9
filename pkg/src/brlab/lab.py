"""Exponent arithmetic, sharpness witnesses, scaling-law experiments and the
multilinear / confined / covariance monitors.

Witnesses are built as samples of a continuous Fourier transform; the factor
``(h n / 2 pi)^d`` makes their space samples approximate the continuous inverse
transform, so L^p norms are comparable across grids of different spacing.
"""
import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
import sympy as sp
from scipy import stats

from . import grid as G
from . import multiplier as Mu
from .phase import bump, chi_circ, parse_phase, phi, transversality_volume

# =============================================================== exponents

def _k_for(d, ks):
    for k in ks:
        if (d - k) % 3 == 0:
            return k
    raise AssertionError("unreachable: ks covers all residues")


def p_circ(d):
    """2 + 12/(4d - 3 - k), d = k mod 3, k in {-1, 0, 1}."""
    k = _k_for(d, (-1, 0, 1))
    return 2 + Fraction(12, 4 * d - 3 - k)


def p_square(d):
    """2 + 12/(4d - 6 - k), d = k mod 3, k in {0, 1, 2}; None when the denominator vanishes."""
    k = _k_for(d, (0, 1, 2))
    den = 4 * d - 6 - k
    return None if den == 0 else 2 + Fraction(12, den)


def alpha_critical(p, d):
    """max(d|1/2 - 1/p| - 1/2, 0) as an exact rational."""
    p = Fraction(p)
    return max(d * abs(Fraction(1, 2) - 1 / p) - Fraction(1, 2), Fraction(0))


def slope_T(p, d):
    return Fraction(d) / Fraction(p) - Fraction(d - 1, 2)


def slope_S(p, d):
    return Fraction(d) / Fraction(p) - Fraction(d - 2, 2)


@dataclass(frozen=True)
class ExponentTable:
    d: int
    p_circ: Fraction
    p_s: Optional[Fraction]
    p_s_flag: str
    p_square_eff: Fraction
    stein_tomas: Fraction  # 2(d+2)/d

    def alpha(self, p):
        return alpha_critical(p, self.d)

    def e_T(self, p):
        return slope_T(p, self.d)

    def e_S(self, p):
        return slope_S(p, self.d)


def exponents(d):
    d = int(d)
    if d < 2:
        raise ValueError("d must be >= 2")
    ps = p_square(d)
    st = Fraction(2 * (d + 2), d)
    if ps is None:
        flag, eff = "degenerate (division by zero)", Fraction(4)
    else:
        flag, eff = "", min(ps, st)
    return ExponentTable(d, p_circ(d), ps, flag, eff, st)


_TEXT_P0 = "2 + 12/(4*d - 3 - k)"
_TEXT_PS = "2 + 12/(4*d - 6 - k)"


def exponents_textual(d):
    """Second implementation: parse the displayed formulas and pick k by residue search."""
    dd, kk = sp.symbols("d k", integer=True)
    out = {}
    for name, text, ks in (("p_circ", _TEXT_P0, (-1, 0, 1)), ("p_s", _TEXT_PS, (0, 1, 2))):
        k = [k for k in ks if sp.Mod(d - k, 3) == 0][0]
        expr = sp.sympify(text, locals={"d": dd, "k": kk})
        den = sp.denom(sp.together(expr - 2)).subs({dd: d, kk: k})
        out[name] = None if den == 0 else Fraction(str(sp.nsimplify(expr.subs({dd: d, kk: k}))))
    return out


# =============================================================== grids and witnesses

def ladder_grid(d, delta, oversample=4, box=1.0):
    """Grid with h = delta/oversample whose frequency box covers [-box, box]^d."""
    h = delta / oversample
    n = 1 << int(math.ceil(math.log2(2 * box / h)))
    return G.make_grid(d, n, h)


def grid_bytes(grid, arrays=10):
    return 16 * grid.size * arrays


def continuum_factor(grid):
    return (grid.h * grid.n / (2 * math.pi)) ** grid.d


@dataclass(frozen=True)
class Surface:
    """Graph used to place witnesses: value/grad callables plus the slab symbol."""
    value: object
    grad: object
    slab: object
    anchor: float  # default witness point (first zeta coordinate)


def _surface(spec):
    psi = spec.phase
    if spec.kind == "spherical_square":
        def value(comps):
            r2 = sum(np.asarray(c, dtype=float) ** 2 for c in comps)
            return np.sqrt(np.clip(1 - r2, 0, None))

        def grad(z):
            z = np.asarray(z, dtype=float)
            return -z / math.sqrt(1 - z @ z)

        def slab(comps):
            r = np.sqrt(sum(np.asarray(c, dtype=float) ** 2 for c in comps))
            return phi((1 - r) / spec.delta)

        return Surface(value, grad, slab, math.sqrt(0.5))
    if spec.kind not in ("t_delta", "s_delta"):
        raise ValueError(f"no witness surface for kind {spec.kind}")
    t0 = 0.5 * (spec.t_window[0] + spec.t_window[1]) if psi.time else None

    def value(comps):
        return psi.values(list(comps), t0)

    def grad(z):
        return np.asarray(psi.grad(np.asarray(z, dtype=float), t0), dtype=float)

    def slab(comps):
        comps = list(comps)
        return phi((comps[-1] - psi.values(comps[:-1], t0)) / spec.delta)

    return Surface(value, grad, slab, 0.1)


WITNESSES = ("knapp", "focus", "conj", "random-slab", "single-mode", "zero")


def _point(spec, d, point):
    s = _surface(spec)
    z0 = np.zeros(d - 1)
    z0[0] = s.anchor if point is None else point
    return s, z0


def witness(kind, spec, delta=None, seed=None, grid=None, point=None, p=4.0,
            restrict=None, box=0.5):
    """Sharpness witness as a frequency-side GridFunction.

    ``restrict=(a, eps)`` multiplies by a tensor bump supported in the cube of
    half-side eps around (a, psi(a)), giving the small-support variants.
    """
    delta = spec.delta if delta is None else delta
    spec = spec.with_delta(delta)
    d = spec.phase.d if spec.phase is not None else 2
    if grid is None:
        grid = ladder_grid(d, delta)
    if grid.h > delta / 4 * (1 + 1e-12):
        raise ValueError("resolution insufficient: grid spacing must be <= delta/4")
    comps = grid.freq_coords()
    cf = continuum_factor(grid)
    surf, z0 = _point(spec, d, point)
    if kind == "zero":
        return G.zeros(grid)
    if kind == "knapp":
        v0 = float(np.asarray(surf.value([np.array(c) for c in z0])))
        g0 = surf.grad(z0)
        F = 1.0
        tang = comps[-1] - v0
        cap = min(math.sqrt(delta), 0.38)  # keeps the plate inside the half box
        for i in range(d - 1):
            F = F * bump((comps[i] - z0[i]) / cap)
            tang = tang - g0[i] * (comps[i] - z0[i])
        F = F * bump(tang / (delta / 2))
    elif kind == "focus":
        if spec.kind == "spherical_square":
            center = np.concatenate([z0, [math.sqrt(1 - z0 @ z0)]])
            rad = 0.25
        else:
            center = np.zeros(d)
            center[-1] = float(np.asarray(surf.value([np.zeros(()) for _ in range(d - 1)])))
            rad = 0.4
        chi = chi_circ([c - m for c, m in zip(comps, center)], rad)
        F = _on_support(chi, lambda pts: surf.slab(pts), comps, grid)
    elif kind == "conj":
        if spec.kind != "t_delta":
            raise ValueError("conj witness is defined for t_delta")
        chi = np.broadcast_to(chi_circ(comps, 0.4), grid.shape)
        F = _on_support(chi, lambda pts: Mu.t_delta_symbol(spec, pts), comps, grid)
        K = G.fft_inverse(F)
        Kr = np.roll(K[(slice(None, None, -1),) * d], 1, axis=tuple(range(d)))
        q = p / (p - 1)
        g = np.conj(Kr) * np.abs(Kr) ** (q - 2)
        F = G.fft_forward(g) * chi
        F = F / max(np.abs(F).max(), 1e-300)
    elif kind == "random-slab":
        rng = np.random.default_rng(seed)
        mask = np.ones(grid.shape, dtype=bool)
        for c in comps:
            mask = mask & (np.abs(c) <= box)
        S = np.zeros(grid.shape)
        S[mask] = np.asarray(surf.slab([np.broadcast_to(c, grid.shape)[mask] for c in comps]))
        nz = S != 0
        F = np.zeros(grid.shape, dtype=np.complex128)
        F[nz] = rng.standard_normal(nz.sum()) + 1j * rng.standard_normal(nz.sum())
    elif kind == "single-mode":
        if point is None:  # the graph passes through a grid point at zeta = 0
            z0 = np.zeros(d - 1)
        v0 = float(np.asarray(surf.value([np.array(c) for c in z0])))
        F = np.zeros(grid.shape, dtype=np.complex128)
        F[grid.freq_index(np.concatenate([z0, [v0]]))] = 1.0
        cf = 1.0
    else:
        raise ValueError(f"unknown witness kind {kind!r}")
    F = np.broadcast_to(np.asarray(F, dtype=np.complex128), grid.shape)
    if restrict is not None:
        a, eps = restrict
        a = np.atleast_1d(np.asarray(a, dtype=float))
        c_last = float(np.asarray(surf.value([np.array(v) for v in a])))
        cube = 1.0
        for c, m in zip(comps, list(a) + [c_last]):
            cube = cube * bump((c - m) / eps)
        F = F * cube
    return G.from_frequency(grid, F * cf)


def _on_support(chi, symbol, comps, grid):
    """chi * symbol evaluated only where chi is nonzero."""
    chi = np.broadcast_to(np.asarray(chi, dtype=float), grid.shape)
    nz = np.nonzero(chi)
    out = np.zeros(grid.shape, dtype=np.complex128)
    pts = [np.broadcast_to(c, grid.shape)[nz] for c in comps]
    out[nz] = chi[nz] * np.nan_to_num(np.asarray(symbol(pts), dtype=float))
    return out


def knapp_mass(spec, delta, d):
    """Continuous ||f||_2^2 of the knapp witness: plate volume times bump integrals."""
    from scipy.integrate import quad

    b2 = quad(lambda s: float(bump(s)) ** 2, -1, 1)[0]
    return (2 * math.pi) ** -d * (math.sqrt(delta) * b2) ** (d - 1) * (delta / 2) * b2


# =============================================================== operators and ratios

def apply_operator(spec, f):
    k = spec.kind
    if k == "t_delta":
        return Mu.t_delta(f, spec)
    if k == "s_delta":
        return Mu.s_delta(f, spec)
    if k == "spherical_square":
        return Mu.spherical_square(f, spec)
    if k == "bochner_riesz":
        return Mu.bochner_riesz(f, spec)
    if k == "stein_square":
        return Mu.stein_square(f, spec)
    raise ValueError(f"unknown operator kind {k}")


def lp_ratio(spec, f, ps):
    """{p: ||op f||_p / ||f||_p} with 0 for the zero function."""
    out = apply_operator(spec, f)
    fs = f.space()
    res = {}
    for p in np.atleast_1d(ps):
        den = G.lp_norm(fs, float(p))
        res[float(p)] = 0.0 if den == 0 else G.lp_norm(out, float(p)) / den
    return res


# =============================================================== regression

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float
    residuals: np.ndarray


def fit_slope(deltas, values):
    """OLS of log2(values) on log2(deltas)."""
    x = np.log2(np.asarray(deltas, dtype=float))
    y = np.log2(np.asarray(values, dtype=float))
    if x.size < 2:
        raise ValueError("need at least two ladder points")
    if x.size == 2:
        s = (y[1] - y[0]) / (x[1] - x[0])
        b = y[0] - s * x[0]
        return SlopeFit(float(s), math.nan, float(b), y - (s * x + b))
    r = stats.linregress(x, y)
    return SlopeFit(float(r.slope), float(r.stderr), float(r.intercept), y - (r.slope * x + r.intercept))


def parse_ladder(text):
    """``2^-3..2^-8`` -> [2^-3, ..., 2^-8]; a comma list is also accepted."""
    text = str(text).strip()
    m = re.fullmatch(r"2\^(-?\d+)\s*\.\.\s*2\^(-?\d+)", text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        step = -1 if b < a else 1
        return [2.0 ** e for e in range(a, b + step, step)]
    vals = [Mu.parse_number(v) for v in text.split(",") if v.strip()]
    if not vals:
        raise ValueError(f"empty ladder {text!r}")
    return vals


def check_ladder(ladder, min_points=4):
    if len(ladder) < min_points:
        raise ValueError(f"ladder needs at least {min_points} points")
    for v in ladder:
        if not Mu.is_dyadic(v):
            raise ValueError(f"ladder value {v} is not dyadic")


# =============================================================== scaling experiments

@dataclass
class ScalingReport:
    experiment_id: str
    op: str
    d: int
    p: float
    witnesses: tuple
    deltas: list
    ratios: dict  # witness -> list aligned with deltas (nan when skipped)
    best: list  # max over witnesses
    slope: float
    stderr: float
    theoretical: float
    normalized: list
    residuals: np.ndarray
    skipped: list = field(default_factory=list)
    per_witness_slope: dict = field(default_factory=dict)

    def argmax_witness(self, i):
        return max(self.witnesses, key=lambda w: self.ratios[w][i])

    def rows(self, every_witness=False):
        """One row per ladder point (the maximizing witness), or one per (point, witness)."""
        out = []
        for i, dl in enumerate(self.deltas):
            names = self.witnesses if every_witness else (self.argmax_witness(i),)
            for w in names:
                r = self.ratios[w][i]
                out.append((self.experiment_id, self.d, self.p, dl, w, r, r / dl ** self.theoretical))
        return out


DEFAULT_BUDGET = 3 * 2 ** 30


def _ladder_point(args):
    spec, witnesses, ps, dl, point, seed, restrict = args
    d = spec.phase.d if spec.phase is not None else 2
    g = ladder_grid(d, dl)
    sp_ = spec.with_delta(dl)
    row = {}
    for w in witnesses:
        if w == "conj":
            pr = {}
            for p in ps:
                f = witness(w, sp_, dl, seed, g, point, p=p, restrict=restrict)
                pr.update(lp_ratio(sp_, f, [p]))
        else:
            pr = lp_ratio(sp_, witness(w, sp_, dl, seed, g, point, restrict=restrict), ps)
        row[w] = pr
    return row


def ladder_ratios(spec, witnesses, ps, ladder, memory_budget=DEFAULT_BUDGET, point=None, seed=0,
                  restrict=None, workers=1):
    """table[i][witness][p] per ladder point (None where the grid exceeds the budget)."""
    d = spec.phase.d if spec.phase is not None else 2
    jobs, skipped = [], []
    for dl in ladder:
        if grid_bytes(ladder_grid(d, dl)) > memory_budget:
            skipped.append(dl)
        else:
            jobs.append((spec, tuple(witnesses), tuple(ps), dl, point, seed, restrict))
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_ladder_point, jobs))
    else:
        rows = [_ladder_point(j) for j in jobs]
    by_delta = {j[3]: r for j, r in zip(jobs, rows)}
    return [by_delta.get(dl) for dl in ladder], skipped


def _report(exp_id, spec, witnesses, p, ladder, table, skipped, theoretical):
    keep = [i for i, row in enumerate(table) if row is not None]
    deltas = [ladder[i] for i in keep]
    ratios = {w: [table[i][w][float(p)] for i in keep] for w in witnesses}
    best = [max(table[i][w][float(p)] for w in witnesses) for i in keep]
    if len(deltas) >= 2:
        fit = fit_slope(deltas, best)
        per = {}
        for w in witnesses:
            vals = ratios[w]
            if all(v > 0 for v in vals):
                per[w] = fit_slope(deltas, vals).slope
    else:
        fit = SlopeFit(math.nan, math.nan, math.nan, np.array([]))
        per = {}
    norm = [b / dl ** theoretical for b, dl in zip(best, deltas)]
    return ScalingReport(exp_id, spec.to_string(), spec.phase.d if spec.phase else 2, float(p),
                         tuple(witnesses), deltas, ratios, best, fit.slope, fit.stderr,
                         float(theoretical), norm, fit.residuals, skipped, per)


def theoretical_slope(spec, p):
    d = spec.phase.d if spec.phase is not None else 2
    if spec.kind == "t_delta":
        return float(slope_T(Fraction(p).limit_denominator(1000), d))
    if spec.kind in ("s_delta", "spherical_square"):
        return float(slope_S(Fraction(p).limit_denominator(1000), d))
    raise ValueError(f"no theoretical slope for {spec.kind}")


def scaling_experiment(spec, witnesses, p, ladder, memory_budget=DEFAULT_BUDGET, exp_id=None,
                       min_points=4, workers=1, point=None, seed=0):
    """Fit the slope of max-over-witness ratios against the ladder.

    ``p`` may be a list; one report per exponent is then returned (dict).
    """
    if isinstance(spec, str):
        spec = Mu.parse_operator(spec)
    check_ladder(ladder, min_points)
    ps = [float(v) for v in np.atleast_1d(p)]
    table, skipped = ladder_ratios(spec, witnesses, ps, ladder, memory_budget, point, seed,
                                   workers=workers)
    reps = {}
    for q in ps:
        eid = exp_id or f"{spec.kind}:{spec.phase.name if spec.phase else 'radial'}:p={q:g}"
        reps[q] = _report(eid, spec, witnesses, q, ladder, table, skipped, theoretical_slope(spec, q))
    return reps if np.ndim(p) else reps[ps[0]]


# =============================================================== bilinear

@dataclass
class BilinearReport:
    deltas: list
    lhs: list
    constants: list
    vol: float
    spread: float  # max/min of constants


def _cap_witness(spec, grid, center, halfwidth, kind="focus", seed=0):
    """Slab-restricted bump around zeta=center (first coordinate), |other zeta| < halfwidth."""
    d = grid.d
    comps = grid.freq_coords()
    surf = _surface(spec)
    cut = 1.0
    for i in range(d - 1):
        m = center if i == 0 else 0.0
        cut = cut * bump((comps[i] - m) / halfwidth)
    cut = np.broadcast_to(cut, grid.shape)
    cut = cut * (np.abs(comps[-1]) <= 0.5)
    F = _on_support(cut, surf.slab, comps, grid)
    if kind == "random-slab":
        rng = np.random.default_rng(seed)
        nz = F != 0
        F[nz] *= rng.standard_normal(nz.sum()) + 1j * rng.standard_normal(nz.sum())
    return G.from_frequency(grid, F * continuum_factor(grid))


def support_volume(psi, centers, halfwidth, d, samples=5):
    """min Vol of normals over sampled support points of the cap witnesses (static phase)."""
    grids = []
    for c in centers:
        axes = [np.linspace(c - halfwidth, c + halfwidth, samples)]
        axes += [np.linspace(-halfwidth, halfwidth, samples)] * (d - 2)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d - 1)
        grids.append(np.asarray(_normal_static(psi, mesh)))
    best = math.inf
    for a in grids[0]:
        for b in grids[1]:
            best = min(best, transversality_volume(a, b))
    return best


def _normal_static(psi, zeta, t=None):
    g = np.asarray(psi.grad(zeta, t), dtype=float)
    v = np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def bilinear_transversal_experiment(spec, p, sigma, ladder, centers=(-0.3, 0.3), halfwidth=0.1,
                                    kind="focus", seed=0, swap=False, zero=False):
    """c(delta) = ||T f1 T f2||_{p/2} / (delta^{2 e_T} ||f1||_p ||f2||_p)."""
    if isinstance(spec, str):
        spec = Mu.parse_operator(spec)
    if p < 4:
        raise ValueError("bilinear estimate needs p >= 4")
    d = spec.phase.d
    vol = support_volume(spec.phase, centers, halfwidth, d)
    if vol < sigma:
        raise ValueError(f"non-transversal supports: Vol {vol:.3g} < sigma {sigma:g}")
    e = float(slope_T(Fraction(p).limit_denominator(1000), d))
    lhs, consts = [], []
    for dl in ladder:
        g = ladder_grid(d, dl)
        sp_ = spec.with_delta(dl)
        f1 = _cap_witness(sp_, g, centers[0], halfwidth, kind, seed)
        f2 = _cap_witness(sp_, g, centers[1], halfwidth, kind, seed + 1)
        if zero:
            f2 = G.zeros(g)
        if swap:
            f1, f2 = f2, f1
        T1, T2 = Mu.t_delta(f1, sp_), Mu.t_delta(f2, sp_)
        L = G.lp_norm(G.from_space(g, T1.samples * T2.samples), p / 2)
        den = G.lp_norm(f1.space(), p) * G.lp_norm(f2.space(), p)
        lhs.append(L)
        consts.append(0.0 if L == 0 else L / (dl ** (2 * e) * den))
    pos = [c for c in consts if c > 0]
    spread = max(pos) / min(pos) if pos else 1.0
    return BilinearReport(list(ladder), lhs, consts, vol, spread)


# =============================================================== confined square functions

@dataclass
class ConfinedReport:
    deltas: list
    ratios: list
    lhs: list
    rhs: list
    spread: float


def _ball_weight(grid, x0, radius, power=None):
    """rho_B >= 1 on the ball B(x0, radius), polynomially decaying outside."""
    power = 2 * grid.d if power is None else power
    r2 = sum((c - m) ** 2 for c, m in zip(grid.space_coords(), x0)) / radius ** 2
    return (2.0 / (1.0 + r2)) ** power


def confined_square_experiment(spec, plane, ladder, p=4.0, sigma_tilde=0.25, centers=(-0.3, 0.3),
                               width=0.15, seed=0, C_conf=2.0, x0=None):
    """Ratio of ||prod S f_i||_{L^{p/2}(B)} to prod ||(sum_q |S f_{i,q}|^2)^(1/2) rho_B||_p.

    B = B(x0, 1/sigma_tilde) and the q are the dyadic cubes of side 2*sigma_tilde,
    both fixed while delta runs down the ladder.  Factors carry seeded random
    coefficients on the delta-slab of the time-0 surface, in strips whose normals
    stay within C_conf * sigma_tilde of ``plane`` (rows span it).
    """
    from .decompose import restrict_all

    if isinstance(spec, str):
        spec = Mu.parse_operator(spec, d=3)
    psi = spec.phase
    d = psi.d
    if not 2 <= p <= 4:
        raise ValueError("p must lie in [2, 2k/(k-1)] = [2, 4] for k = 2")
    B = np.atleast_2d(np.asarray(plane, dtype=float))
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float)
    st = sigma_tilde
    ratios, L, R = [], [], []
    for dl in ladder:
        if dl > st:
            raise ValueError("need delta <= sigma_tilde")
        g = ladder_grid(d, dl)
        sp_ = spec.with_delta(dl)
        comps = g.freq_coords()
        rng = np.random.default_rng(seed)
        facs = []
        for c in centers:
            cut = bump((comps[0] - c) / width)
            for i in range(1, d - 1):
                cut = cut * bump(comps[i] / st)
            cut = np.broadcast_to(cut, g.shape) * (np.abs(comps[-1]) <= 0.5)
            F = _on_support(cut, _surface(sp_).slab, comps, g)
            nz = np.nonzero(F)
            F[nz] *= rng.standard_normal(nz[0].size) + 1j * rng.standard_normal(nz[0].size)
            zs = np.stack([np.broadcast_to(comps[i], g.shape)[nz] for i in range(d - 1)], axis=-1)
            nrm = _normal_static(psi, zs, 0.0)
            res = nrm - (nrm @ np.linalg.pinv(B)) @ B
            if np.max(np.linalg.norm(res, axis=1)) > C_conf * st:
                raise ValueError("direction-confinement precondition violated")
            facs.append(G.from_frequency(g, F * continuum_factor(g)))
        ball = _ball_weight(g, x0, 1 / st)
        inball = sum((c - m) ** 2 for c, m in zip(g.space_coords(), x0)) <= (1 / st) ** 2
        S = [Mu.s_delta(f, sp_) for f in facs]
        prod = np.abs(S[0].samples * S[1].samples) * np.broadcast_to(inball, g.shape)
        lhs = G.modulus_lp(prod, g, p / 2)
        rhs = 1.0
        for f in facs:
            acc = np.zeros(g.shape)
            for fq in restrict_all(f, st).values():
                acc += np.abs(Mu.s_delta(fq, sp_).samples) ** 2
            rhs *= G.modulus_lp(np.sqrt(acc) * ball, g, p)
        L.append(lhs)
        R.append(rhs)
        ratios.append(lhs / rhs if rhs > 0 else 0.0)
    pos = [r for r in ratios if r > 0]
    return ConfinedReport(list(ladder), ratios, L, R, max(pos) / min(pos) if pos else 1.0)


# =============================================================== induction quantities

A_PHASES = ("paraboloid", "sphere", "perturbed:g=cubic,eps=0.05")
B_PHASES = ("affine-time", "br:eps=0.1")
A_SUITE = ("knapp", "focus", "conj")
B_SUITE = ("knapp", "focus")


@dataclass
class InductionEstimate:
    kind: str
    delta: float
    p: float
    value: float
    table: dict  # (phase, witness) -> ratio
    quotient: Optional[float] = None
    small: Optional[float] = None
    reference: Optional[float] = None


def _estimate(kind, delta, suite, p, phases, restrict=None):
    d = 2
    table = {}
    for ph in phases:
        psi = parse_phase(ph, d)
        spec = Mu.OperatorSpec("t_delta" if kind == "A" else "s_delta", phase=psi, delta=delta)
        g = ladder_grid(d, delta)
        for w in suite:
            if restrict is not None and w == "conj":
                continue
            f = witness(w, spec, delta, 0, g, p=p, restrict=restrict)
            table[(ph, w)] = lp_ratio(spec, f, [p])[float(p)]
    return table


def induction_estimate(kind, delta, suite=None, p=4.0, phases=None, eps=None, a=(0.25,)):
    """A-hat / B-hat: max ratio over the witness suite and phase library.

    With ``eps`` set, also measures witnesses restricted to the cube of half-side
    eps around (a, psi(a)) and reports their max divided by A-hat(delta/eps^2)
    (kind A) or eps^(1/p+1/2) * B-hat(delta/eps^2) (kind B).
    """
    if kind not in ("A", "B"):
        raise ValueError("kind must be 'A' or 'B'")
    suite = tuple((A_SUITE if kind == "A" else B_SUITE) if suite is None else suite)
    phases = tuple((A_PHASES if kind == "A" else B_PHASES) if phases is None else phases)
    if not suite:
        raise ValueError("empty witness suite")
    table = _estimate(kind, delta, suite, p, phases)
    value = max(table.values()) if table else 0.0
    est = InductionEstimate(kind, delta, p, value, table)
    if eps is not None:
        small_tab = _estimate(kind, delta, suite, p, phases, restrict=(a, eps))
        small = max(small_tab.values())
        ref_tab = _estimate(kind, delta / eps ** 2, suite, p, phases)
        ref = max(ref_tab.values())
        if kind == "B":
            ref = eps ** (1 / p + 0.5) * ref
        est.small, est.reference = small, ref
        est.quotient = small / ref if ref > 0 else math.inf
    return est


# =============================================================== change of variables

@dataclass
class ChangeOfVariables:
    lhs: float
    rhs: float
    rel_err: float
    det: float


def _sqrt_hess_inv(psi, a):
    H = np.asarray(psi.hess(np.asarray(a, dtype=float)), dtype=float)
    w, P = np.linalg.eigh(H)
    if np.any(w <= 0):
        raise ValueError("Hessian is not positive definite")
    return P @ np.diag(w ** -0.5) @ P.T


def change_of_variables_check(psi, a, eps, p=4.0, s=0.01, center=None, n=512):
    """Compare ||F^{-1}(g^ o L)||_p with |det L|^{1/p-1} ||g||_p for a Gaussian g^.

    L(zeta, tau) = (eps M zeta + a, eps^2 tau + psi(a) + eps grad psi(a) . M zeta),
    M = (sqrt Hess psi(a))^{-1}; det L = eps^(d+1) det M.  Both sides are
    Riemann sums of continuous inverse transforms on power-of-two grids.
    """
    d = psi.d
    a = np.atleast_1d(np.asarray(a, dtype=float))
    M = _sqrt_hess_inv(psi, a)
    ga = np.asarray(psi.grad(a), dtype=float)
    pa = float(psi.eval(a))
    lin = np.zeros((d, d))
    lin[:-1, :-1] = eps * M
    lin[-1, :-1] = eps * ga @ M
    lin[-1, -1] = eps ** 2
    off = np.concatenate([a, [pa]])
    c = off + lin @ np.zeros(d) if center is None else np.asarray(center, dtype=float)

    def ghat(comps):
        return np.exp(-sum((x - m) ** 2 for x, m in zip(comps, c)) / (2 * s ** 2))

    # g on a fine-frequency grid around its center
    hA = s / 2.5
    gA = G.make_grid(d, _pow2(max(n, 2 / hA)), hA)
    FA = ghat([x + m for x, m in zip(gA.freq_coords(), c)])
    gsp = G.from_frequency(gA, np.broadcast_to(FA, gA.shape) * continuum_factor(gA))
    rhs_g = G.lp_norm(gsp.space(), p)
    # g^ o L sampled directly
    widths = np.abs(np.linalg.inv(lin)).sum(axis=1) * s
    hB = float(widths.min()) / 2.5
    ext = 12 * float(widths.max())
    xi_c = np.linalg.solve(lin, c - off)
    gB = G.make_grid(d, _pow2(max(n, 2 / hB, ext / hB)), hB)
    comps = [x + m for x, m in zip(gB.freq_coords(), xi_c)]
    L_pts = [sum(lin[i, j] * comps[j] for j in range(d)) + off[i] for i in range(d)]
    FB = ghat(L_pts)
    lhs = G.lp_norm(G.from_frequency(gB, np.broadcast_to(FB, gB.shape) * continuum_factor(gB)).space(), p)
    det = abs(float(np.linalg.det(lin)))
    rhs = det ** (1 / p - 1) * rhs_g
    return ChangeOfVariables(lhs, rhs, abs(lhs - rhs) / rhs, det)


def _pow2(x):
    return 1 << int(math.ceil(math.log2(x)))
