"""Closed-form phase surfaces with exact derivatives, parabolic rescaling,
normal maps and transversality volumes.

A :class:`PhaseSurface` stores a sympy expression in the variables
``z0..z_{d-2}`` (and ``t`` for time-dependent families).  Derivatives of any
order are taken symbolically and compiled with ``lambdify`` on first use, so
every gradient, Hessian and Taylor remainder used downstream is exact up to
floating-point evaluation.
"""
import itertools
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import sympy as sp

EPS0_DEFAULT = 0.05
KAPPA_DEFAULT = 0.25

STATIC_FAMILIES = ("paraboloid", "sphere", "perturbed")
TIME_FAMILIES = ("br", "affine-time")

# closed-form perturbation library for the perturbed paraboloid
_G_LIBRARY = ("cubic", "quartic", "trig")


class DomainError(ValueError):
    pass


# ---------------------------------------------------------------- bumps

def phi(s):
    """Fixed smooth bump supported in [-2, 2] with phi(0) = 1."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 2
    u = (s[m] * 0.5) ** 2
    out[m] = np.exp(1.0 - 1.0 / (1.0 - u))
    return out


def bump(s):
    """Smooth bump supported in (-1, 1), equal to 1 at 0."""
    return phi(2.0 * np.asarray(s, dtype=float))


def plateau(s, inner=1.0, outer=None):
    """Smooth radial profile: 1 on |s|<=inner, 0 for |s|>=outer (default pi)."""
    outer = math.pi if outer is None else outer
    s = np.abs(np.asarray(s, dtype=float))
    u = np.clip((s - inner) / (outer - inner), 0.0, 1.0)

    def g(v):
        out = np.zeros_like(v)
        m = v > 0
        out[m] = np.exp(-1.0 / v[m])
        return out

    return g(1.0 - u) / (g(1.0 - u) + g(u))


def phi_l2_squared():
    """int phi(s)^2 ds, by adaptive quadrature."""
    from scipy.integrate import quad

    return quad(lambda s: float(phi(s)) ** 2, -2, 2, limit=200)[0]


@dataclass(frozen=True)
class CutoffProfile:
    """The slab cutoff phi together with a multiplier eta(xi, t) in [1/2, 1]."""
    kind: str = "constant-one"

    def __post_init__(self):
        if self.kind not in ("constant-one", "smooth-bump-eta"):
            raise ValueError(f"unknown cutoff kind {self.kind!r}")

    def eta(self, comps, t=0.0):
        if self.kind == "constant-one":
            return 1.0
        r2 = sum(np.asarray(c, dtype=float) ** 2 for c in comps)
        return 0.75 + 0.25 * np.cos(r2 + t)

    phi = staticmethod(phi)


def chi_circ(comps, radius=0.4):
    """Tensor bump supported in the cube of half-side ``radius``."""
    out = 1.0
    for c in comps:
        out = out * bump(np.asarray(c, dtype=float) / radius)
    return out


# ---------------------------------------------------------------- surfaces

@lru_cache(maxsize=None)
def _symbols(d):
    z = sp.symbols(f"z0:{d - 1}", real=True)
    t = sp.Symbol("t", real=True)
    return z, t


@dataclass(frozen=True)
class Lineage:
    parent: "PhaseSurface"
    base: tuple
    eps: float
    kind: str  # "static" or "time"


@dataclass(frozen=True, eq=False)
class PhaseSurface:
    name: str
    family: str
    d: int
    expr: sp.Expr
    time: bool
    params: dict = field(default_factory=dict)
    lineage: Optional[Lineage] = None
    domain_radius: Optional[float] = None  # analytic domain |zeta| < r for static sqrt families
    eps0: float = EPS0_DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "_fns", {})

    def __repr__(self):
        return f"PhaseSurface({self.name!r}, d={self.d})"

    @property
    def zsyms(self):
        return _symbols(self.d)[0]

    @property
    def tsym(self):
        return _symbols(self.d)[1]

    @property
    def variables(self):
        z, t = _symbols(self.d)
        return tuple(z) + ((t,) if self.time else ())

    @property
    def nvars(self):
        return self.d - 1 + (1 if self.time else 0)

    # -------------------------------------------------- compiled derivatives
    def _fn(self, alpha):
        alpha = tuple(int(a) for a in alpha)
        fns = self._fns
        if alpha not in fns:
            e = self.expr
            for v, k in zip(self.variables, alpha):
                if k:
                    e = sp.diff(e, v, k)
            # numeric constants become floats so huge exact rationals never reach numpy
            fns[alpha] = (sp.lambdify(self.variables, e.evalf(20), modules="numpy"), e)
        return fns[alpha][0]

    def derivative_expr(self, alpha):
        self._fn(alpha)
        return self._fns[tuple(int(a) for a in alpha)][1]

    def _args(self, comps, t):
        comps = [np.asarray(c, dtype=float) for c in comps]
        if len(comps) != self.d - 1:
            raise ValueError(f"expected {self.d - 1} zeta components, got {len(comps)}")
        if self.time:
            if t is None:
                raise ValueError("time-dependent phase needs t")
            comps.append(np.asarray(t, dtype=float))
        elif t is not None:
            raise ValueError("static phase takes no t")
        return comps

    def call(self, alpha, comps, t=None, strict=True):
        """Evaluate the derivative ``alpha`` on broadcastable component arrays."""
        args = self._args(comps, t)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self._fn(alpha)(*args)
        shape = np.broadcast_shapes(*[a.shape for a in args]) if args else ()
        out = np.broadcast_to(np.asarray(out, dtype=float), shape)
        if strict and not np.all(np.isfinite(out)):
            raise DomainError(f"{self.name}: point outside the analytic domain")
        return out

    def _split(self, zeta):
        zeta = np.asarray(zeta, dtype=float)
        if self.d == 2 and zeta.ndim == 0:
            zeta = zeta[None]
        if zeta.shape[-1] != self.d - 1:
            raise ValueError(f"zeta must have last axis {self.d - 1}")
        return [zeta[..., i] for i in range(self.d - 1)]

    def _check_domain(self, comps):
        if self.domain_radius is not None:
            r2 = sum(np.asarray(c) ** 2 for c in comps)
            if np.any(r2 >= self.domain_radius ** 2):
                raise DomainError(f"{self.name}: |zeta| must be < {self.domain_radius}")

    def eval(self, zeta, t=None):
        comps = self._split(zeta)
        self._check_domain(comps)
        return self.call((0,) * self.nvars, comps, t)

    def grad(self, zeta, t=None):
        """Gradient in zeta only."""
        comps = self._split(zeta)
        self._check_domain(comps)
        g = []
        for i in range(self.d - 1):
            a = [0] * self.nvars
            a[i] = 1
            g.append(self.call(a, comps, t))
        return np.stack(g, axis=-1)

    def hess(self, zeta, t=None):
        comps = self._split(zeta)
        self._check_domain(comps)
        m = self.d - 1
        rows = []
        for i in range(m):
            row = []
            for j in range(m):
                a = [0] * self.nvars
                a[i] += 1
                a[j] += 1
                row.append(self.call(a, comps, t))
            rows.append(np.stack(row, axis=-1))
        return np.stack(rows, axis=-2)

    def dt(self, zeta, t):
        if not self.time:
            raise ValueError("static phase has no time derivative")
        comps = self._split(zeta)
        a = [0] * self.nvars
        a[-1] = 1
        return self.call(a, comps, t)

    def values(self, comps, t=None, strict=False):
        """Phase values on broadcastable components (NaN outside the domain unless strict)."""
        out = self.call((0,) * self.nvars, comps, t, strict=strict)
        if self.domain_radius is not None:
            r2 = sum(np.asarray(c, dtype=float) ** 2 for c in comps)
            out = np.where(r2 < self.domain_radius ** 2, out, np.nan)
            if strict and np.any(np.isnan(out)):
                raise DomainError(f"{self.name}: point outside the analytic domain")
        return out


def reference_expr(d, time):
    z, t = _symbols(d)
    e = sum(v ** 2 for v in z) / 2
    return e + t if time else e


def _make(name, family, d, expr, time, params=None, domain_radius=None, eps0=EPS0_DEFAULT):
    return PhaseSurface(name=name, family=family, d=d, expr=expr, time=time,
                        params=dict(params or {}), domain_radius=domain_radius, eps0=eps0)


def _g_expr(g, z):
    if g == "cubic":
        return sum(v ** 3 for v in z) / 6
    if g == "quartic":
        return sum(v ** 2 for v in z) ** 2 / 24
    if g == "trig":
        s = sum(z)
        return sp.cos(s) - 1 + s ** 2 / 2
    raise ValueError(f"unknown perturbation {g!r}; choose from {_G_LIBRARY}")


def _parse_params(text):
    params = {}
    if not text:
        return params
    for item in text.split(","):
        if "=" not in item:
            raise ValueError(f"malformed phase parameter {item!r}")
        k, v = item.split("=", 1)
        params[k.strip()] = v.strip()
    return params


def _number(v):
    v = str(v).strip()
    m = re.fullmatch(r"2\^(-?\d+)", v)
    if m:
        return 2.0 ** int(m.group(1))
    if "/" in v:
        a, b = v.split("/", 1)
        return float(a) / float(b)
    return float(v)


@lru_cache(maxsize=None)
def parse_phase(ident, d=2, eps0=EPS0_DEFAULT):
    """Phase from its config identifier, e.g. ``"br:eps=0.1"`` or ``"perturbed:g=cubic,eps=0.05"``."""
    ident = ident.strip()
    fam, _, rest = ident.partition(":")
    fam = fam.strip().lower()
    params = _parse_params(rest)
    d = int(d)
    if d < 2:
        raise ValueError("phases need d >= 2")
    z, t = _symbols(d)
    r2 = sum(v ** 2 for v in z)
    if fam == "paraboloid":
        _no_params(fam, params)
        return _make(ident, fam, d, r2 / 2, False, eps0=eps0)
    if fam in ("sphere", "sphere-graph"):
        _no_params(fam, params)
        return _make(ident, "sphere", d, 1 - sp.sqrt(1 - r2), False, domain_radius=1.0, eps0=eps0)
    if fam in ("affine-time", "affine-time-paraboloid"):
        _no_params(fam, params)
        return _make(ident, "affine-time", d, r2 / 2 + t, True, eps0=eps0)
    if fam in ("br", "bochner-riesz-time"):
        _allowed(fam, params, {"eps"})
        e = _exact(_number(params.get("eps", "0.1")))
        if not 0 < e <= 0.5:
            raise ValueError("br parameter eps must lie in (0, 1/2]")
        expr = (1 - sp.sqrt((1 - e ** 2 * t) ** 2 - e ** 2 * r2)) / e ** 2
        return _make(ident, "br", d, expr, True, {"eps": float(e)}, eps0=eps0)
    if fam == "perturbed":
        _allowed(fam, params, {"g", "eps"})
        g = params.get("g", "cubic")
        e = _exact(_number(params.get("eps", "0.05")))
        expr = r2 / 2 + e * _g_expr(g, z)
        return _make(ident, fam, d, expr, False, {"g": g, "eps": float(e)}, eps0=eps0)
    raise ValueError(f"unknown phase family {fam!r}")


def _no_params(fam, params):
    if params:
        raise ValueError(f"phase {fam!r} takes no parameters")


def _allowed(fam, params, keys):
    bad = set(params) - keys
    if bad:
        raise ValueError(f"phase {fam!r}: unknown parameters {sorted(bad)}")


# ---------------------------------------------------------------- class tests

def multi_indices(nvars, order):
    out = []
    for total in range(order + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), total):
            a = [0] * nvars
            for c in combo:
                a[c] += 1
            out.append(tuple(a))
    return out


def _lattice(psi, lattice, box, tbox=1.0):
    ax = np.linspace(-box, box, lattice)
    comps = np.meshgrid(*([ax] * (psi.d - 1)), indexing="ij")
    t = None
    if psi.time:
        tax = np.linspace(-tbox, tbox, lattice)
        grids = np.meshgrid(*([ax] * (psi.d - 1) + [tax]), indexing="ij")
        comps, t = grids[:-1], grids[-1]
    return comps, t


def cn_distance(psi, order=4, lattice=9, box=1.0):
    """max over lattice and |alpha|<=order of |d^alpha (psi - reference)|.

    The reference is |zeta|^2/2 for static phases and |zeta|^2/2 + t for time
    families.  ``box`` shrinks the zeta sample cube (time always spans [-1,1]).
    """
    if order > 4:
        raise ValueError("cn_distance supports order <= 4")
    comps, t = _lattice(psi, lattice, box)
    ref = _make("reference", "reference", psi.d, reference_expr(psi.d, psi.time), psi.time)
    worst = 0.0
    for alpha in multi_indices(psi.nvars, order):
        a = psi.call(alpha, comps, t)
        b = ref.call(alpha, comps, t)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return worst


def time_derivative_range(psi, lattice=9):
    comps, t = _lattice(psi, lattice, 1.0)
    a = [0] * psi.nvars
    a[-1] = 1
    v = psi.call(a, comps, t)
    return float(v.min()), float(v.max())


@dataclass
class ClassReport:
    cn: float
    eps0: float
    dt_range: Optional[tuple]
    inside: bool


def class_report(psi, order=4, lattice=9):
    """Report, without asserting, whether ``psi`` sits inside the class for its eps0."""
    cn = cn_distance(psi, order, lattice)
    rng = time_derivative_range(psi, lattice) if psi.time else None
    inside = cn <= psi.eps0
    if rng is not None:
        inside = inside and rng[0] >= 1 - psi.eps0 and rng[1] <= 1 + psi.eps0
    return ClassReport(cn, psi.eps0, rng, inside)


# ---------------------------------------------------------------- rescaling

def _exact(v):
    # shortest decimal form keeps 0.3 as 3/10 rather than a 2^-54 fraction
    return sp.Rational(repr(float(v)))


def _inverse_sqrt(H):
    """(sqrt H)^{-1} through the symmetric eigendecomposition; exact if H is diagonal."""
    H = sp.Matrix(H)
    if H.is_diagonal() and all(x.is_number for x in H):
        vals = [H[i, i] for i in range(H.rows)]
        if any(sp.N(v) <= 0 for v in vals):
            raise ValueError("Hessian is not positive definite")
        return sp.diag(*[1 / sp.sqrt(v) for v in vals])
    Hn = np.array(H.evalf(), dtype=float)
    w, P = np.linalg.eigh(Hn)
    if np.any(w <= 0):
        raise ValueError("Hessian is not positive definite")
    M = P @ np.diag(w ** -0.5) @ P.T
    return sp.Matrix(M)


def _check_half_box(point, label):
    if np.any(np.abs(np.asarray(point, dtype=float)) > 0.5):
        raise ValueError(f"{label} must lie in the half unit cube")


def rescale(psi, a, eps):
    """Static parabolic rescaling around ``a`` at scale ``eps``."""
    if psi.time:
        raise ValueError("use rescale_time for time-dependent phases")
    a = np.atleast_1d(np.asarray(a, dtype=float))
    _check_half_box(a, "base point")
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    z = psi.zsyms
    ae = [_exact(v) for v in a]
    e = _exact(eps)
    at = dict(zip(z, ae))
    H = sp.hessian(psi.expr, z).subs(at)
    M = _inverse_sqrt(H)
    zv = sp.Matrix(z)
    shifted = e * (M * zv) + sp.Matrix(ae)
    grad_a = sp.Matrix([sp.diff(psi.expr, v).subs(at) for v in z])
    new = psi.expr.subs(dict(zip(z, list(shifted))), simultaneous=True)
    expr = (new - psi.expr.subs(at) - e * (grad_a.T * M * zv)[0, 0]) / e ** 2
    expr = sp.expand(expr) if psi.family in ("paraboloid", "perturbed") else expr
    radius = None
    if psi.domain_radius is not None:
        radius = None  # the rescaled domain is an ellipse; NaN detection covers it
    name = f"{psi.name}|a={tuple(float(v) for v in a)},eps={float(eps)}"
    return PhaseSurface(name=name, family=psi.family, d=psi.d, expr=expr, time=False,
                        params=dict(psi.params), domain_radius=radius,
                        lineage=Lineage(psi, tuple(float(v) for v in a), float(eps), "static"),
                        eps0=psi.eps0)


def rescale_time(psi, z0, eps):
    """Rescaling of a time family around z0=(zeta0, t0) at scale eps."""
    if not psi.time:
        raise ValueError("rescale_time needs a time-dependent phase")
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    if z0.size != psi.d:
        raise ValueError(f"z0 must have {psi.d} components")
    _check_half_box(z0, "z0")
    if not 0 < eps <= 0.5:
        raise ValueError("eps must lie in (0, 1/2]")
    z, t = _symbols(psi.d)
    ze = [_exact(v) for v in z0[:-1]]
    t0 = _exact(z0[-1])
    e = _exact(eps)
    at = dict(zip(z, ze))
    at[t] = t0
    H = sp.hessian(psi.expr, z).subs(at)
    M = _inverse_sqrt(H)
    dt0 = sp.diff(psi.expr, t).subs(at)
    if sp.N(dt0) <= 0:
        raise ValueError("time derivative must be positive at z0")
    zv = sp.Matrix(z)
    shifted = e * (M * zv) + sp.Matrix(ze)
    sub = dict(zip(z, list(shifted)))
    sub[t] = t0 + e ** 2 * t / dt0
    grad0 = sp.Matrix([sp.diff(psi.expr, v).subs(at) for v in z])
    new = psi.expr.subs(sub, simultaneous=True)
    expr = (new - psi.expr.subs(at) - e * (grad0.T * M * zv)[0, 0]) / e ** 2
    if psi.family == "affine-time":
        expr = sp.expand(expr)
    name = f"{psi.name}|z0={tuple(float(v) for v in z0)},eps={float(eps)}"
    return PhaseSurface(name=name, family=psi.family, d=psi.d, expr=expr, time=True,
                        params=dict(psi.params),
                        lineage=Lineage(psi, tuple(float(v) for v in z0), float(eps), "time"),
                        eps0=psi.eps0)


def same_surface(a, b):
    """Exact symbolic identity of two phase expressions."""
    return a.time == b.time and a.d == b.d and sp.simplify(a.expr - b.expr) == 0


# ---------------------------------------------------------------- normals

def normal(psi, zeta, t=None):
    """Upward unit normal (-grad psi, 1)/sqrt(1+|grad psi|^2); vectorized over leading axes."""
    g = psi.grad(zeta, t)
    v = np.concatenate([-g, np.ones(g.shape[:-1] + (1,))], axis=-1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


T_EXTENDED = (-2.0, 2.0)
BISECT_TOL = 1e-12


def solve_time(psi, zeta, tau, interval=T_EXTENDED, tol=BISECT_TOL):
    """Vectorized bisection for psi(zeta, t) = tau in t; NaN where tau is out of range."""
    zeta = np.asarray(zeta, dtype=float)
    comps = psi._split(zeta)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), comps[0].shape).copy()
    lo = np.full(tau.shape, interval[0])
    hi = np.full(tau.shape, interval[1])
    flo = psi.values(comps, lo) - tau
    fhi = psi.values(comps, hi) - tau
    ok = np.isfinite(flo) & np.isfinite(fhi) & (flo <= 0) & (fhi >= 0)
    steps = int(math.ceil(math.log2((interval[1] - interval[0]) / tol))) + 1
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        fm = psi.values(comps, mid) - tau
        up = fm > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    out = 0.5 * (lo + hi)
    return np.where(ok, out, np.nan)


def normal_field(psi, xi, strict=True):
    """Normal vector attached to a frequency point xi = (zeta, tau)."""
    xi = np.asarray(xi, dtype=float)
    zeta = xi[..., :-1]
    if not psi.time:
        return normal(psi, zeta)
    t = solve_time(psi, zeta, xi[..., -1])
    bad = np.isnan(t)
    if strict and np.any(bad):
        raise DomainError("normal field undefined at xi")
    tt = np.where(bad, 0.0, t)
    out = normal(psi, zeta, tt)
    if np.any(bad):
        out = np.where(bad[..., None], np.nan, out)
    return out


def transversality_volume(*vectors):
    """k-dimensional volume sqrt(det(G^T G)) spanned by the given vectors."""
    if len(vectors) == 1 and np.ndim(vectors[0]) == 2:
        G = np.asarray(vectors[0], dtype=float).T
    else:
        G = np.stack([np.asarray(v, dtype=float) for v in vectors], axis=-1)
    d, k = G.shape
    if k > d:
        raise ValueError(f"cannot place {k} vectors transversally in dimension {d}")
    det = float(np.linalg.det(G.T @ G))
    return math.sqrt(max(det, 0.0))


def distance_to_span(v, basis):
    """Euclidean distance from v to span(basis) (rows of ``basis``)."""
    v = np.asarray(v, dtype=float)
    B = np.atleast_2d(np.asarray(basis, dtype=float))
    U, s, _ = np.linalg.svd(B.T, full_matrices=False)
    U = U[:, s > 1e-12 * max(s.max(), 1e-300)]  # drop null directions of a rank-deficient basis
    r = v - U @ (U.T @ v)
    return float(np.linalg.norm(r))
