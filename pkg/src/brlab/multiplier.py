"""Frequency-side operators: generic multipliers, T_delta, S_delta,
Bochner-Riesz means, Stein's square function, the spherical square function
and the localized kernel K_delta.

Symbols are evaluated only at lattice points where the input spectrum is
nonzero, so sparse witnesses on large grids stay cheap.  Time-integrated
operators use trapezoid nodes; a node whose symbol vanishes on the whole
spectrum contributes exactly zero and is skipped.
"""
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import grid as G
from .phase import CutoffProfile, PhaseSurface, bump, parse_phase, phi

KINDS = ("t_delta", "s_delta", "bochner_riesz", "stein_square", "spherical_square")
_ALIASES = {"tdelta": "t_delta", "sdelta": "s_delta", "br": "bochner_riesz",
            "bochner-riesz": "bochner_riesz", "stein": "stein_square",
            "spherical": "spherical_square"}
SUPPORT_TOL = 1e-10


def is_dyadic(x):
    if x <= 0:
        return False
    m, _ = math.frexp(x)
    return m == 0.5


@dataclass(frozen=True)
class OperatorSpec:
    kind: str
    phase: Optional[PhaseSurface] = None
    eta: CutoffProfile = field(default_factory=CutoffProfile)
    delta: float = 2.0 ** -4
    alpha: float = 1.0
    t_window: tuple = (-1.0, 1.0)
    n_t: Optional[int] = None
    radius: float = 1.0  # Bochner-Riesz dilation t
    C: float = 1.0  # slab constant inside phi(eta*(tau-psi)/(C*delta))
    refine: int = 3  # node-doubling levels near kinks (stein_square, alpha < 1)

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind in ("t_delta", "s_delta", "spherical_square") and not is_dyadic(self.delta):
            raise ValueError(f"delta must be dyadic, got {self.delta}")
        if kind in ("t_delta", "s_delta") and self.phase is None:
            raise ValueError(f"{kind} needs a phase")
        if kind == "s_delta" and not self.phase.time:
            raise ValueError("s_delta needs a time-dependent phase")
        if kind == "t_delta" and self.phase.time:
            raise ValueError("t_delta needs a static phase")

    def with_delta(self, delta):
        return replace(self, delta=delta)

    def nodes(self):
        """Trapezoid nodes and weights over the time window."""
        a, b = (float(v) for v in self.t_window)
        if not b > a:
            raise ValueError("empty time window")
        need = int(math.ceil((b - a) / (self.delta / 4))) + 1
        n_t = need if self.n_t is None else int(self.n_t)
        if self.kind in ("s_delta", "spherical_square") and (b - a) / (n_t - 1) > self.delta / 4 * (1 + 1e-12):
            raise ValueError("t-resolution insufficient: node spacing exceeds delta/4")
        t = np.linspace(a, b, n_t)
        return t, trapezoid_weights(t)

    def to_string(self):
        kind = {v: k for k, v in _ALIASES.items() if k in ("tdelta", "sdelta", "stein", "spherical")}.get(self.kind, self.kind)
        parts = []
        if self.phase is not None:
            parts.append(f"phase=[{self.phase.name}]")
        parts.append(f"delta={_dyadic_str(self.delta)}")
        if self.kind in ("bochner_riesz", "stein_square"):
            parts.append(f"alpha={self.alpha!r}")
        if self.kind == "bochner_riesz":
            parts.append(f"radius={self.radius!r}")
        if self.kind in ("s_delta", "stein_square", "spherical_square"):
            parts.append(f"t={self.t_window[0]!r}..{self.t_window[1]!r}")
            if self.n_t is not None:
                parts.append(f"nt={self.n_t}")
        if self.eta.kind != "constant-one":
            parts.append("eta=bump")
        if self.C != 1.0:
            parts.append(f"C={self.C!r}")
        return f"{kind}({','.join(parts)})"


def _dyadic_str(x):
    m, e = math.frexp(x)
    return f"2^{e - 1}" if m == 0.5 else repr(x)


def trapezoid_weights(t):
    t = np.asarray(t, dtype=float)
    w = np.zeros_like(t)
    if t.size == 1:
        return w
    dt = np.diff(t)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


# ------------------------------------------------------------ spec grammar

def _split_args(body):
    """Split on top-level commas; brackets and quotes protect nested commas."""
    out, depth, quote, cur = [], 0, None, []
    for ch in body:
        if quote:
            if ch == quote:
                quote = None
            else:
                cur.append(ch)
            continue
        if ch in "\"'":
            quote = ch
        elif ch == "[":
            depth += 1
            if depth > 1:
                cur.append(ch)
        elif ch == "]":
            depth -= 1
            if depth < 0:
                raise ValueError("unbalanced ']' in operator spec")
            if depth > 0:
                cur.append(ch)
        elif ch == "," and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    if depth or quote:
        raise ValueError("unterminated bracket or quote in operator spec")
    if cur or out:
        out.append("".join(cur))
    return [s.strip() for s in out]


def parse_number(v):
    v = str(v).strip()
    if v.startswith("2^"):
        return 2.0 ** int(v[2:])
    if "/" in v:
        a, b = v.split("/", 1)
        return float(a) / float(b)
    return float(v)


def parse_operator(text, d=2, **defaults):
    """OperatorSpec from e.g. ``tdelta(phase=sphere,delta=2^-6)``.

    Keys: phase, delta, alpha, radius, t (window ``a..b``), nt, eta (one|bump), C.
    A phase id containing commas must be wrapped in brackets or quotes.
    """
    text = text.strip()
    if "(" in text:
        if not text.endswith(")"):
            raise ValueError(f"malformed operator spec {text!r}")
        kind, body = text[:-1].split("(", 1)
    else:
        kind, body = text, ""
    kw = dict(defaults)
    for arg in _split_args(body):
        if not arg:
            continue
        if "=" not in arg:
            raise ValueError(f"operator argument {arg!r} is not key=value")
        k, v = (s.strip() for s in arg.split("=", 1))
        if k == "phase":
            kw["phase"] = v
        elif k in ("delta", "alpha", "radius", "C"):
            kw[k] = parse_number(v)
        elif k == "t":
            a, b = v.split("..")
            kw["t_window"] = (parse_number(a), parse_number(b))
        elif k == "nt":
            kw["n_t"] = int(v)
        elif k == "eta":
            kw["eta"] = CutoffProfile({"one": "constant-one", "bump": "smooth-bump-eta"}.get(v, v))
        else:
            raise ValueError(f"unknown operator key {k!r}")
    kind = _ALIASES.get(kind.strip(), kind.strip())
    if isinstance(kw.get("phase"), str):
        kw["phase"] = parse_phase(kw["phase"], d)
    if "phase" not in kw and kind == "t_delta":
        kw["phase"] = parse_phase("paraboloid", d)
    if "phase" not in kw and kind == "s_delta":
        kw["phase"] = parse_phase("affine-time", d)
    if kind == "stein_square" and "t_window" not in kw:
        kw["t_window"] = (0.5, 2.0)
    if kind == "spherical_square" and "t_window" not in kw:
        kw["t_window"] = (0.5, 2.0)
    return OperatorSpec(kind=kind, **kw)


# ------------------------------------------------------------ symbols

def t_delta_symbol(spec, comps):
    zeta, tau = comps[:-1], comps[-1]
    psi = spec.phase.values(zeta)
    eta = spec.eta.eta(comps, 0.0)
    return phi(eta * (tau - psi) / (spec.C * spec.delta))


def s_delta_symbol(spec, comps, t):
    zeta, tau = comps[:-1], comps[-1]
    psi = spec.phase.values(zeta, t)
    eta = spec.eta.eta(comps, t)
    return phi(eta * (tau - psi) / spec.delta)


def spherical_symbol(spec, comps, t):
    r = np.sqrt(sum(c ** 2 for c in comps))
    return phi((1.0 - r / t) / spec.delta)


def br_symbol(alpha, comps, t):
    s = sum(c ** 2 for c in comps) / t ** 2
    return np.where(s < 1, np.clip(1 - s, 0, None) ** alpha, 0.0)


def stein_symbol(alpha, comps, t):
    """d/dt (1 - |xi|^2/t^2)_+^alpha; on the sphere |xi| = t it is the one-sided limit (alpha >= 1)."""
    r2 = sum(c ** 2 for c in comps)
    s = r2 / t ** 2
    inside = s <= 1 if alpha >= 1 else s < 1
    base = np.where(inside, 1 - s, 1.0)
    return np.where(inside, 2 * alpha * r2 * t ** -3.0 * base ** (alpha - 1), 0.0)


# ------------------------------------------------------------ support helpers

class Support:
    """Frequency samples above round-off (``rtol`` times the peak) and their coordinates."""

    def __init__(self, f, rtol=1e-12):
        F = f.frequency().samples
        self.grid = f.grid
        A = np.abs(F)
        self.index = np.nonzero(A > rtol * A.max()) if A.size and A.max() > 0 else np.nonzero(A)
        self.values = F[self.index]
        ax = f.grid.freq_axis
        self.comps = [ax[i] for i in self.index]

    def scatter(self, vals, out=None):
        if out is None:
            out = np.zeros(self.grid.shape, dtype=np.complex128)
        else:
            out[...] = 0
        out[self.index] = vals
        return out


def outside_mass(f, box=0.5):
    """Relative l^2 mass of the spectrum outside ``box * I^d``."""
    F = f.frequency().samples
    tot = float(np.sum(np.abs(F) ** 2))
    if tot == 0:
        return 0.0
    mask = np.zeros(f.grid.shape, dtype=bool)
    for c in f.grid.freq_coords():
        mask = mask | (np.abs(c) > box)
    return float(np.sum(np.abs(F[mask]) ** 2)) / tot


def _check_support(f):
    if outside_mass(f) > SUPPORT_TOL:
        raise ValueError("support precondition: spectrum must lie in the half unit cube")


# ------------------------------------------------------------ operators

def apply_multiplier(f, m):
    """m(D)f for a symbol callable ``m(comps)`` on broadcastable coordinates."""
    sup = Support(f)
    vals = np.asarray(m(sup.comps), dtype=np.complex128)
    vals = np.broadcast_to(vals, sup.values.shape) * sup.values
    return G.transform(G.from_frequency(f.grid, sup.scatter(vals)))


def t_delta(f, spec):
    if spec.kind != "t_delta":
        raise ValueError("spec kind must be t_delta")
    _check_support(f)
    return apply_multiplier(f, lambda c: t_delta_symbol(spec, c))


def _time_square(f, symbol, nodes, weights, extra=None):
    """(sum_j w_j |m_j(D) f|^2)^(1/2) with zero-symbol nodes skipped."""
    sup = Support(f)
    acc = np.zeros(f.grid.shape)
    buf = np.zeros(f.grid.shape, dtype=np.complex128)
    used = 0
    for tj, wj in zip(nodes, weights):
        if wj == 0:
            continue
        m = symbol(sup.comps, tj)
        if not np.any(m):
            continue
        scale = wj * (extra(tj) if extra is not None else 1.0)
        sup.scatter(m * sup.values, buf)
        acc += scale * np.abs(G.fft_inverse(buf)) ** 2
        used += 1
    out = G.from_space(f.grid, np.sqrt(acc))
    object.__setattr__(out, "nodes_used", used)
    return out


def s_delta(f, spec):
    if spec.kind != "s_delta":
        raise ValueError("spec kind must be s_delta")
    _check_support(f)
    t, w = spec.nodes()
    return _time_square(f, lambda c, tj: s_delta_symbol(spec, c, tj), t, w)


def spherical_square(f, spec):
    if spec.kind != "spherical_square":
        raise ValueError("spec kind must be spherical_square")
    a, b = spec.t_window
    if a < 0.5 or b > 2.0:
        raise ValueError("spherical_square window must lie in [1/2, 2]")
    t, w = spec.nodes()
    return _time_square(f, lambda c, tj: spherical_symbol(spec, c, tj), t, w)


def bochner_riesz(f, spec):
    if spec.alpha < 0:
        raise ValueError("alpha must be nonnegative")
    return apply_multiplier(f, lambda c: br_symbol(spec.alpha, c, spec.radius))


def stein_nodes(spec, radii=()):
    """Trapezoid nodes on the window, doubled locally near the kinks |xi| = t."""
    a, b = (float(v) for v in spec.t_window)
    n_t = spec.n_t or 2001
    t = np.linspace(a, b, n_t)
    if spec.alpha < 1 and len(radii):
        h = (b - a) / (n_t - 1)
        for level in range(spec.refine):
            extra = []
            for r in radii:
                near = t[(t >= r - h) & (t <= r + h)]
                if near.size:
                    mids = 0.5 * (near[:-1] + near[1:])
                    extra.append(mids)
            if extra:
                t = np.unique(np.concatenate([t] + extra))
            h /= 2
    return t, trapezoid_weights(t)


def stein_square(f, spec):
    """(sum_j w_j t_j |d_t R^alpha_{t_j} f|^2)^(1/2) with the symbol differentiated exactly."""
    if spec.alpha <= 0:
        raise ValueError("stein_square needs alpha > 0")
    a, b = spec.t_window
    if a <= 0:
        raise ValueError("stein_square window must lie in (0, inf)")
    sup = Support(f)
    radii = ()
    if spec.alpha < 1:
        radii = np.unique(np.round(np.sqrt(sum(c ** 2 for c in sup.comps)), 12))
        radii = radii[(radii > a) & (radii < b)]
        if radii.size > 256:
            radii = ()
    t, w = stein_nodes(spec, radii)
    out = _time_square(f, lambda c, tj: stein_symbol(spec.alpha, c, tj), t, w, extra=lambda tj: tj)
    if spec.alpha < 1:
        object.__setattr__(out, "flag", "singular symbol - quadrature near t=|xi| refined")
    return out


# ------------------------------------------------------------ kernel

def default_cutoff(sigma, center=None):
    """Tensor bump equal to ~1 on the cube of half-side sigma/2 around ``center``."""
    def chi(comps):
        c0 = np.zeros(len(comps)) if center is None else np.asarray(center, dtype=float)
        out = 1.0
        for c, m in zip(comps, c0):
            out = out * bump((c - m) / (2 * sigma))
        return out
    return chi


def kernel(spec, sigma, cutoff=None, grid=None):
    """K = F^{-1}[phi(eta*(tau-psi)/(C*delta)) * cutoff] in continuous normalization.

    K(x) = (2 pi)^-d int m(xi) exp(i x.xi) d xi, approximated by the lattice sum.
    """
    if spec.kind != "t_delta":
        raise ValueError("kernel is defined for t_delta specs")
    d = spec.phase.d
    if grid is None:
        h = spec.delta / 8  # generous period: keeps the fitted maximum off the cell edge
        n = 1 << int(math.ceil(math.log2(2 / h)))
        grid = G.make_grid(d, n, h)
    if grid.P < 8 * math.pi / spec.delta * (1 - 1e-12):
        raise ValueError("kernel wraps: period must be at least 8*pi/delta")
    chi = default_cutoff(sigma) if cutoff is None else cutoff
    comps = grid.freq_coords()
    cvals = np.broadcast_to(np.asarray(chi(comps), dtype=float), grid.shape)
    nz = np.nonzero(cvals)
    M = np.zeros(grid.shape, dtype=np.complex128)
    if nz[0].size:
        pts = [grid.freq_axis[i] for i in nz]
        M[nz] = t_delta_symbol(spec, pts) * cvals[nz]
    scale = (grid.h / (2 * math.pi)) ** d * grid.n ** d
    return G.from_space(grid, scale * G.fft_inverse(M))


@dataclass
class DecayFit:
    C: float
    residuals: np.ndarray  # log2 of |K| / envelope at every sample (<= log2 C)
    argmax: tuple


def kernel_decay_fit(K, delta, sigma, M_eff=4):
    """Smallest C with |K(x)| <= C delta sigma^(d-1) (1+delta|x|)^-M_eff on all samples."""
    g = K.grid
    r2 = sum(c ** 2 for c in g.space_coords())
    env = delta * sigma ** (g.d - 1) * (1 + delta * np.sqrt(r2)) ** (-float(M_eff))
    q = np.abs(K.space().samples) / env
    C = float(q.max())
    with np.errstate(divide="ignore"):
        res = np.log2(q)
    return DecayFit(C, res, tuple(int(i) for i in np.unravel_index(np.argmax(q), q.shape)))


def slab_prediction(spec, sigma, cutoff=None):
    """(2 pi)^-d * delta * int(phi) * int cutoff(zeta, psi(zeta)) d zeta: the K(0) slab estimate."""
    from scipy import integrate

    d = spec.phase.d
    chi = default_cutoff(sigma) if cutoff is None else cutoff
    phi_int = integrate.quad(lambda s: float(phi(s)), -2, 2)[0]
    psi = spec.phase
    lim = 2 * sigma

    def surf(*z):
        zz = [np.asarray(v, dtype=float) for v in z]
        return float(chi(zz + [psi.values(zz)]))

    if d == 2:
        val = integrate.quad(lambda z: surf(z), -lim, lim, limit=200)[0]
    elif d == 3:
        val = integrate.dblquad(lambda y, x: surf(x, y), -lim, lim, -lim, lim)[0]
    else:
        raise ValueError("slab_prediction implemented for d = 2, 3")
    return (2 * math.pi) ** (-d) * spec.delta * spec.C * phi_int * val
