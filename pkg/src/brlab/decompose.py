"""Dyadic cubes, scattered modulation sums, direction buckets and the
multi-scale decomposition as a certificate-producing algorithm.

Frequency cubes at scale ``sigma`` are half-open boxes of side ``2*sigma``
tiling ``[-1, 1)^d``; cube ``c`` (an integer tuple) covers
``-1 + 2*sigma*c <= xi < -1 + 2*sigma*(c+1)`` coordinatewise.  Spatial cubes
at scale ``sigma`` have side ``2/sigma`` and are centred on ``(2/sigma) Z^d``.
"""
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, signal

from . import grid as G
from ._kernels import cube_table, trig_eval
from .multiplier import Support, s_delta_symbol, t_delta_symbol
from .phase import distance_to_span, normal_field, plateau, transversality_volume

FREQUENCY = "frequency"
SPATIAL = "spatial"


# =============================================================== cubes

@dataclass(frozen=True, order=True)
class DyadicCube:
    sigma: float
    index: tuple
    kind: str = FREQUENCY

    @property
    def d(self):
        return len(self.index)

    @property
    def side(self):
        return 2 * self.sigma if self.kind == FREQUENCY else 2 / self.sigma

    @property
    def lo(self):
        c = np.asarray(self.index, dtype=float)
        if self.kind == FREQUENCY:
            return -1 + 2 * self.sigma * c
        return (2 / self.sigma) * c - 1 / self.sigma

    @property
    def hi(self):
        return self.lo + self.side

    @property
    def center(self):
        return self.lo + self.side / 2

    def corners(self):
        lo, hi = self.lo, self.hi
        return np.array([[hi[i] if b else lo[i] for i, b in enumerate(bits)]
                         for bits in itertools.product((0, 1), repeat=self.d)])

    def sample_points(self):
        """Corners and center: the points used for transversality checks."""
        return np.vstack([self.corners(), self.center[None]])

    def contains(self, x, closed=True):
        x = np.asarray(x, dtype=float)
        if closed:
            return bool(np.all(x >= self.lo - 1e-12) and np.all(x <= self.hi + 1e-12))
        return bool(np.all(x >= self.lo) and np.all(x < self.hi))

    def children(self, sigma_child):
        r = self.sigma / sigma_child
        if abs(r - round(r)) > 1e-9 or r < 1:
            raise ValueError("child scale must divide the parent scale dyadically")
        r = int(round(r))
        base = [i * r for i in self.index]
        return [DyadicCube(sigma_child, tuple(b + o for b, o in zip(base, off)), self.kind)
                for off in itertools.product(range(r), repeat=self.d)]

    def parent(self, sigma_parent):
        r = int(round(sigma_parent / self.sigma))
        return DyadicCube(sigma_parent, tuple(i // r for i in self.index), self.kind)

    def label(self):
        return "(" + ",".join(str(i) for i in self.index) + ")"


def cube_distance(a, b):
    """Euclidean distance between two closed cubes."""
    gap = np.maximum(0.0, np.maximum(a.lo - b.hi, b.lo - a.hi))
    return float(np.linalg.norm(gap))


@dataclass(frozen=True)
class CubeSet:
    sigma: float
    d: int

    @property
    def per_axis(self):
        return int(round(1 / self.sigma))

    def __len__(self):
        return self.per_axis ** self.d

    def __iter__(self):
        for idx in itertools.product(range(self.per_axis), repeat=self.d):
            yield DyadicCube(self.sigma, idx)

    @property
    def cubes(self):
        return list(self)

    def flat(self, index):
        m = self.per_axis
        out = 0
        for i in index:
            out = out * m + int(i)
        return out

    def unflat(self, k):
        m = self.per_axis
        idx = []
        for _ in range(self.d):
            idx.append(k % m)
            k //= m
        return DyadicCube(self.sigma, tuple(reversed(idx)))


def _check_sigma(sigma):
    m, _ = math.frexp(sigma)
    if m != 0.5 or sigma > 1:
        raise ValueError(f"sigma must be a dyadic number <= 1, got {sigma}")


def _check_alignment(grid, sigma):
    r = sigma / grid.h
    if r < 1 or abs(r - round(r)) > 1e-9:
        raise ValueError("cube/lattice misalignment: sigma must be a multiple of h")


def cubes_at_scale(sigma, d=2, grid=None):
    _check_sigma(sigma)
    if grid is not None:
        _check_alignment(grid, sigma)
        d = grid.d
    return CubeSet(float(sigma), int(d))


def axis_cube_index(coord, sigma):
    """Integer cube coordinate of frequency values (-1 outside [-1, 1))."""
    m = int(round(1 / sigma))
    k = np.floor((np.asarray(coord, dtype=float) + 1) / (2 * sigma) + 1e-9).astype(np.int64)
    return np.where((k >= 0) & (k < m), k, -1)


def point_cube_ids(comps, sigma):
    """Flat cube ids for a list of coordinate arrays (-1 outside I^d)."""
    m = int(round(1 / sigma))
    out = np.zeros(np.broadcast_shapes(*[np.shape(c) for c in comps]), dtype=np.int64)
    bad = np.zeros(out.shape, dtype=bool)
    for c in comps:
        k = axis_cube_index(c, sigma)
        bad |= k < 0
        out = out * m + np.where(k < 0, 0, k)
    return np.where(bad, -1, out)


def cube_restrict(f, q):
    """f_q: keep frequency samples inside the half-open cube q."""
    g = f.grid
    _check_alignment(g, q.sigma)
    F = f.frequency().samples
    mask = np.ones(g.shape, dtype=bool)
    for ax, c in enumerate(g.freq_coords()):
        k = axis_cube_index(c, q.sigma)
        mask = mask & (k == q.index[ax])
    return G.from_frequency(g, np.where(mask, F, 0))


def restrict_all(f, sigma):
    """Dict cube -> f_q (space representation) for every cube meeting the spectrum."""
    g = f.grid
    _check_alignment(g, sigma)
    sup = Support(f)
    ids = point_cube_ids(sup.comps, sigma)
    cs = CubeSet(sigma, g.d)
    out = {}
    for k in np.unique(ids):
        if k < 0:
            continue
        sel = ids == k
        F = np.zeros(g.shape, dtype=np.complex128)
        F[tuple(i[sel] for i in sup.index)] = sup.values[sel]
        out[cs.unflat(int(k))] = G.from_frequency(g, F)
    return out


def spatial_cube(x, sigma):
    """The spatial cube of side 2/sigma containing x."""
    x = np.asarray(x, dtype=float)
    idx = np.floor((x + 1 / sigma) * sigma / 2).astype(int)
    return DyadicCube(float(sigma), tuple(int(i) for i in idx), SPATIAL)


# =============================================================== Rubio check

def rubio_check(f, sigma, p=4):
    """(sum_q ||f_q||_p^p)^(1/p) and ||f||_p over the cubes of side 2*sigma."""
    if p < 2:
        raise ValueError("rubio_check needs p >= 2")
    g = f.grid
    _check_alignment(g, sigma)
    sup = Support(f)
    ids = point_cube_ids(sup.comps, sigma)
    uniq = [k for k in np.unique(ids) if k >= 0]
    cell = g.dx ** g.d
    acc = 0.0
    batch = max(1, int(2 ** 24 // g.size))
    for s in range(0, len(uniq), batch):
        chunk = uniq[s:s + batch]
        F = np.zeros((len(chunk),) + g.shape, dtype=np.complex128)
        for j, k in enumerate(chunk):
            sel = ids == k
            F[(j,) + tuple(i[sel] for i in sup.index)] = sup.values[sel]
        axes = tuple(range(1, g.d + 1))
        from scipy import fft as sfft
        fq = sfft.fftshift(sfft.ifftn(sfft.ifftshift(F, axes=axes), axes=axes, workers=-1), axes=axes)
        acc += float(np.sum(np.abs(fq) ** p) * cell)
    lhs = acc ** (1 / p)
    rhs = G.lp_norm(f.space(), p)
    return lhs, rhs


# =============================================================== trig polys

@dataclass(frozen=True)
class TrigPoly:
    """F(x) = sum_k coef[k] exp(i x . freqs[k]) (exact point evaluation)."""
    freqs: np.ndarray
    coef: np.ndarray

    def __call__(self, points):
        return trig_eval(np.atleast_2d(points), self.freqs, self.coef)

    @property
    def sup_bound(self):
        return float(np.sum(np.abs(self.coef)))

    def extent(self):
        if self.freqs.shape[0] == 0:
            return np.zeros(self.freqs.shape[1])
        return self.freqs.max(axis=0) - self.freqs.min(axis=0)


def trig_poly(f, symbol=None):
    """Sparse trigonometric form of a grid function, optionally after a multiplier."""
    sup = Support(f)
    vals = sup.values
    if symbol is not None:
        vals = vals * symbol(sup.comps)
    keep = vals != 0
    freqs = np.stack([c[keep] for c in sup.comps], axis=-1)
    return TrigPoly(freqs, vals[keep] / f.grid.size)


# =============================================================== scattered sums

@lru_cache(maxsize=4)
def _bump_transform_table(wmax, step=0.01, ns=8001):
    """g(w) = int a(s) cos(w s) ds and |g'(w)| bound for the plateau bump a."""
    s = np.linspace(-math.pi, math.pi, ns)
    a = plateau(s, 1.0, math.pi)
    ws = np.arange(-wmax, wmax + step / 2, step)
    wts = np.full(ns, s[1] - s[0])
    wts[0] = wts[-1] = wts[0] / 2
    g = np.empty(ws.size)
    gp = np.empty(ws.size)
    for i in range(0, ws.size, 512):
        W = ws[i:i + 512, None] * s[None, :]
        g[i:i + 512] = np.cos(W) @ (a * wts)
        gp[i:i + 512] = -np.sin(W) @ (s * a * wts)
    return ws, g, gp


@lru_cache(maxsize=None)
def scattered_constants(d, M, L=80):
    """C_M and the one-dimensional envelope e1(m) = sup_{|u|<=1} |a_m(u)|, m in [-L, L].

    a_m(u) are the Fourier coefficients of a(u) a(v) exp(i u v) in v; the
    envelope sup is taken on a fine w-grid plus a first-derivative correction.
    """
    step = 0.01
    ws, g, gp = _bump_transform_table(L + 1.5, step)
    e1 = np.empty(2 * L + 1)
    for j, m in enumerate(range(-L, L + 1)):
        sel = (ws >= m - 1 - 1e-9) & (ws <= m + 1 + 1e-9)
        e1[j] = (np.max(np.abs(g[sel])) + 0.5 * step * np.max(np.abs(gp[sel]))) / (2 * math.pi)
    ax = np.arange(-L, L + 1)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    r = np.sqrt(sum(x.astype(float) ** 2 for x in grids))
    env = np.ones(r.shape)
    for x in grids:
        env = env * e1[x + L]
    C_M = float(np.max(env * (1 + r) ** M))
    return C_M, e1


def default_M(d):
    return 2 * d + 2


@dataclass(frozen=True)
class ScatteredWeights:
    d: int
    sigma: float
    M: int
    rho: float  # truncation radius in units of 1/sigma
    C_M: float
    offsets: np.ndarray  # integer lattice points m, |m| <= rho; shift l = m / sigma
    A: np.ndarray
    B_offsets: np.ndarray
    B: np.ndarray
    tail_factor: float  # sum_{|m|>rho} C_M (1+|m|)^-M (rigorous upper bound)

    @property
    def shifts(self):
        return self.offsets / self.sigma

    @property
    def B_shifts(self):
        return self.B_offsets / self.sigma


def _lattice_tail(d, M, rho):
    """Upper bound of sum_{m in Z^d, |m|>rho} (1+|m|)^-M."""
    R = 4 * rho + 10
    ax = np.arange(-int(math.ceil(R)), int(math.ceil(R)) + 1)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    r = np.sqrt(sum(x.astype(float) ** 2 for x in grids))
    near = float(np.sum(((1 + r) ** -float(M))[(r > rho) & (r <= R)]))
    sphere = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    c = math.sqrt(d) / 2
    far = sphere * integrate.quad(lambda t: t ** (d - 1) * (1 + t - c) ** (-M), R - c, np.inf)[0]
    return near + far


@lru_cache(maxsize=None)
def scattered_weights(d, sigma, M=None, rho=12.0):
    M = default_M(d) if M is None else int(M)
    C_M, _ = scattered_constants(d, M)
    n = int(math.floor(rho))
    ax = np.arange(-n, n + 1)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack([x.ravel() for x in grids], axis=-1)
    r = np.linalg.norm(pts, axis=1)
    keep = r <= rho
    A_box = np.where(r <= rho, C_M * (1 + r) ** -float(M), 0.0).reshape(grids[0].shape)
    B_box = signal.fftconvolve(A_box, A_box)
    bax = np.arange(-2 * n, 2 * n + 1)
    bgrids = np.meshgrid(*([bax] * d), indexing="ij")
    bpts = np.stack([x.ravel() for x in bgrids], axis=-1)
    bvals = B_box.ravel()
    bkeep = bvals > 1e-14 * bvals.max()
    tail = C_M * _lattice_tail(d, M, rho)
    return ScatteredWeights(d, float(sigma), M, float(rho), C_M, pts[keep].astype(float),
                            (C_M * (1 + r) ** -float(M))[keep], bpts[bkeep].astype(float),
                            bvals[bkeep], tail)


@dataclass(frozen=True)
class ScatteredValue:
    value: float
    tail: float  # bound on the truncated part: tail_factor * sup|F|


def _as_trig(F):
    return F if isinstance(F, TrigPoly) else trig_poly(F)


def check_band_limit(F, sigma, tol=1e-10):
    tp = _as_trig(F)
    if tp.coef.size == 0:
        return tp
    w = np.abs(tp.coef) ** 2
    tot = w.sum()
    keep = w > tol * tot
    ext = tp.freqs[keep].max(axis=0) - tp.freqs[keep].min(axis=0)
    if np.any(ext > 2 * sigma * (1 + 1e-9)):
        raise ValueError("band-limit precondition: spectrum does not fit in a cube of side 2*sigma")
    return tp


def scattered_sum(F, sigma, x0, M=None, R_tr=None, doubled=False, grid=None):
    """[F]_sigma(x0) = sum_l A_l |F(x0 - l)| over l in sigma^-1 Z^d, |l| <= R_tr.

    ``doubled=True`` returns |||F|||_sigma(x0) built from A*A instead.
    ``F`` is a GridFunction or a TrigPoly band-limited to a cube of side 2*sigma.
    """
    tp = check_band_limit(F, sigma)
    d = tp.freqs.shape[1] if tp.freqs.size else len(np.atleast_1d(x0))
    P = grid.P if grid is not None else (F.grid.P if isinstance(F, G.GridFunction) else None)
    rho = 12.0 if R_tr is None else R_tr * sigma
    if P is not None and rho / sigma > P / 2 * (1 + 1e-12):
        raise ValueError("truncation radius exceeds half a period (wrap-around)")
    W = scattered_weights(d, float(sigma), M, float(rho))
    if tp.coef.size == 0:
        return ScatteredValue(0.0, 0.0)
    x0 = np.asarray(x0, dtype=float)
    if doubled:
        pts = x0[None, :] - W.B_shifts
        val = float(np.dot(W.B, np.abs(tp(pts))))
        return ScatteredValue(val, float(np.sum(W.A)) * W.tail_factor * tp.sup_bound)
    pts = x0[None, :] - W.shifts
    val = float(np.dot(W.A, np.abs(tp(pts))))
    return ScatteredValue(val, W.tail_factor * tp.sup_bound)


def scattered_many(polys, sigma, x0, M=None, rho=12.0, doubled=False):
    """Scattered sums of several cube pieces sharing one evaluation point."""
    if not polys:
        return np.zeros(0), np.zeros(0)
    d = len(np.atleast_1d(x0))
    W = scattered_weights(d, float(sigma), M, float(rho))
    x0 = np.asarray(x0, dtype=float)
    shifts, wts = (W.B_shifts, W.B) if doubled else (W.shifts, W.A)
    pts = x0[None, :] - shifts
    freqs = np.concatenate([p.freqs for p in polys])
    coef = np.concatenate([p.coef for p in polys])
    ids = np.concatenate([np.full(p.coef.size, j) for j, p in enumerate(polys)])
    tab = cube_table(pts, freqs, coef, ids, len(polys))
    vals = wts @ np.abs(tab)
    tails = np.array([p.sup_bound for p in polys]) * W.tail_factor
    if doubled:
        tails = tails * float(np.sum(W.A))
    return vals, tails


# =============================================================== normals of cubes

def cube_normal(psi, q):
    return normal_field(psi, q.center)


def _normals_at(psi, pts):
    return normal_field(psi, np.asarray(pts, dtype=float))


def tuple_volume(psi, cubes):
    """min of Vol(n(xi_1),...,n(xi_k)) over corner/center samples xi_i of each cube."""
    ns = [_normals_at(psi, q.sample_points()) for q in cubes]
    best = math.inf
    for combo in itertools.product(*[range(len(n)) for n in ns]):
        v = transversality_volume(*[ns[i][j] for i, j in enumerate(combo)])
        best = min(best, v)
    return best


def plane_distance(v, basis):
    """Distance from v to span of the rows of ``basis`` via least squares."""
    B = np.atleast_2d(np.asarray(basis, dtype=float))
    coef, *_ = np.linalg.lstsq(B.T, v, rcond=None)
    return float(np.linalg.norm(v - B.T @ coef))


# =============================================================== direction buckets

@dataclass(frozen=True)
class DirectionBucket:
    sigma: float
    theta: tuple
    members: tuple  # DyadicCubes

    def __len__(self):
        return len(self.members)


def near_surface(cubes, psi, C=2.0):
    """Cubes whose center lies within C*sigma of the graph (static) or of the swept family (time)."""
    out = []
    for q in cubes:
        c = q.center
        if psi.time:
            try:
                normal_field(psi, c)
            except ValueError:
                continue
            out.append(q)
        else:
            zeta = c[:-1]
            if psi.domain_radius is not None and np.linalg.norm(zeta) >= psi.domain_radius:
                continue
            if abs(c[-1] - float(psi.eval(zeta))) <= C * q.sigma:
                out.append(q)
    return out


def _snap(v, sigma):
    s = np.round(np.asarray(v) / sigma) * sigma
    nrm = np.linalg.norm(s)
    return s / nrm if nrm > 0 else np.asarray(v)


def direction_buckets(cubes, psi, C_bucket=2.0):
    """Greedy partition of cubes (lexicographic order) by normal direction.

    Each bucket's representative is the first member's normal snapped to the
    sigma-grid on the sphere; members lie within C_bucket*sigma of it.
    """
    cubes = sorted(cubes, key=lambda q: q.index)
    if not cubes:
        return []
    sigma = cubes[0].sigma
    normals = {q: cube_normal(psi, q) for q in cubes}
    left = list(cubes)
    out = []
    while left:
        first = left[0]
        theta = _snap(normals[first], sigma)
        if np.linalg.norm(normals[first] - theta) > C_bucket * sigma:
            theta = normals[first]
        members = [q for q in left if np.linalg.norm(normals[q] - theta) <= C_bucket * sigma]
        out.append(DirectionBucket(sigma, tuple(float(v) for v in theta), tuple(members)))
        chosen = set(members)
        left = [q for q in left if q not in chosen]
    return out


def square_cube_values(f, spec, sigma, points):
    """S_delta f_q at the given points, for every cube q: array (npoints, ncubes)."""
    sup = Support(f)
    ids = point_cube_ids(sup.comps, sigma)
    cs = CubeSet(sigma, f.grid.d)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    acc = np.zeros((points.shape[0], len(cs)))
    t, w = spec.nodes()
    n = f.grid.size
    freqs = np.stack(sup.comps, axis=-1)
    for tj, wj in zip(t, w):
        if wj == 0:
            continue
        m = s_delta_symbol(spec, sup.comps, tj)
        nz = (m != 0) & (ids >= 0)
        if not np.any(nz):
            continue
        tab = cube_table(points, freqs[nz], (m * sup.values)[nz] / n, ids[nz], len(cs))
        acc += wj * np.abs(tab) ** 2
    return np.sqrt(acc), cs


def bucket_square(f, bucket, spec):
    """(sum_{q in bucket} |S_delta f_q|^2)^(1/2) and S_delta of the bucket sum, on the grid."""
    from .multiplier import s_delta

    pieces = [cube_restrict(f, q) for q in bucket.members]
    acc = np.zeros(f.grid.shape)
    total = G.zeros(f.grid)
    for p in pieces:
        acc += np.abs(s_delta(p, spec).samples) ** 2
        total = G.from_frequency(f.grid, total.samples + p.samples)
    frak = G.from_space(f.grid, np.sqrt(acc))
    return frak, s_delta(total, spec)


def bucket_constant(frak, whole, floor=1e-12):
    """max_x S_delta(sum f_q)(x) / frak(x) over points where frak is not negligible."""
    a = np.abs(whole.samples)
    b = np.abs(frak.samples)
    mask = b > floor * max(b.max(), 1e-300)
    if not np.any(mask):
        return 0.0
    return float(np.max(a[mask] / b[mask]))


# =============================================================== certificates

@dataclass(frozen=True)
class DecompConfig:
    """Constants of the decomposition (theory-scale defaults; DESK below is the desk-scale set)."""
    A: Optional[float] = None  # max-branch threshold; None -> 100^d
    sep: float = 10.0  # far-cube separation in units of sigma_1
    C_normal: float = 10.0  # neighbor set: dist(n(q), Pi) <= C_normal * sigma_k
    c_trans: float = 0.1  # transversality: Vol >= c_trans * sigma_1...sigma_k
    major_exp: Optional[float] = None  # Lambda threshold sigma_k^(major_exp); None -> k*d
    ratio_max: float = 1e-2  # require delta <= ratio_max * sigma_1^2
    M: Optional[int] = None
    rho: float = 12.0

    def A_for(self, d):
        return 100.0 ** d if self.A is None else float(self.A)


# constants that make both branches reachable on desk-size grids
DESK = DecompConfig(A=1.5, sep=2.0, C_normal=10.0, c_trans=0.1, ratio_max=1.0, rho=8.0)


@dataclass
class Certificate:
    stage: int
    x: tuple
    branch: str
    sigmas: tuple
    values: dict = field(default_factory=dict)  # cube label -> measured value
    dominant: tuple = ()
    partner: Optional[tuple] = None
    bound: float = 0.0
    lhs: float = 0.0
    constants: dict = field(default_factory=dict)
    # stage >= 2 fields
    x0: Optional[tuple] = None
    Q: Optional[DyadicCube] = None
    inputs: tuple = ()
    Lambda: tuple = ()
    plane: Optional[np.ndarray] = None
    neighbors: tuple = ()
    neighbor_dist: dict = field(default_factory=dict)
    transversal: tuple = ()  # ((cubes...), vol)
    borderline: tuple = ()
    terms: dict = field(default_factory=dict)

    @property
    def margin(self):
        return math.inf if self.lhs == 0 else self.bound / self.lhs


def _argmax_lex(keys, vals):
    """Index of the largest value; ties go to the lexicographically smallest key."""
    best = None
    for i, (k, v) in enumerate(zip(keys, vals)):
        if best is None or v > vals[best] or (v == vals[best] and k < keys[best]):
            best = i
    return best


def cube_values_at(f, spec, sigma, x):
    """|T_delta f_q(x)| for every cube at scale sigma (dict keyed by cube)."""
    sup = Support(f)
    sym = t_delta_symbol(spec, sup.comps)
    ids = point_cube_ids(sup.comps, sigma)
    nz = (sym != 0) & (ids >= 0)
    cs = CubeSet(sigma, f.grid.d)
    freqs = np.stack([c[nz] for c in sup.comps], axis=-1)
    tab = cube_table(np.atleast_2d(x), freqs, (sym * sup.values)[nz] / f.grid.size, ids[nz], len(cs))
    vals = np.abs(tab[0])
    active = np.unique(ids[nz])
    return {cs.unflat(int(k)): float(vals[k]) for k in active}


def _dichotomy(keys, vals, dist, sep_len, A, sigma, d):
    """Shared scale-1 logic for cubes (T_delta) and direction buckets (S_delta)."""
    total = float(sum(vals))
    i_star = _argmax_lex(keys, vals)
    m_star = vals[i_star] if keys else 0.0
    cons = {"A": A, "sep": sep_len}
    if total <= A * m_star:
        factor = total / m_star if m_star > 0 else 0.0
        cons["factor"] = factor
        return "max", i_star, None, A * m_star, total, cons
    near = [i for i in range(len(keys)) if dist(i_star, i) < sep_len and vals[i] > 0]
    far = [i for i in range(len(keys)) if dist(i_star, i) >= sep_len and vals[i] > 0]
    if far and len(near) < A:
        fv = [vals[i] for i in far]
        j = far[_argmax_lex([keys[i] for i in far], fv)]
        C_eff = len(far) * sigma ** (d - 1) / (1 - len(near) / A)
        bound = C_eff * sigma ** (-(d - 1)) * math.sqrt(vals[j] * m_star)
        cons.update(C_eff=C_eff, N_near=len(near), N_far=len(far))
        return "bilinear", i_star, j, bound, total, cons
    # pigeonhole unavailable (only possible when A is below the near-cube count)
    n_act = sum(1 for v in vals if v > 0)
    cons.update(factor=total / m_star, saturated=True, N_active=n_act)
    return "max", i_star, None, n_act * m_star, total, cons


def decompose_scale1(f, spec, sigma1, x, cfg=DecompConfig()):
    """First stage at the point x: max branch or bilinear branch, with margin."""
    g = f.grid
    _check_alignment(g, sigma1)
    if spec.kind not in ("t_delta", "s_delta"):
        raise ValueError("decomposition is defined for t_delta and s_delta")
    if spec.delta > cfg.ratio_max * sigma1 ** 2 * (1 + 1e-12):
        raise ValueError(f"precondition: delta must be <= {cfg.ratio_max:g} * sigma1^2")
    d = g.d
    A = cfg.A_for(d)
    x = np.asarray(x, dtype=float)
    if spec.kind == "t_delta":
        table = cube_values_at(f, spec, sigma1, x)
        keys = sorted(table)
        vals = [table[q] for q in keys]
        labels = [q.index for q in keys]
        dist = lambda i, j: cube_distance(keys[i], keys[j])
        sep_len = cfg.sep * sigma1
    else:
        vals_all, cs = square_cube_values(f, spec, sigma1, x[None])
        active = [cs.unflat(k) for k in np.nonzero(vals_all[0])[0]]
        buckets = direction_buckets(active, spec.phase)
        keys = buckets
        vals = [float(np.sqrt(sum(vals_all[0, cs.flat(q.index)] ** 2 for q in b.members))) for b in buckets]
        labels = [tuple(b.members[0].index) for b in buckets]
        dist = lambda i, j: float(np.linalg.norm(np.subtract(keys[i].theta, keys[j].theta)))
        sep_len = cfg.sep * sigma1
    branch, i_star, j, bound, total, cons = _dichotomy(labels, vals, dist, sep_len, A, sigma1, d)
    values = {_label(k): v for k, v in zip(keys, vals)}
    cert = Certificate(stage=1, x=tuple(float(v) for v in x), branch=branch, sigmas=(sigma1,),
                       values=values, dominant=(_label(keys[i_star]),) if keys else (),
                       partner=_label(keys[j]) if j is not None else None,
                       bound=float(bound), lhs=float(total), constants=cons)
    return cert


def _label(k):
    if isinstance(k, DyadicCube):
        return k.index
    return ("bucket",) + tuple(k.members[0].index)


def _piece_polys(f, spec, cubes):
    """TrigPoly of T_delta f_q for each cube (may be empty)."""
    sup = Support(f)
    sym = t_delta_symbol(spec, sup.comps)
    vals = sym * sup.values / f.grid.size
    out = []
    sigma = cubes[0].sigma
    ids = point_cube_ids(sup.comps, sigma)
    cs = CubeSet(sigma, f.grid.d)
    freqs = np.stack(sup.comps, axis=-1)
    for q in cubes:
        sel = (ids == cs.flat(q.index)) & (vals != 0)
        out.append(TrigPoly(freqs[sel], vals[sel]))
    return out


def decompose_step(f, spec, sigmas, cubes_in, Q, x, cfg=DecompConfig()):
    """Stage k = len(cubes_in): split the k-fold product at x in Q into three buckets."""
    k = len(cubes_in)
    sigmas = tuple(float(s) for s in sigmas)
    if len(sigmas) != k:
        raise ValueError("need one scale per stage: sigma_1..sigma_k")
    if k < 2:
        raise ValueError("stage k >= 2; use decompose_scale1 for the first stage")
    g = f.grid
    d = g.d
    psi = spec.phase
    sk = sigmas[-1]
    _check_alignment(g, sk)
    for q in cubes_in:
        if abs(q.sigma - sigmas[-2]) > 1e-15:
            raise ValueError("input cubes must sit at scale sigma_{k-1}")
    vol_in = tuple_volume(psi, cubes_in)
    need_in = cfg.c_trans * float(np.prod(sigmas[:-1]))
    if vol_in < need_in:
        raise ValueError(f"non-transversal input tuple: Vol {vol_in:.3g} < {need_in:.3g}")
    if Q.kind != SPATIAL or abs(Q.sigma - sk) > 1e-15:
        raise ValueError("Q must be a spatial cube at scale sigma_k")
    x = np.asarray(x, dtype=float)
    if not Q.contains(x):
        raise ValueError("x outside Q")
    x0 = Q.center
    fams = [q.children(sk) for q in cubes_in]
    polys = [_piece_polys(f, spec, fam) for fam in fams]
    S = []
    for fam_polys in polys:
        vals, _ = scattered_many(fam_polys, sk, x0, cfg.M, cfg.rho)
        S.append(vals)
    stars = [int(_argmax_lex([q.index for q in fam], list(s))) for fam, s in zip(fams, S)]
    m_star = max(float(s[i]) for s, i in zip(S, stars))
    exp = k * d if cfg.major_exp is None else cfg.major_exp
    thr = sk ** exp * m_star
    Lam = [tuple(j for j in range(len(fam)) if S[i][j] >= thr and S[i][j] > 0)
           for i, fam in enumerate(fams)]
    star_cubes = [fam[i] for fam, i in zip(fams, stars)]
    nrm = np.array([cube_normal(psi, q) for q in star_cubes])
    need_out = cfg.c_trans * float(np.prod(sigmas))
    neighbors, ndist = [], {}
    in_N = []
    for i, fam in enumerate(fams):
        flags = []
        for q in fam:
            dist = distance_to_span(cube_normal(psi, q), nrm)
            ok = dist <= cfg.C_normal * sk
            flags.append(ok)
            if ok:
                neighbors.append(q)
                ndist[q.index] = dist
        in_N.append(flags)
    trans, border = {}, {}
    conf_tuples, trans_tuples = [], []
    for tup in itertools.product(*Lam):
        out_i = [i for i, j in enumerate(tup) if not in_N[i][j]]
        if not out_i:
            conf_tuples.append(tup)
            continue
        i0 = out_i[0]
        q = fams[i0][tup[i0]]
        key = (i0, tup[i0])
        if key not in trans and key not in border:
            v = tuple_volume(psi, star_cubes + [q])
            (trans if v >= need_out else border)[key] = v
        trans_tuples.append((tup, key))
    # point values at x for the product, the confined sum and the transversal sums
    vals_x = [np.array([complex(p(x[None])[0]) if p.coef.size else 0j for p in fp]) for fp in polys]
    prod_all = complex(np.prod([v.sum() for v in vals_x]))
    conf = complex(sum(np.prod([vals_x[i][j] for i, j in enumerate(t)]) for t in conf_tuples))
    N = max(len(L) for L in Lam) if Lam else 0
    factor = k * N ** (k - 1) * sk ** (-d * k * k / (k + 1))
    star_prod = float(np.prod([S[i][stars[i]] for i in range(k)]))
    t_sum = sum((star_prod * S[i0][j]) ** (k / (k + 1)) for (i0, j) in trans)
    b_sum = sum((star_prod * S[i0][j]) ** (k / (k + 1)) for (i0, j) in border)
    max_term = m_star ** k
    bound = max_term + abs(conf) + factor * (t_sum + b_sum)
    cert = Certificate(
        stage=k, x=tuple(float(v) for v in x), branch="split", sigmas=sigmas,
        values={(i,) + fams[i][j].index: float(S[i][j]) for i in range(k) for j in range(len(fams[i]))},
        dominant=tuple(q.index for q in star_cubes), bound=float(bound), lhs=abs(prod_all),
        constants={"c": cfg.c_trans, "C": cfg.C_normal, "threshold": thr, "factor": factor,
                   "vol_in": vol_in, "need_out": need_out, "M": cfg.M or default_M(d), "rho": cfg.rho},
        x0=tuple(float(v) for v in x0), Q=Q, inputs=tuple(cubes_in),
        Lambda=tuple(tuple(fams[i][j].index for j in L) for i, L in enumerate(Lam)),
        plane=nrm, neighbors=tuple(q.index for q in neighbors), neighbor_dist=ndist,
        transversal=tuple((tuple(q.index for q in star_cubes) + (fams[i0][j].index,), v)
                          for (i0, j), v in sorted(trans.items())),
        borderline=tuple((tuple(q.index for q in star_cubes) + (fams[i0][j].index,), v)
                         for (i0, j), v in sorted(border.items())),
        terms={"max": max_term, "confined": abs(conf), "transversal": factor * t_sum,
               "borderline": factor * b_sum, "n_confined_tuples": len(conf_tuples),
               "n_transversal_tuples": len(trans_tuples)},
    )
    object.__setattr__(cert, "_family_index", None)
    return cert


@dataclass
class MarginReport:
    ok: bool
    margin: float
    lhs: float
    rhs: float
    detail: dict


def _fd_normal(psi, xi, h=1e-6):
    """Normal from centered differences of phase values (independent of the symbolic gradient)."""
    xi = np.asarray(xi, dtype=float)
    zeta = xi[:-1]
    t = None
    if psi.time:
        from .phase import solve_time
        t = float(solve_time(psi, zeta[None], xi[-1])[0])
    g = []
    for i in range(zeta.size):
        e = np.zeros(zeta.size)
        e[i] = h
        fp = float(psi.values([np.array(v) for v in zeta + e], t))
        fm = float(psi.values([np.array(v) for v in zeta - e], t))
        g.append((fp - fm) / (2 * h))
    v = np.concatenate([-np.array(g), [1.0]])
    return v / np.linalg.norm(v)


def verify_certificate(cert, f, spec, x=None, cfg=DecompConfig(), fd_tol=1e-6):
    """Recompute a certificate's inequality and invariants by separate code paths.

    Stage 1: point values come from full inverse FFTs sampled at the nearest
    grid point when x is a grid point, otherwise from direct trig sums.
    Stage k: the product and confined sum are re-evaluated at x, the dominant
    term uses the doubled scattered sums at x, and every neighbor / transversal
    claim is re-derived from finite-difference normals.
    """
    x = np.asarray(cert.x if x is None else x, dtype=float)
    if cert.stage == 1:
        return _verify_stage1(cert, f, spec, x, cfg)
    return _verify_stage_k(cert, f, spec, x, cfg, fd_tol)


def _verify_stage1(cert, f, spec, x, cfg):
    sigma = cert.sigmas[0]
    if spec.kind == "t_delta":
        pieces = restrict_all(f, sigma)
        vals = {}
        for q, fq in pieces.items():
            tp = trig_poly(fq, lambda c: t_delta_symbol(spec, c))
            vals[q.index] = abs(complex(tp(x[None])[0])) if tp.coef.size else 0.0
    else:
        vals = cert.values
    total = sum(vals.values())
    recorded = sum(cert.values.values())
    rel = abs(total - recorded) / max(total, 1e-300)
    if cert.branch == "max":
        rhs = cert.bound if cert.constants.get("saturated") else cert.constants["A"] * max(vals.values())
    else:
        m = max(vals.values())
        v1 = vals.get(cert.partner, 0.0) if spec.kind == "t_delta" else cert.values[cert.partner]
        rhs = cert.constants["C_eff"] * sigma ** (-(f.grid.d - 1)) * math.sqrt(v1 * m)
    ok = total <= rhs * (1 + 1e-9) and rel < 1e-8
    return MarginReport(ok, rhs / total if total else math.inf, total, rhs,
                        {"branch": cert.branch, "recompute_rel_err": rel})


def _verify_stage_k(cert, f, spec, x, cfg, fd_tol):
    psi = spec.phase
    k = cert.stage
    sk = cert.sigmas[-1]
    if not cert.Q.contains(x):
        raise ValueError("x outside Q")
    fams = [q.children(sk) for q in cert.inputs]
    polys = [_piece_polys(f, spec, fam) for fam in fams]
    # product at x, independently: sum over each family then multiply
    prod = 1.0 + 0j
    for fp in polys:
        s = 0j
        for p in fp:
            if p.coef.size:
                s += complex(p(x[None])[0])
        prod *= s
    lhs = abs(prod)
    # dominant term in doubled-sum form at x
    dbl = []
    for fp in polys:
        v, tails = scattered_many(fp, sk, x, cfg.M, cert.constants["rho"], doubled=True)
        dbl.append(v)
    max_dbl = max(float(v.max()) for v in dbl)
    lam_sets = [set(L) for L in cert.Lambda]
    in_N = set(cert.neighbors)
    conf = 0j
    for tup in itertools.product(*[[q for q in fam if q.index in lam_sets[i]] for i, fam in enumerate(fams)]):
        if all(q.index in in_N for q in tup):
            term = 1 + 0j
            for i, q in enumerate(tup):
                j = fams[i].index(q)
                p = polys[i][j]
                term *= complex(p(x[None])[0]) if p.coef.size else 0j
            conf += term
    idx = {q.index: (i, j) for i, fam in enumerate(fams) for j, q in enumerate(fam)}
    factor = cert.constants["factor"]
    trans_sum = 0.0
    for tup, _ in cert.transversal + cert.borderline:
        vals = [dbl[idx[c][0]][idx[c][1]] for c in tup[:k]]
        last = tup[k]
        i0, j0 = idx[last]
        trans_sum += (float(np.prod(vals)) * dbl[i0][j0]) ** (k / (k + 1))
    rhs = max_dbl ** k + abs(conf) + factor * trans_sum
    # invariants from finite-difference normals
    star_pts = [fams[idx[c][0]][idx[c][1]].center for c in cert.dominant]
    basis = np.array([_fd_normal(psi, p) for p in star_pts])
    bad_neighbors = []
    for c in cert.neighbors:
        q = fams[idx[c][0]][idx[c][1]]
        dist = plane_distance(_fd_normal(psi, q.center), basis)
        if dist > cfg.C_normal * sk * (1 + 1e-9) + 10 * fd_tol:
            bad_neighbors.append(c)
    bad_tuples = []
    need = cert.constants["need_out"]
    for tup, _ in cert.transversal:
        cubes = [fams[idx[c][0]][idx[c][1]] for c in tup]
        ns = [[_fd_normal(psi, p) for p in q.sample_points()] for q in cubes]
        worst = min(transversality_volume(*combo) for combo in itertools.product(*ns))
        if worst < need * (1 - 1e-6):
            bad_tuples.append((tup, worst))
    ok = lhs <= rhs * (1 + 1e-9) and not bad_neighbors and not bad_tuples
    return MarginReport(ok, rhs / lhs if lhs else math.inf, lhs, rhs,
                        {"bad_neighbors": bad_neighbors, "bad_tuples": bad_tuples,
                         "max_term": max_dbl ** k, "confined": abs(conf),
                         "transversal": factor * trans_sum})


def certificate_report(cert):
    """Plain-text record (one block per certificate) for golden-file comparison."""
    fmt = lambda v: format(v, ".10g")
    lines = [f"stage {cert.stage}", f"  x = ({', '.join(fmt(v) for v in cert.x)})",
             f"  sigmas = ({', '.join(fmt(s) for s in cert.sigmas)})", f"  branch = {cert.branch}"]
    if cert.stage == 1:
        lines.append(f"  dominant = {cert.dominant[0] if cert.dominant else None}")
        if cert.partner is not None:
            lines.append(f"  partner = {cert.partner}")
        for k in sorted(cert.constants):
            lines.append(f"  const {k} = {fmt(cert.constants[k]) if isinstance(cert.constants[k], float) else cert.constants[k]}")
    else:
        lines.append(f"  x0 = ({', '.join(fmt(v) for v in cert.x0)})")
        lines.append(f"  inputs = {[q.index for q in cert.inputs]}")
        lines.append(f"  dominant = {list(cert.dominant)}")
        lines.append(f"  lambda sizes = {[len(L) for L in cert.Lambda]}")
        lines.append(f"  neighbors = {len(cert.neighbors)}")
        for tup, v in cert.transversal:
            lines.append(f"  transversal {list(tup)} vol = {fmt(v)}")
        for tup, v in cert.borderline:
            lines.append(f"  borderline {list(tup)} vol = {fmt(v)}")
        for k in ("max", "confined", "transversal", "borderline"):
            lines.append(f"  term {k} = {fmt(cert.terms[k])}")
    lines.append(f"  lhs = {fmt(cert.lhs)}")
    lines.append(f"  bound = {fmt(cert.bound)}")
    lines.append(f"  margin = {fmt(cert.margin)}")
    return "\n".join(lines) + "\n"
