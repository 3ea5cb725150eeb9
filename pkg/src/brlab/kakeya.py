"""Tubes, transversal tube families and the multilinear Kakeya overlap ratio."""
import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import tube_counts
from .phase import transversality_volume

CLIP_RADIUS = 2.0  # |T| is measured inside B(0, CLIP_RADIUS)


@dataclass(frozen=True)
class Tube:
    direction: tuple
    center: tuple
    width: float
    length: Optional[float] = None  # None: infinite (clipped to the ball)

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(v)
        if not n > 0:
            raise ValueError("tube direction must be nonzero")
        if not self.width > 0:
            raise ValueError("tube width must be positive")
        if abs(n - 1.0) > 4e-16:  # keep already-unit vectors bit-exact
            v = v / n
        object.__setattr__(self, "direction", tuple(float(c) for c in v))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def d(self):
        return len(self.direction)

    def clipped_length(self, radius=CLIP_RADIUS):
        """Length of the axis inside B(0, radius) (and inside the finite length, if any)."""
        th = np.asarray(self.direction)
        c = np.asarray(self.center)
        along = float(c @ th)
        perp2 = float(c @ c) - along ** 2
        if perp2 >= radius ** 2:
            return 0.0
        half = math.sqrt(radius ** 2 - perp2)
        lo, hi = -along - half, -along + half  # axis parameter s: c + s*theta
        if self.length is not None:
            lo, hi = max(lo, -self.length / 2), min(hi, self.length / 2)
        return max(0.0, hi - lo)

    def measure(self, radius=CLIP_RADIUS):
        return self.width ** (self.d - 1) * self.clipped_length(radius)


@dataclass(frozen=True)
class TubeFamily:
    families: tuple  # tuple of tuples of Tube

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(tuple(f) for f in self.families))

    @property
    def k(self):
        return len(self.families)

    @property
    def d(self):
        for fam in self.families:
            for t in fam:
                return t.d
        raise ValueError("empty tube family")

    def directions(self, i):
        return np.array([t.direction for t in self.families[i]]).reshape(-1, self.d)

    def sigma(self, max_tuples=200_000, seed=0):
        """min Vol over cross-family direction tuples (exhaustive, else sampled)."""
        dirs = [np.unique(self.directions(i), axis=0) for i in range(self.k)]
        if any(len(D) == 0 for D in dirs):
            return 0.0
        total = math.prod(len(D) for D in dirs)
        if total <= max_tuples:
            combos = itertools.product(*[range(len(D)) for D in dirs])
        else:
            rng = np.random.default_rng(seed)
            combos = zip(*[rng.integers(0, len(D), max_tuples) for D in dirs])
        return min(transversality_volume(*[D[j] for D, j in zip(dirs, c)]) for c in combos)

    def replicate(self, times=2):
        return TubeFamily(tuple(tuple(fam) * times for fam in self.families))

    def moved(self, rotation, shift):
        """Rigid motion x -> rotation @ x + shift applied to every tube."""
        Rm = np.asarray(rotation, dtype=float)
        b = np.asarray(shift, dtype=float)
        return TubeFamily(tuple(
            tuple(Tube(tuple(Rm @ np.asarray(t.direction)), tuple(Rm @ np.asarray(t.center) + b),
                       t.width, t.length) for t in fam) for fam in self.families))


def _ball_grid(d, n):
    ax = -1 + (np.arange(n) + 0.5) * (2.0 / n)
    grids = np.meshgrid(*([ax] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    pts = pts[np.einsum("ij,ij->i", pts, pts) <= 1.0]
    return pts, (2.0 / n) ** d


def _stratified(d, n_samples, seed):
    per = max(1, int(round(n_samples ** (1.0 / d))))
    rng = np.random.default_rng(seed)
    idx = np.stack(np.meshgrid(*([np.arange(per)] * d), indexing="ij"), axis=-1).reshape(-1, d)
    pts = -1 + (idx + rng.random(idx.shape)) * (2.0 / per)
    pts = pts[np.einsum("ij,ij->i", pts, pts) <= 1.0]
    return pts, (2.0 / per) ** d


def _counts(fam, i, pts):
    tubes = fam.families[i]
    if not tubes:
        return np.zeros(pts.shape[0], dtype=np.int64)
    finite = [t for t in tubes if t.length is not None]
    inf = [t for t in tubes if t.length is None]
    out = np.zeros(pts.shape[0], dtype=np.int64)
    if inf:
        out += tube_counts(pts, np.array([t.center for t in inf]), np.array([t.direction for t in inf]),
                           np.array([t.width / 2 for t in inf]))
    for t in finite:
        y = pts - np.asarray(t.center)
        along = y @ np.asarray(t.direction)
        dist2 = np.einsum("ij,ij->i", y, y) - along ** 2
        out += ((dist2 <= (t.width / 2) ** 2) & (np.abs(along) <= t.length / 2)).astype(np.int64)
    return out


@dataclass(frozen=True)
class KakeyaResult:
    ratio: float
    lhs: float
    normalizer: float
    sigma: float
    n_points: int


def kakeya_normalizer(fam, R, sigma=None, clip_radius=CLIP_RADIUS):
    """R^((d-k)/2) * sigma^-1 * prod_i sum_T |T|."""
    s = fam.sigma() if sigma is None else sigma
    if not s > 0:
        raise ValueError("degenerate family: transversality sigma = 0")
    mass = math.prod(sum(t.measure(clip_radius) for t in f) for f in fam.families)
    return R ** ((fam.d - fam.k) / 2) / s * mass


def kakeya_ratio(fam, R, quadrature="grid", n_q=None, n_samples=None, seed=0,
                 clip_radius=CLIP_RADIUS, sigma=None):
    """|| prod_i sum_T chi_T ||_{L^{1/(k-1)}(B(0,1))} divided by the theorem's normalizer.

    ``quadrature='grid'`` uses a cell-centred grid with n_q = 4 sqrt(R) points per
    axis by default; ``'monte-carlo'`` uses one jittered sample per stratum.
    """
    if any(len(f) == 0 for f in fam.families):
        return KakeyaResult(0.0, 0.0, math.nan, math.nan, 0)
    d, k = fam.d, fam.k
    if not 2 <= k <= d:
        raise ValueError("need 2 <= k <= d")
    w = R ** -0.5
    for f in fam.families:
        for t in f:
            if abs(t.width - w) > 1e-12 * w:
                raise ValueError(f"tube width {t.width:g} inconsistent with R^(-1/2) = {w:g}")
    norm = kakeya_normalizer(fam, R, sigma, clip_radius)
    if quadrature == "grid":
        n = int(n_q or math.ceil(4 * math.sqrt(R)))
        pts, cell = _ball_grid(d, n)
    elif quadrature in ("monte-carlo", "mc"):
        n = int(n_samples or (4 * math.sqrt(R)) ** d)
        pts, cell = _stratified(d, n, seed)
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")
    prod = np.ones(pts.shape[0])
    for i in range(k):
        prod *= _counts(fam, i, pts)
    q = 1.0 / (k - 1)
    lhs = float(np.sum(prod ** q) * cell) ** (k - 1)
    return KakeyaResult(lhs / norm, lhs, norm, float(fam.sigma() if sigma is None else sigma), pts.shape[0])


def _anchors(d, k, sigma_target):
    """k unit vectors with Vol = sigma_target: e_1, rotated e_2, then e_3..e_k."""
    A = np.eye(d)[:k].copy()
    if sigma_target < 1:
        a = math.asin(sigma_target)
        A[1] = math.cos(a) * np.eye(d)[0] + math.sin(a) * np.eye(d)[1]
    return A


def _cap_sample(rng, v, radius):
    """Uniform-angle direction within angular radius of v."""
    d = v.size
    g = rng.standard_normal(d)
    g -= (g @ v) * v
    g /= np.linalg.norm(g)
    ang = radius * math.sqrt(rng.random())
    return math.cos(ang) * v + math.sin(ang) * g


def random_transversal_family(d, k, sigma_target, counts, seed=0, R=64, cap=None, spread=None):
    """Seeded transversal family: directions in caps around k anchors, axes within
    ``spread`` (default one width) of the origin so that the families overlap."""
    if not 0 < sigma_target <= 1:
        raise ValueError("infeasible sigma_target: must lie in (0, 1]")
    if not 2 <= k <= d:
        raise ValueError("need 2 <= k <= d")
    counts = [int(counts)] * k if np.isscalar(counts) else [int(c) for c in counts]
    if len(counts) != k:
        raise ValueError("one count per family")
    cap = 0.25 * sigma_target if cap is None else cap
    rng = np.random.default_rng(seed)
    anchors = _anchors(d, k, sigma_target)
    w = R ** -0.5
    spread = w if spread is None else spread
    fams = []
    for i in range(k):
        tubes = []
        for _ in range(counts[i]):
            th = _cap_sample(rng, anchors[i], cap)
            c = rng.standard_normal(d)
            c *= spread * rng.random() ** (1 / d) / np.linalg.norm(c)
            c -= (c @ th) * th
            tubes.append(Tube(tuple(th), tuple(c), w))
        fams.append(tuple(tubes))
    return TubeFamily(tuple(fams))


def orthogonal_family(d, R):
    """One tube per coordinate axis through the origin (k = d)."""
    w = R ** -0.5
    return TubeFamily(tuple((Tube(tuple(np.eye(d)[i]), (0.0,) * d, w),) for i in range(d)))


def orthogonal_oracle(d, clip_radius=CLIP_RADIUS):
    """Exact ratio for `orthogonal_family`: w^(d(d-1)) / (w^(d-1) L)^d = L^-d with L = 2*clip_radius."""
    return (2 * clip_radius) ** -float(d)


def dumps(fam):
    """Plain text: one tube per line, `family theta... center... width [length]`."""
    lines = [f"# tubes d={fam.d} k={fam.k}"]
    fmt = lambda v: format(v, ".17g")
    for i, f in enumerate(fam.families):
        for t in f:
            row = [str(i)] + [fmt(v) for v in t.direction] + [fmt(v) for v in t.center] + [fmt(t.width)]
            if t.length is not None:
                row.append(fmt(t.length))
            lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


def loads(text):
    rows = []
    d = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if not s:
            continue
        parts = s.split()
        try:
            vals = [float(v) for v in parts[1:]]
            fi = int(parts[0])
        except ValueError as e:
            raise ValueError(f"line {no}: {e}") from None
        if d is None:
            if len(vals) % 2 == 1:
                d = (len(vals) - 1) // 2
            else:
                d = (len(vals) - 2) // 2
        if len(vals) not in (2 * d + 1, 2 * d + 2):
            raise ValueError(f"line {no}: expected {2 * d + 1} or {2 * d + 2} numbers after the family index")
        length = vals[2 * d + 1] if len(vals) == 2 * d + 2 else None
        rows.append((fi, Tube(tuple(vals[:d]), tuple(vals[d:2 * d]), vals[2 * d], length)))
    if not rows:
        raise ValueError("no tubes")
    k = max(r[0] for r in rows) + 1
    fams = [[] for _ in range(k)]
    for fi, t in rows:
        fams[fi].append(t)
    return TubeFamily(tuple(tuple(f) for f in fams))
