"""Periodic sampling grids and the discrete Fourier transform on them.

Conventions
-----------
Frequency samples sit at ``xi_k = h * (k - n/2)`` on every axis and spatial
samples at ``x_j = dx * (j - n/2)`` with ``dx = P / n`` and ``P = 2*pi / h``.
The forward transform is unnormalized and the inverse carries ``n**-d``::

    F_k = sum_j f_j exp(-i x_j . xi_k)
    f_j = n**-d sum_k F_k exp(+i x_j . xi_k)

so the discrete Parseval identity reads ``sum|f|^2 = n**-d * sum|F|^2``.
Continuous L^p norms are Riemann sums over one period cell (weight ``dx**d``).
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

SPACE = "space"
FREQUENCY = "frequency"


def _is_pow2(n):
    return isinstance(n, (int, np.integer)) and n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid:
    d: int
    n: int
    h: float

    @property
    def P(self):
        return 2 * np.pi / self.h

    @property
    def dx(self):
        return self.P / self.n

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def size(self):
        return self.n ** self.d

    @cached_property
    def freq_axis(self):
        return self.h * (np.arange(self.n) - self.n // 2)

    @cached_property
    def space_axis(self):
        return self.dx * (np.arange(self.n) - self.n // 2)

    def freq_coords(self):
        """Per-axis frequency coordinates shaped for broadcasting."""
        return _broadcast_axes(self.freq_axis, self.d)

    def space_coords(self):
        return _broadcast_axes(self.space_axis, self.d)

    def covers_unit_box(self):
        return self.n * self.h >= 2

    def freq_index(self, xi):
        """Lattice index of a frequency point lying on the lattice (rounded)."""
        xi = np.asarray(xi, dtype=float)
        return tuple(int(v) for v in np.rint(xi / self.h).astype(int) + self.n // 2)


def _broadcast_axes(axis, d):
    out = []
    for i in range(d):
        shp = [1] * d
        shp[i] = axis.size
        out.append(axis.reshape(shp))
    return out


def make_grid(d, n, h):
    """Build a grid; ``n`` must be a power of two and ``n*h >= 2``."""
    if int(d) < 1:
        raise ValueError("dimension must be >= 1")
    if not _is_pow2(n):
        raise ValueError(f"samples per axis must be a power of two, got {n}")
    if not h > 0:
        raise ValueError("frequency spacing must be positive")
    if n * h < 2:
        raise ValueError(f"frequency box uncovered: n*h = {n * h:g} < 2")
    return Grid(int(d), int(n), float(h))


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: Grid
    representation: str
    samples: np.ndarray

    def __post_init__(self):
        if self.representation not in (SPACE, FREQUENCY):
            raise ValueError(f"unknown representation {self.representation!r}")
        arr = np.asarray(self.samples, dtype=np.complex128)
        if arr.shape != self.grid.shape:
            arr = arr.reshape(self.grid.shape)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)

    # conversions never copy when the representation already matches
    def space(self):
        return self if self.representation == SPACE else transform(self)

    def frequency(self):
        return self if self.representation == FREQUENCY else transform(self)

    def __add__(self, other):
        _same_grid(self, other)
        a, b = self.space(), other.space()
        return GridFunction(self.grid, SPACE, a.samples + b.samples)

    def __sub__(self, other):
        _same_grid(self, other)
        a, b = self.space(), other.space()
        return GridFunction(self.grid, SPACE, a.samples - b.samples)

    def __mul__(self, c):
        if isinstance(c, GridFunction):
            _same_grid(self, c)
            return GridFunction(self.grid, SPACE, self.space().samples * c.space().samples)
        return GridFunction(self.grid, self.representation, self.samples * c)

    __rmul__ = __mul__

    def __abs__(self):
        return GridFunction(self.grid, SPACE, np.abs(self.space().samples))


def _same_grid(*fs):
    g = fs[0].grid
    for f in fs[1:]:
        if f.grid != g:
            raise ValueError("grid mismatch")


def from_space(grid, samples):
    return GridFunction(grid, SPACE, samples)


def from_frequency(grid, samples):
    return GridFunction(grid, FREQUENCY, samples)


def zeros(grid, representation=FREQUENCY):
    return GridFunction(grid, representation, np.zeros(grid.shape, dtype=np.complex128))


def fft_forward(a):
    axes = tuple(range(a.ndim))
    return sfft.fftshift(sfft.fftn(sfft.ifftshift(a, axes=axes), axes=axes, workers=-1), axes=axes)


def fft_inverse(a):
    axes = tuple(range(a.ndim))
    return sfft.fftshift(sfft.ifftn(sfft.ifftshift(a, axes=axes), axes=axes, workers=-1), axes=axes)


def transform(f):
    """Flip representation (forward DFT from space, inverse DFT from frequency)."""
    if f.representation == SPACE:
        return GridFunction(f.grid, FREQUENCY, fft_forward(f.samples))
    return GridFunction(f.grid, SPACE, fft_inverse(f.samples))


def parseval_constant(grid):
    """c with sum|f|^2 = c * sum|F|^2."""
    return float(grid.n) ** (-grid.d)


def _lp(vals, p, cell):
    if p < 1:
        raise ValueError(f"exponent p must be >= 1, got {p}")
    if np.isinf(p):
        return float(vals.max()) if vals.size else 0.0
    m = float(vals.max()) if vals.size else 0.0
    if m == 0.0:
        return 0.0
    # scale out the max to keep |f|^p representable for large p
    return m * float(np.sum((vals / m) ** p) * cell) ** (1.0 / p)


def lp_norm(f, p):
    """Riemann-sum L^p norm over one period cell; ``p=inf`` gives the max modulus."""
    if f.representation != SPACE:
        raise ValueError("lp_norm needs the space representation; call .space() first")
    return _lp(np.abs(f.samples), p, f.grid.dx ** f.grid.d)


def modulus_lp(vals, grid, p):
    """Same quadrature as :func:`lp_norm` for an already nonnegative array."""
    return _lp(np.asarray(vals, dtype=float), p, grid.dx ** grid.d)


def pointwise_l2(F, weights):
    """(sum_j w_j |F_j|^2)^(1/2) sampled in space."""
    F = list(F)
    if not F:
        raise ValueError("empty family")
    _same_grid(*F)
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(F),):
        raise ValueError("one weight per member required")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    acc = np.zeros(F[0].grid.shape)
    for wj, Fj in zip(w, F):
        acc += wj * np.abs(Fj.space().samples) ** 2
    return np.sqrt(acc)


def mixed_norm(F, weights, p):
    """L^p_x of the weighted discrete L^2_t norm."""
    F = list(F)
    return modulus_lp(pointwise_l2(F, weights), F[0].grid, p)


def random_function(grid, rng, box=0.5, representation=SPACE):
    """Gaussian frequency coefficients on the lattice points of ``box * I^d``."""
    mask = np.ones(grid.shape, dtype=bool)
    for c in grid.freq_coords():
        mask = mask & (np.abs(c) <= box)
    F = np.zeros(grid.shape, dtype=np.complex128)
    k = int(mask.sum())
    F[mask] = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    f = from_frequency(grid, F)
    return f if representation == FREQUENCY else f.space()
