"""Periodic uniform-grid functions on the torus [-L, L)^dim.

Node ``j`` along every axis sits at ``x_j = -L + j*h`` so the origin is the
node with index ``n // 2``.  All transforms go through :func:`fourier` and
:func:`inverse_fourier`, which fix the FFT convention in one place:

* forward: ``F[f](xi_k) = h**dim * fftn(ifftshift(values))`` -- a Riemann sum
  for the continuous transform ``int f(x) exp(-2 pi i x.xi) dx`` with
  ``xi`` in cycles per unit length;
* inverse: ``fftshift(ifftn(.)) / h**dim`` (numpy's ifftn carries 1/n**dim).

Convolution is the circular convolution ``h**dim * sum_j f(x_j) g(x - x_j)``.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

TOL_MASS = 1e-8
TOL_NEG = 1e-12
BOUNDARY_MASS_TOL = 1e-8


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    dim: int
    L: float
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise GridError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or self.n & (self.n - 1):
            raise GridError(f"n must be a power of two >= 8, got {self.n}")
        if not self.L > 0:
            raise GridError(f"half width must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def origin_index(self) -> tuple[int, ...]:
        return (self.n // 2,) * self.dim

    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    def mesh(self) -> list[np.ndarray]:
        ax = self.axis()
        return np.meshgrid(*([ax] * self.dim), indexing="ij", sparse=True)

    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x * x for x in self.mesh()))

    def frequencies(self) -> list[np.ndarray]:
        """Discrete frequencies (cycles per unit length) in FFT order, sparse mesh."""
        k = np.fft.fftfreq(self.n, d=self.h)
        return np.meshgrid(*([k] * self.dim), indexing="ij", sparse=True)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.dim, self.L, self.n * factor)


class GridFunction:
    """Samples of a (real or complex) scalar field on a :class:`Grid`.

    ``density=True`` marks a probability density; the flag is checked on
    construction against the module tolerances.
    """

    __slots__ = ("grid", "values", "density")

    def __init__(self, grid: Grid, values, density: bool = False, check: bool = True):
        values = np.asarray(values)
        if values.shape != grid.shape:
            values = values.reshape(grid.shape)
        if not np.iscomplexobj(values):
            values = values.astype(np.float64, copy=False)
        self.grid = grid
        self.values = values
        self.density = density
        if check:
            if not np.all(np.isfinite(values)):
                raise GridError("grid function has non-finite values")
            if density:
                check_density(self)

    @classmethod
    def from_callable(cls, grid: Grid, func: Callable, density: bool = False) -> "GridFunction":
        return cls(grid, np.broadcast_to(func(*grid.mesh()), grid.shape).copy(), density=density)

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.shape))

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.values)

    def with_values(self, values, density: bool | None = None) -> "GridFunction":
        return GridFunction(self.grid, values, self.density if density is None else density)

    def real(self) -> "GridFunction":
        return GridFunction(self.grid, np.real(self.values).copy(), self.density)

    def reflected(self) -> "GridFunction":
        """f(-x); node -x_j of x_j = -L + j h is index (n - j) mod n."""
        v = self.values
        for ax in range(v.ndim):
            v = np.roll(np.flip(v, axis=ax), 1, axis=ax)
        return GridFunction(self.grid, v.copy(), self.density)

    def __add__(self, other):
        _same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        _same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            _same_grid(self, other)
            return GridFunction(self.grid, self.values * other.values)
        return GridFunction(self.grid, self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __repr__(self):
        kind = "density" if self.density else "function"
        return f"GridFunction({kind}, dim={self.grid.dim}, L={self.grid.L}, n={self.grid.n})"


def _same_grid(f: GridFunction, g: GridFunction):
    if f.grid != g.grid:
        raise GridError(f"grid mismatch: {f.grid} vs {g.grid}")


def check_density(f: GridFunction, tol_mass: float = TOL_MASS, tol_neg: float = TOL_NEG):
    if f.is_complex:
        raise GridError("a density must be real")
    lo = float(f.values.min())
    if lo < -tol_neg:
        raise GridError(f"density has negative value {lo:.3e} below -{tol_neg:g}")
    mass = quadrature(f)
    if abs(mass - 1.0) > tol_mass:
        raise GridError(f"density has mass {mass!r}, expected 1 +/- {tol_mass:g}")


def boundary_mass(f: GridFunction) -> float:
    """Mass carried by the cells within one spacing of the torus boundary."""
    v = np.abs(f.values)
    mask = np.zeros(f.grid.shape, dtype=bool)
    for ax in range(f.grid.dim):
        idx = [slice(None)] * f.grid.dim
        for j in (0, 1, -1):
            idx[ax] = j
            mask[tuple(idx)] = True
    return float(v[mask].sum() * f.grid.cell_volume)


def warn_boundary_mass(f: GridFunction, tol: float = BOUNDARY_MASS_TOL) -> float:
    m = boundary_mass(f)
    if m >= tol:
        warnings.warn(f"mass {m:.3e} within one cell of the boundary; enlarge L", RuntimeWarning, stacklevel=2)
    return m


# -- quadrature and transforms -------------------------------------------------


def quadrature(f: GridFunction) -> float:
    """Periodic rectangle rule h^dim * sum(values), compensated summation."""
    v = f.values.ravel()
    if np.iscomplexobj(v):
        return complex(math.fsum(v.real), math.fsum(v.imag)) * f.grid.cell_volume
    return math.fsum(v) * f.grid.cell_volume


def fourier(f: GridFunction) -> np.ndarray:
    return np.fft.fftn(np.fft.ifftshift(f.values)) * f.grid.cell_volume


def inverse_fourier(grid: Grid, fhat: np.ndarray, real: bool = True) -> GridFunction:
    v = np.fft.fftshift(np.fft.ifftn(fhat)) / grid.cell_volume
    if real:
        v = v.real
    return GridFunction(grid, v)


def convolve(f: GridFunction, g: GridFunction) -> GridFunction:
    _same_grid(f, g)
    real = not (f.is_complex or g.is_complex)
    return inverse_fourier(f.grid, fourier(f) * fourier(g), real=real)


def delta(grid: Grid) -> GridFunction:
    v = np.zeros(grid.shape)
    v[grid.origin_index] = 1.0 / grid.cell_volume
    return GridFunction(grid, v)


# -- Fourier multipliers ---------------------------------------------------------


class FourierMultiplier:
    """A symbol m(xi) applied spectrally.

    ``symbol`` receives the sparse list of frequency arrays (one per axis, in
    cycles per unit length) and returns an array broadcastable to the grid.
    ``at_zero`` overrides the value at xi = 0 (e.g. 0 for |xi|^-1).
    """

    def __init__(self, symbol: Callable[[Sequence[np.ndarray]], np.ndarray], at_zero=None, name: str = "m"):
        self.symbol = symbol
        self.at_zero = at_zero
        self.name = name

    def _raw(self, grid: Grid) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            m = np.asarray(self.symbol(grid.frequencies()))
        m = np.array(np.broadcast_to(m, grid.shape))
        if m.dtype.kind in "iub":
            m = m.astype(float)
        if self.at_zero is not None:
            m[(0,) * grid.dim] = self.at_zero
        return m

    def evaluate(self, grid: Grid) -> np.ndarray:
        m = self._raw(grid)
        bad = ~np.isfinite(m)
        if bad.any():
            idx = tuple(int(i[0]) for i in np.nonzero(bad))
            freq = [float(np.fft.fftfreq(grid.n, d=grid.h)[i]) for i in idx]
            raise GridError(f"multiplier {self.name} is not finite at frequency {freq}")
        return m

    def __mul__(self, other: "FourierMultiplier") -> "FourierMultiplier":
        return _Product(self, other)


class _Product(FourierMultiplier):
    def __init__(self, a: FourierMultiplier, b: FourierMultiplier):
        super().__init__(None, name=f"{a.name}*{b.name}")
        self.a, self.b = a, b

    def _raw(self, grid: Grid) -> np.ndarray:
        return self.a._raw(grid) * self.b._raw(grid)


def apply_multiplier(f: GridFunction, m: FourierMultiplier) -> GridFunction:
    sym = m.evaluate(f.grid)
    fhat = np.fft.fftn(np.fft.ifftshift(f.values)) * sym
    out = np.fft.fftshift(np.fft.ifftn(fhat))
    if not (f.is_complex or np.iscomplexobj(sym)):
        out = out.real
    elif not f.is_complex and np.max(np.abs(out.imag)) <= 1e-12 * max(1.0, np.max(np.abs(out.real))):
        out = out.real
    return GridFunction(f.grid, out)


def _radius2(xi):
    return sum(x * x for x in xi)


def bessel_symbol(s: float) -> FourierMultiplier:
    """(1 + 4 pi^2 |xi|^2)^(s/2)."""
    return FourierMultiplier(lambda xi: (1.0 + 4.0 * np.pi**2 * _radius2(xi)) ** (s / 2.0), name=f"bessel({s})")


def derivative_symbol(axis: int, order: int = 1) -> FourierMultiplier:
    def sym(xi):
        # the Nyquist mode of an odd derivative is dropped to keep real fields real
        k = xi[axis] if axis < len(xi) else 0.0
        n = np.size(k)
        d = (2j * np.pi * k) ** order
        if order % 2 and n > 1:
            d = np.where(np.abs(k) == np.max(np.abs(k)), 0.0, d)
        return d

    return FourierMultiplier(sym, name=f"d{axis}^{order}")


def inverse_abs_symbol() -> FourierMultiplier:
    """|xi|^-1 with the mean mode removed (symbol(0) = 0)."""
    return FourierMultiplier(lambda xi: 1.0 / np.sqrt(_radius2(xi)), at_zero=0.0, name="|xi|^-1")


def gradient(f: GridFunction) -> list[GridFunction]:
    return [apply_multiplier(f, derivative_symbol(ax)) for ax in range(f.grid.dim)]


def derivative(f: GridFunction, axis: int = 0, order: int = 1) -> GridFunction:
    return apply_multiplier(f, derivative_symbol(axis, order))


def lp_norm(f: GridFunction, p) -> float:
    v = np.abs(f.values)
    if p == np.inf or p == "inf":
        return float(v.max())
    if p == 1:
        return math.fsum(v.ravel()) * f.grid.cell_volume
    if p == 2:
        return math.sqrt(math.fsum((v * v).ravel()) * f.grid.cell_volume)
    raise GridError(f"unsupported p={p}")


def sobolev_norm(f: GridFunction, s: float, p=2) -> float:
    """Bessel-potential norm ||(1 - Laplacian)^(s/2) f||_{L^p}.

    For p in {1, inf} only integer s >= 0 is accepted and the equivalent
    W^{s,p} norm sum_{|k| <= s} ||d^k f||_p is returned (spectral derivatives).
    """
    if p == 2:
        if s == 0:
            return lp_norm(f, 2)
        return lp_norm(apply_multiplier(f, bessel_symbol(s)), 2)
    if p not in (1, np.inf, "inf"):
        raise GridError(f"unsupported p={p}")
    if s != int(s) or s < 0:
        raise GridError("fractional or negative s requires p = 2")
    total = 0.0
    for multi in _multi_indices(f.grid.dim, int(s)):
        g = f
        for ax, order in enumerate(multi):
            if order:
                g = derivative(g, ax, order)
        total += lp_norm(g, p)
    return total


def _multi_indices(dim: int, m: int):
    if dim == 1:
        for k in range(m + 1):
            yield (k,)
        return
    for k in range(m + 1):
        for rest in _multi_indices(dim - 1, m - k):
            yield (k,) + rest


# -- point evaluation --------------------------------------------------------------


def _wrap(x, L):
    return (np.asarray(x, dtype=float) + L) % (2.0 * L) - L


def evaluate_at(f: GridFunction, x) -> np.ndarray | float:
    """Multilinear interpolation with periodic wrap.

    ``x`` is a scalar / (m,) array in 1D, or an (m, dim) array / dim-tuple.
    """
    g = f.grid
    pts = np.asarray(x, dtype=float)
    scalar = pts.ndim == 0 or (g.dim > 1 and pts.ndim == 1)
    pts = pts.reshape(-1, g.dim)
    u = (_wrap(pts, g.L) + g.L) / g.h
    i0 = np.floor(u).astype(np.int64)
    w = u - i0
    i0 %= g.n
    i1 = (i0 + 1) % g.n
    out = np.zeros(len(pts), dtype=f.values.dtype)
    for corner in range(1 << g.dim):
        idx = []
        weight = np.ones(len(pts))
        for ax in range(g.dim):
            if corner >> ax & 1:
                idx.append(i1[:, ax])
                weight = weight * w[:, ax]
            else:
                idx.append(i0[:, ax])
                weight = weight * (1.0 - w[:, ax])
        out += weight * f.values[tuple(idx)]
    return out[0] if scalar else out


# -- serialization -------------------------------------------------------------------

_MAGIC = b"CHGF"
_HEADER = struct.Struct("<4sIQd8x")  # magic, dim, n, L, pad -> 32 bytes


def save_csv(f: GridFunction, path) -> None:
    if f.is_complex:
        raise GridError("CSV export supports real grid functions only")
    g = f.grid
    with open(path, "w") as fh:
        fh.write("# dim,L,n\n")
        fh.write(f"# {g.dim},{g.L!r},{g.n}\n")
        fh.write("\n".join(repr(float(v)) for v in f.values.ravel()))
        fh.write("\n")


def load_csv(path, density: bool = False) -> GridFunction:
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# dim,L,n"):
            raise GridError(f"{path}: missing '# dim,L,n' header")
        dim, L, n = fh.readline().lstrip("# ").strip().split(",")
        values = np.array([float(line) for line in fh if line.strip()])
    grid = Grid(int(dim), float(L), int(n))
    return GridFunction(grid, values.reshape(grid.shape), density=density)


def save_binary(f: GridFunction, path) -> None:
    if f.is_complex:
        raise GridError("binary export supports real grid functions only")
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, g.dim, g.n, float(g.L)))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_binary(path, density: bool = False) -> GridFunction:
    with open(path, "rb") as fh:
        magic, dim, n, L = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise GridError(f"{path}: bad magic {magic!r}")
        grid = Grid(dim, L, n)
        values = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    return GridFunction(grid, values.reshape(grid.shape), density=density)
