"""Mollifiers, cut-offs and the factorized interaction kernels.

A :class:`KernelPair` carries two grid functions ``W`` and ``V`` whose
convolution builds the interaction force.  Signs are kept explicit:

    potential = potential_sign * (W * V)
    force     = force_sign * potential            (mode "product")
    force     = force_sign * d/dx potential       (mode "gradient_product")

``potential_sign = -1`` encodes the imaginary factor in the bounded-confidence
factorization V = i * indicator (so V*V is the negative tent), and
``force_sign = -1`` encodes k = -grad(Phi) for the Coulomb and Bessel
families.  In higher dimensions the force is a tuple, one component per axis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import gridfn
from .gridfn import FourierMultiplier, Grid, GridError, GridFunction

MOLLIFIER_BASES = ("standard_bump", "gaussian")


class KernelError(ValueError):
    pass


# -- Gamma function and Coulomb constants -----------------------------------------

_LANCZOS_G = 7
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def lanczos_gamma(x: float) -> float:
    """Gamma(x) by the Lanczos approximation (g=7, 9 terms), ~1e-15 relative."""
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * lanczos_gamma(1.0 - x))
    x -= 1.0
    a = _LANCZOS_COEF[0]
    t = x + _LANCZOS_G + 0.5
    for i in range(1, _LANCZOS_G + 2):
        a += _LANCZOS_COEF[i] / (x + i)
    return math.sqrt(2.0 * math.pi) * t ** (x + 0.5) * math.exp(-t) * a


def c_alpha(alpha: float) -> float:
    """pi^(-alpha/2) Gamma(alpha/2)."""
    return math.pi ** (-alpha / 2.0) * lanczos_gamma(alpha / 2.0)


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2.0) / lanczos_gamma(d / 2.0 + 1.0)


def coulomb_sqrt_constant(d: int) -> float:
    """c_2 / (c_{d-2} d (d-2) |B_1|): squared prefactor of the Coulomb factor V."""
    if d < 3:
        raise KernelError("the symmetric Coulomb factorization needs d >= 3")
    return c_alpha(2.0) / (c_alpha(d - 2.0) * d * (d - 2) * unit_ball_volume(d))


# -- mollifiers and cut-off ------------------------------------------------------------


@lru_cache(maxsize=None)
def bump_normalization(d: int, samples: int = 200_000) -> float:
    """1 / int_{B_1} exp(-1/(1-|x|^2)) dx by a fine midpoint rule in the radius."""
    r = (np.arange(samples) + 0.5) / samples
    prof = np.exp(-1.0 / (1.0 - r * r))
    surface = d * unit_ball_volume(d)
    return 1.0 / (surface * math.fsum(r ** (d - 1) * prof) / samples)


def _bump(r: np.ndarray, d: int) -> np.ndarray:
    inside = r < 1.0
    out = np.zeros_like(r)
    ri = r[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ri * ri))
    return bump_normalization(d) * out


@dataclass(frozen=True)
class MollifierSpec:
    base: str
    epsilon: float

    def __post_init__(self):
        if self.base not in MOLLIFIER_BASES:
            raise KernelError(f"unknown mollifier base {self.base!r}")
        if not self.epsilon > 0:
            raise KernelError("epsilon must be positive")


def weierstrass_symbol(eps: float, power: float = 1.0) -> FourierMultiplier:
    """exp(-4 eps pi^2 |xi|^2)^power, the transform of the heat kernel h^eps."""
    return FourierMultiplier(lambda xi: np.exp(-4.0 * power * eps * np.pi**2 * sum(x * x for x in xi)),
                             name=f"weierstrass({eps})^{power}")


def make_mollifier(spec: MollifierSpec, grid: Grid) -> GridFunction:
    """J^eps = eps^-d J(x/eps) (standard bump) or the Weierstrass kernel h^eps.

    The sampled kernel is rescaled so that its quadrature is exactly one.
    """
    eps, d = spec.epsilon, grid.dim
    r = grid.radius()
    if spec.base == "standard_bump":
        if eps < 4.0 * grid.h * (1 - 1e-12):
            n_min = 1 << math.ceil(math.log2(2.0 * grid.L / (eps / 4.0)))
            raise KernelError(f"bump of radius {eps} is under-resolved on h={grid.h}; need n >= {n_min}")
        vals = _bump(r / eps, d) / eps**d
    else:
        if math.sqrt(2.0 * eps) < 2.0 * grid.h:
            warnings.warn(f"Weierstrass kernel with eps={eps} is barely resolved on h={grid.h}",
                          RuntimeWarning, stacklevel=2)
        vals = (4.0 * np.pi * eps) ** (-d / 2.0) * np.exp(-r * r / (4.0 * eps))
    f = GridFunction(grid, np.broadcast_to(vals, grid.shape).copy())
    return f * (1.0 / gridfn.quadrature(f))


def smoothstep_cutoff(r) -> np.ndarray:
    """zeta(r): 1 on [0,1], 0 on [2,inf), quintic smoothstep in between."""
    r = np.asarray(r, dtype=float)
    t = np.clip(r - 1.0, 0.0, 1.0)
    return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)


def make_cutoff(eps: float, grid: Grid) -> GridFunction:
    """zeta^eps(x) = zeta(eps |x|)."""
    return GridFunction(grid, np.broadcast_to(smoothstep_cutoff(eps * grid.radius()), grid.shape).copy())


def fit_power_law(xs, ys) -> tuple[float, float]:
    """Least-squares slope of log y against log x and the rms residual."""
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def certify_mollifier_scaling(base: str, grid: Grid, m: int, eps_values) -> tuple[float, float]:
    """Fitted exponent of ||J^eps||_{H^m} versus eps, with the fit residual."""
    eps_values = list(eps_values)
    if len(eps_values) < 4:
        raise KernelError("need at least 4 epsilon values to fit a slope")
    if m not in (0, 1, 2):
        raise KernelError("m must be 0, 1 or 2")
    norms = [gridfn.sobolev_norm(make_mollifier(MollifierSpec(base, e), grid), m, 2) for e in eps_values]
    return fit_power_law(eps_values, norms)


# -- kernel pairs ------------------------------------------------------------------


@dataclass
class KernelPair:
    W: GridFunction
    V: GridFunction
    mode: str
    a_W: float
    a_V: float
    strongly_admissible: bool = False
    potential_sign: float = 1.0
    force_sign: float = 1.0
    eps: float | None = None
    name: str = ""
    k_eps: object = None
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("product", "gradient_product"):
            raise KernelError(f"unknown mode {self.mode!r}")
        if self.W.grid != self.V.grid:
            raise GridError("W and V live on different grids")
        if self.k_eps is None:
            self.k_eps = assemble_force(self)
        if not self.constants:
            self.constants = measured_constants(self)

    @property
    def grid(self) -> Grid:
        return self.W.grid

    @property
    def symmetric(self) -> bool:
        return self.W is self.V

    def potential(self) -> GridFunction:
        return gridfn.convolve(self.W, self.V) * self.potential_sign

    def force_1d(self) -> GridFunction:
        if self.grid.dim != 1:
            raise KernelError("particle dynamics are one-dimensional")
        return self.k_eps


def assemble_force(pair: KernelPair):
    P = pair.potential()
    if pair.mode == "product":
        if pair.grid.dim != 1:
            raise KernelError("product-mode forces are scalar; use gradient_product in d > 1")
        return P * pair.force_sign
    comps = [c * pair.force_sign for c in gridfn.gradient(P)]
    return comps[0] if pair.grid.dim == 1 else tuple(comps)


def measured_constants(pair: KernelPair) -> dict:
    """Norms entering admissibility and C = norm * eps^a for the declared exponents."""
    wl2 = gridfn.sobolev_norm(pair.W, 0, 2)
    wh2 = gridfn.sobolev_norm(pair.W, 2, 2)
    vh2 = gridfn.sobolev_norm(pair.V, 2, 2)
    out = {"W_L2": wl2, "W_H2": wh2, "V_H2": vh2}
    if pair.eps:
        w = wh2 if pair.strongly_admissible else wl2
        out["C_W"] = w * pair.eps**pair.a_W
        out["C_V"] = vh2 * pair.eps**pair.a_V
    return out


def _mollifier(eps, grid, base="standard_bump"):
    return make_mollifier(MollifierSpec(base, eps), grid)


def indicator(grid: Grid, a: float, b: float) -> GridFunction:
    """1_[a,b] on a 1D grid, 1/2 on nodes that hit an endpoint."""
    x = grid.axis()
    tol = 1e-9 * grid.h
    v = ((x > a + tol) & (x < b - tol)).astype(float)
    v[np.abs(x - a) <= tol] = 0.5
    v[np.abs(x - b) <= tol] = 0.5
    return GridFunction(grid, v)


def bounded_confidence_potential(R: float, grid: Grid) -> GridFunction:
    """U(x) = |x| - R on [-R, R], 0 outside."""
    if grid.dim != 1:
        raise KernelError("bounded confidence is one-dimensional")
    if not 0 < R < grid.L / 2:
        raise KernelError(f"R={R} must lie in (0, L/2) with L={grid.L}")
    x = grid.axis()
    return GridFunction(grid, np.where(np.abs(x) <= R, np.abs(x) - R, 0.0))


def bounded_confidence_force(R: float, grid: Grid, sign: float = 1.0) -> GridFunction:
    """k_U = -1_[-R,0] + 1_[0,R] (sign(x) on [-R,R], 0 at the origin)."""
    bounded_confidence_potential(R, grid)
    x = grid.axis()
    k = indicator(grid, 0.0, R).values - indicator(grid, -R, 0.0).values
    k[np.abs(x) <= 1e-9 * grid.h] = 0.0
    return GridFunction(grid, sign * k)


def bounded_confidence_pair(R: float, eps: float, grid: Grid, route: str = "force", sign: float = 1.0) -> KernelPair:
    """Mollified bounded-confidence interaction.

    ``route="force"``: W = zeta^eps (k_U * J^eps), V = J^eps, k = W * V.
    ``route="potential"``: W = V = J^eps * 1_[-R/2,R/2] with the imaginary
    unit folded into ``potential_sign = -1``, k = d/dx (V * V).
    ``sign=+1`` gives attraction within distance R (consensus formation);
    ``sign=-1`` flips the force.
    """
    J = _mollifier(eps, grid)
    if route == "force":
        k = bounded_confidence_force(R, grid)
        W = make_cutoff(eps, grid) * gridfn.convolve(k, J)
        return KernelPair(W, J, "product", a_W=0.0, a_V=2.5, force_sign=sign, eps=eps,
                          name=f"bounded_confidence(R={R},force)")
    if route == "potential":
        bounded_confidence_potential(R, grid)
        V = gridfn.convolve(indicator(grid, -R / 2, R / 2), J)
        return KernelPair(V, V, "gradient_product", a_W=1.5, a_V=1.5, strongly_admissible=True,
                          potential_sign=-1.0, force_sign=sign, eps=eps,
                          name=f"bounded_confidence(R={R},potential)")
    raise KernelError(f"unknown route {route!r}")


# -- Coulomb ---------------------------------------------------------------------------


def coulomb_potential(d: int, grid: Grid, cutoff: float | None = None) -> GridFunction:
    """Fundamental solution of -Laplace, truncated to |x| <= cutoff (default L).

    The origin node gets the mean of its 2d nearest neighbours.
    """
    if d not in (2, 3):
        raise KernelError("the Coulomb potential is defined here for d = 2, 3")
    if grid.dim != d:
        raise GridError(f"grid has dim {grid.dim}, expected {d}")
    Rc = grid.L if cutoff is None else cutoff
    r = grid.radius()
    safe = np.where(r > 0, r, 1.0)
    if d == 2:
        phi = -np.log(safe) / (2.0 * np.pi)
    else:
        phi = 1.0 / (d * (d - 2) * unit_ball_volume(d) * safe ** (d - 2))
    phi = np.where(r <= Rc * (1 + 1e-12), phi, 0.0)
    o = grid.origin_index
    neighbours = []
    for ax in range(d):
        for s in (-1, 1):
            idx = list(o)
            idx[ax] += s
            neighbours.append(phi[tuple(idx)])
    phi[o] = np.mean(neighbours)
    return GridFunction(grid, phi)


def truncated_coulomb_symbol_sqrt(d: int, cutoff: float | None) -> FourierMultiplier:
    """Square root of the transform of the Coulomb kernel.

    With ``cutoff=None`` this is sqrt(c) |xi|^-1 (mean mode removed).  With a
    cutoff R the kernel 1/(4 pi |x|) 1_{|x|<=R} has the nonnegative transform
    2 sin^2(pi R |xi|) / (4 pi^2 |xi|^2), whose root is used instead (d = 3).
    """
    const = math.sqrt(coulomb_sqrt_constant(d))
    if cutoff is None:
        return FourierMultiplier(lambda xi: const / np.sqrt(sum(x * x for x in xi)), at_zero=0.0,
                                 name="coulomb_sqrt")
    if d != 3:
        raise KernelError("closed-form truncated Coulomb transform implemented for d = 3")
    R = cutoff

    def sym(xi):
        k = np.sqrt(sum(x * x for x in xi))
        return const * math.sqrt(2.0) * np.abs(np.sin(np.pi * R * k)) / k

    return FourierMultiplier(sym, at_zero=const * math.sqrt(2.0) * np.pi * R, name="coulomb_trunc_sqrt")


def _sqrt_symbol(f: GridFunction, name: str) -> np.ndarray:
    fh = gridfn.fourier(f).real
    scale = np.max(np.abs(fh))
    neg = fh < -1e-10 * scale
    if neg.any():
        idx = tuple(int(i[0]) for i in np.nonzero(neg))
        freqs = np.fft.fftfreq(f.grid.n, d=f.grid.h)
        where = [float(freqs[i]) for i in idx]
        raise KernelError(f"{name}: mollifier transform is negative ({fh[idx]:.3e}) at frequency {where}; "
                          "its square root does not exist, use the gaussian base")
    return np.sqrt(np.clip(fh, 0.0, None))


def coulomb_factorized_pair(d: int, eps: float, grid: Grid, route: str = "weierstrass_sqrt",
                            base: str = "standard_bump", cutoff: float | None = "auto") -> KernelPair:
    """Regularized Keller-Segel interaction k = -grad(Phi^eps).

    ``mollify_both``: W = J^eps * Phi, V = J^eps (d = 2, 3).
    ``fourier_sqrt``: V = W with transform sqrt(F[Phi]) sqrt(F[J^eps]); the
    square root is taken numerically and fails for sign-changing mollifiers.
    ``weierstrass_sqrt``: same with the closed-form root exp(-2 eps pi^2 |xi|^2).
    ``cutoff`` truncates Phi to a ball of that radius ("auto" = L) so the
    periodic box reproduces the free-space convolution; ``None`` keeps the
    periodic Green's function.
    """
    if grid.dim != d:
        raise GridError(f"grid has dim {grid.dim}, expected {d}")
    Rc = grid.L if cutoff == "auto" else cutoff
    if route == "mollify_both":
        J = _mollifier(eps, grid, base)
        Phi = coulomb_potential(d, grid, cutoff=Rc)
        W = gridfn.convolve(J, Phi)
        a_V = d / 2.0 + 2.0 if base == "standard_bump" else (d + 4) / 4.0
        return KernelPair(W, J, "gradient_product", a_W=0.0, a_V=a_V, force_sign=-1.0, eps=eps,
                          name=f"coulomb(d={d},mollify_both)")
    if d != 3:
        raise KernelError(f"route {route!r} requires d = 3")
    root = truncated_coulomb_symbol_sqrt(d, Rc).evaluate(grid)
    if route == "fourier_sqrt":
        J = _mollifier(eps, grid, base)
        vhat = root * _sqrt_symbol(J, "fourier_sqrt")
    elif route == "weierstrass_sqrt":
        vhat = root * weierstrass_symbol(eps, 0.5).evaluate(grid)
    else:
        raise KernelError(f"unknown route {route!r}")
    V = gridfn.inverse_fourier(grid, vhat)
    a = (d + 2) / 4.0
    return KernelPair(V, V, "gradient_product", a_W=a, a_V=a, strongly_admissible=True, force_sign=-1.0,
                      eps=eps, name=f"coulomb(d={d},{route})", constants={})


def regularized_coulomb_oracle(d: int, eps: float, grid: Grid, cutoff: float | None = "auto") -> GridFunction:
    """Phi^eps = h^eps * Phi by direct grid convolution, independent of the factor."""
    Rc = grid.L if cutoff == "auto" else cutoff
    return gridfn.convolve(make_mollifier(MollifierSpec("gaussian", eps), grid), coulomb_potential(d, grid, Rc))


# -- Bessel potential --------------------------------------------------------------------


def bessel_kernel_symbol(power: float = 1.0) -> FourierMultiplier:
    return gridfn.bessel_symbol(-2.0 * power)


def bessel_kernel(grid: Grid) -> GridFunction:
    """G = F^-1[(1 + 4 pi^2 |xi|^2)^-1] sampled through the grid transform."""
    return gridfn.apply_multiplier(gridfn.delta(grid), bessel_kernel_symbol())


def bessel_pair(d: int, eps: float, grid: Grid, route: str = "weierstrass") -> KernelPair:
    """k = -grad(G^eps) with G^eps = G * h^eps (symmetric) or G * J^eps."""
    if grid.dim != d:
        raise GridError(f"grid has dim {grid.dim}, expected {d}")
    if route == "weierstrass":
        m = bessel_kernel_symbol(0.5) * weierstrass_symbol(eps, 0.5)
        V = gridfn.apply_multiplier(gridfn.delta(grid), m)
        a = (d + 2) / 4.0
        return KernelPair(V, V, "gradient_product", a_W=a, a_V=a, strongly_admissible=True, force_sign=-1.0,
                          eps=eps, name=f"bessel(d={d},weierstrass)")
    if route == "mollifier":
        J = _mollifier(eps, grid)
        W = gridfn.apply_multiplier(J, bessel_kernel_symbol())
        return KernelPair(W, J, "gradient_product", a_W=0.0, a_V=d / 2.0 + 2.0, force_sign=-1.0, eps=eps,
                          name=f"bessel(d={d},mollifier)")
    raise KernelError(f"unknown route {route!r}")


def bessel_target(eps: float, grid: Grid) -> GridFunction:
    """G^eps = G * h^eps straight from the product of symbols."""
    m = bessel_kernel_symbol() * weierstrass_symbol(eps)
    return gridfn.apply_multiplier(gridfn.delta(grid), m)


# -- certification ------------------------------------------------------------------------


@dataclass
class Certification:
    rows: list
    slope_W: float
    slope_V: float
    declared: tuple
    residual_W: float
    residual_V: float
    tolerance: float = 0.1

    @property
    def passed(self) -> bool:
        aW, aV = self.declared
        return abs(-self.slope_W - aW) <= self.tolerance and abs(-self.slope_V - aV) <= self.tolerance

    def csv_rows(self):
        yield ("eps", "W_L2", "W_H2", "V_H2", "k_Linf")
        for r in self.rows:
            yield r


def certify_pair(builder, eps_values, tolerance: float = 0.1) -> Certification:
    """Fit the norm-growth exponents of W and V over an eps sweep.

    ``builder(eps)`` returns a KernelPair.  W is measured in L^2 (H^2 when the
    pair is strongly admissible) and V in H^2.
    """
    eps_values = list(eps_values)
    if len(eps_values) < 4:
        raise KernelError("need at least 4 epsilon values")
    rows, w_norms, v_norms, declared, strong = [], [], [], None, False
    for e in eps_values:
        p = builder(e)
        c = p.constants
        k = p.k_eps if isinstance(p.k_eps, GridFunction) else p.k_eps[0]
        rows.append((e, c["W_L2"], c["W_H2"], c["V_H2"], float(np.max(np.abs(k.values)))))
        strong = p.strongly_admissible
        w_norms.append(c["W_H2"] if strong else c["W_L2"])
        v_norms.append(c["V_H2"])
        declared = (p.a_W, p.a_V)
    sW, rW = fit_power_law(eps_values, w_norms)
    sV, rV = fit_power_law(eps_values, v_norms)
    return Certification(rows, sW, sV, declared, rW, rV, tolerance)


def symmetric_factor_defect(V: GridFunction, target, floor: float = 1e-12) -> float:
    """max relative |F[V]^2 - F[target]| over frequencies with |F[target]| > floor.

    ``target`` is a GridFunction or its transform as an array (e.g. an exact
    symbol, which avoids FFT round-off in the reference at tiny |F|).
    """
    fv = gridfn.fourier(V)
    ft = gridfn.fourier(target) if isinstance(target, GridFunction) else np.asarray(target)
    mask = np.abs(ft) > floor
    return float(np.max(np.abs(fv[mask] ** 2 - ft[mask]) / np.abs(ft[mask])))


def odd_defect(k: GridFunction) -> float:
    """max |k(x) + k(-x)| / max |k|."""
    scale = np.max(np.abs(k.values))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(k.values + k.reflected().values)) / scale)
