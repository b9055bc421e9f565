"""Aggregation-diffusion solver in 1D and the N = 2 Liouville equation in 2D.

Both use Strang splitting: an exact spectral half step of
(sigma^2/2) Laplacian, a conservative MUSCL transport step for
d_t rho + div(rho v) = 0, and another diffusion half step.  Transport uses a
limited piecewise-linear reconstruction, upwind fluxes with face velocities
and SSP-RK2; the face fluxes telescope so mass is conserved to round-off.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import gridfn
from .gridfn import TOL_NEG, Grid, GridError, GridFunction

log = logging.getLogger(__name__)

CFL_FRACTION = 0.5


class CFLError(ValueError):
    def __init__(self, dt, admissible):
        super().__init__(f"CFL violated: dt={dt:.6g} exceeds admissible dt={admissible:.6g}")
        self.dt = dt
        self.admissible = admissible


# -- limiters and transport ----------------------------------------------------------


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def limited_slope(q: np.ndarray, axis: int, limiter: str = "mc") -> np.ndarray:
    dl = q - np.roll(q, 1, axis)
    dr = np.roll(q, -1, axis) - q
    if limiter == "mc":
        c = 0.5 * (dl + dr)
        return _minmod(c, 2.0 * _minmod(dl, dr))
    if limiter == "vanleer":
        prod = dl * dr
        return np.where(prod > 0, 2.0 * prod / np.where(prod > 0, dl + dr, 1.0), 0.0)
    if limiter == "minmod":
        return _minmod(dl, dr)
    raise ValueError(f"unknown limiter {limiter!r}")


def face_velocity(v: np.ndarray, axis: int) -> np.ndarray:
    """v at the face i+1/2 along ``axis``."""
    return 0.5 * (v + np.roll(v, -1, axis))


def flux_divergence(q: np.ndarray, vface: np.ndarray, axis: int, h: float, limiter: str) -> np.ndarray:
    """(F_{i+1/2} - F_{i-1/2}) / h with an upwind flux on the reconstructed states."""
    s = limited_slope(q, axis, limiter)
    left = q + 0.5 * s
    right = np.roll(q - 0.5 * s, -1, axis)
    F = np.where(vface > 0, vface * left, vface * right)
    return (F - np.roll(F, 1, axis)) / h


def heat_multiplier(grid: Grid, sigma: float, tau: float) -> np.ndarray:
    xi2 = sum(x * x for x in grid.frequencies())
    return np.exp(-0.5 * sigma**2 * 4.0 * np.pi**2 * xi2 * tau)


def diffuse(values: np.ndarray, mult: np.ndarray) -> np.ndarray:
    return np.fft.ifftn(np.fft.fftn(values) * mult).real


# -- 1D aggregation-diffusion -----------------------------------------------------------


@dataclass
class PdeState:
    rho: GridFunction
    t: float
    sigma: float
    k: GridFunction
    limiter: str = "mc"
    renormalized: float = 0.0
    clipped_steps: int = 0

    def __post_init__(self):
        if self.rho.grid.dim != 1:
            raise GridError("the mean-field PDE is one-dimensional")
        if self.k.grid != self.rho.grid:
            raise GridError("force and density live on different grids")
        self._khat = gridfn.fourier(self.k)

    def velocity(self, values: np.ndarray | None = None) -> np.ndarray:
        """v = -(k * rho)."""
        vals = self.rho.values if values is None else values
        g = self.rho.grid
        rhohat = np.fft.fft(np.fft.ifftshift(vals)) * g.h
        return -np.fft.fftshift(np.fft.ifft(self._khat * rhohat)).real / g.h

    def force_field(self) -> GridFunction:
        """k * rho, the drift field of the mean-field particles (with a minus sign)."""
        return GridFunction(self.rho.grid, -self.velocity())

    def admissible_dt(self, values=None) -> float:
        vmax = float(np.max(np.abs(self.velocity(values))))
        return math.inf if vmax == 0 else CFL_FRACTION * self.rho.grid.h / vmax


def _clip_and_renormalize(vals: np.ndarray, h: float, state) -> np.ndarray:
    lo = vals.min()
    if lo < -TOL_NEG:
        log.info("clipping undershoot %.3e at t=%.4g", lo, state.t)
    if lo < 0:
        mass_before = math.fsum(vals.ravel()) * h
        vals = np.clip(vals, 0.0, None)
        mass_after = math.fsum(vals.ravel()) * h
        vals = vals * (mass_before / mass_after)
        state.renormalized += abs(mass_after - mass_before)
        state.clipped_steps += 1
    return vals


def _transport_rk2(q, vel_fn, h, dt, limiter, axes):
    def rhs(x):
        v = vel_fn(x)
        out = np.zeros_like(x)
        for ax in axes:
            out -= flux_divergence(x, face_velocity(v[ax], ax), ax, h, limiter)
        return out

    q1 = q + dt * rhs(q)
    return 0.5 * q + 0.5 * (q1 + dt * rhs(q1))


def pde_step(state: PdeState, dt: float) -> PdeState:
    """One Strang step of d_t rho = (sigma^2/2) rho_xx + (rho (k * rho))_x."""
    g = state.rho.grid
    adm = state.admissible_dt()
    if dt > adm * (1 + 1e-12):
        raise CFLError(dt, adm)
    half = heat_multiplier(g, state.sigma, 0.5 * dt)
    q = np.fft.fftshift(diffuse(np.fft.ifftshift(state.rho.values), half))
    q = _transport_rk2(q, lambda x: [state.velocity(x)], g.h, dt, state.limiter, (0,))
    q = np.fft.fftshift(diffuse(np.fft.ifftshift(q), half))
    q = _clip_and_renormalize(q, g.h, state)
    out = PdeState(GridFunction(g, q, density=True), state.t + dt, state.sigma, state.k, state.limiter,
                   state.renormalized, state.clipped_steps)
    out._khat = state._khat
    return out


def advance(state: PdeState, t_end: float, dt_max: float | None = None) -> PdeState:
    """Step to t_end with equal substeps obeying the CFL bound (re-checked each substep)."""
    while state.t < t_end - 1e-14 * max(1.0, t_end):
        remaining = t_end - state.t
        dt = min(remaining, state.admissible_dt())
        if dt_max is not None:
            dt = min(dt, dt_max)
        k = max(1, math.ceil(remaining / dt - 1e-9))
        state = pde_step(state, remaining / k)
    return state


@dataclass
class MeanFieldPath:
    """rho^eps and its drift field k * rho^eps at every SDE step time."""

    times: np.ndarray
    rho: list
    force: list
    renormalized: float = 0.0

    def at_step(self, step: int) -> tuple[float, GridFunction]:
        return float(self.times[step]), self.force[step]


def solve_path(rho0: GridFunction, k: GridFunction, sigma: float, T: float, n_steps: int,
               limiter: str = "mc", max_substep: float | None = None) -> MeanFieldPath:
    state = PdeState(rho0, 0.0, sigma, k, limiter)
    times = np.arange(n_steps + 1) * (T / n_steps)
    rhos, forces = [state.rho], [state.force_field()]
    for t in times[1:]:
        state = advance(state, float(t), max_substep)
        rhos.append(state.rho)
        forces.append(state.force_field())
    return MeanFieldPath(times, rhos, forces, state.renormalized)


# -- N = 2 Liouville equation ------------------------------------------------------------------


@dataclass
class LiouvilleState2:
    rho2: GridFunction
    t: float = 0.0
    renormalized: float = 0.0
    clipped_steps: int = 0


def liouville_velocity(k: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    """Velocities -(1/2)(k(x1 - x2) + k(0)) and its mirror on the (x1, x2) grid."""
    n = k.grid.n
    i = np.arange(n)
    K = k.values[(i[:, None] - i[None, :] + n // 2) % n]
    k0 = k.values[n // 2]
    v1 = -0.5 * (K + k0)
    return v1, v1.T.copy()


def liouville2_step(state: LiouvilleState2, k: GridFunction, sigma: float, dt: float,
                    limiter: str = "mc", velocity=None) -> LiouvilleState2:
    g = state.rho2.grid
    if g.dim != 2:
        raise GridError("the N = 2 Liouville equation lives on a 2D grid")
    v1, v2 = velocity or liouville_velocity(k)
    vmax = max(float(np.max(np.abs(v1))), float(np.max(np.abs(v2))))
    adm = math.inf if vmax == 0 else CFL_FRACTION * g.h / vmax
    if dt > adm * (1 + 1e-12):
        raise CFLError(dt, adm)
    half = heat_multiplier(g, sigma, 0.5 * dt)
    q = np.fft.fftshift(diffuse(np.fft.ifftshift(state.rho2.values), half))
    q = _transport_rk2(q, lambda x: (v1, v2), g.h, dt, limiter, (0, 1))
    q = np.fft.fftshift(diffuse(np.fft.ifftshift(q), half))
    out = LiouvilleState2(state.rho2, state.t + dt, state.renormalized, state.clipped_steps)
    q = _clip_and_renormalize(q, g.cell_volume, out)
    out.rho2 = GridFunction(g, q, density=True)
    return out


def liouville2_advance(state: LiouvilleState2, k: GridFunction, sigma: float, t_end: float,
                       dt_max: float | None = None, limiter: str = "mc") -> LiouvilleState2:
    vel = liouville_velocity(k)
    vmax = max(float(np.max(np.abs(v))) for v in vel)
    adm = math.inf if vmax == 0 else CFL_FRACTION * state.rho2.grid.h / vmax
    dt = min(adm, dt_max or math.inf, t_end - state.t)
    steps = max(1, math.ceil((t_end - state.t) / dt - 1e-9))
    dt = (t_end - state.t) / steps
    for _ in range(steps):
        state = liouville2_step(state, k, sigma, dt, limiter, vel)
    return state


def tensor_square(rho: GridFunction) -> GridFunction:
    g = rho.grid
    return GridFunction(Grid(2, g.L, g.n), np.outer(rho.values, rho.values), density=rho.density)


def marginal(rho2) -> GridFunction:
    """First marginal: integrate over x2."""
    f = rho2.rho2 if isinstance(rho2, LiouvilleState2) else rho2
    g = f.grid
    vals = f.values.sum(axis=1) * g.h
    return GridFunction(Grid(1, g.L, g.n), vals, density=f.density)


def symmetry_defect(rho2: GridFunction) -> float:
    return float(np.max(np.abs(rho2.values - rho2.values.T)))


# -- comparison functionals -----------------------------------------------------------------


@dataclass
class EntropyResult:
    value: float
    floored_cells: int = 0

    def __float__(self):
        return self.value


def relative_entropy(p: GridFunction, q: GridFunction, tol_neg: float = TOL_NEG, detail: bool = False):
    """int p log(p/q); cells with p <= tol_neg add nothing, q is floored at 1e-30 max(q)."""
    if p.grid != q.grid:
        raise GridError("relative entropy needs a common grid")
    pv, qv = p.values, q.values
    floor_q = 1e-30 * float(np.max(qv))
    live = pv > tol_neg
    qq = np.maximum(qv, floor_q)
    floored = int(np.count_nonzero(live & (qv <= floor_q)))
    if floored:
        log.info("relative_entropy: %d cells floored", floored)
    terms = np.zeros_like(pv)
    terms[live] = pv[live] * np.log(pv[live] / qq[live])
    val = math.fsum(terms.ravel()) * p.grid.cell_volume
    return EntropyResult(val, floored) if detail else val


def l1_distance(p: GridFunction, q: GridFunction) -> float:
    return gridfn.lp_norm(p - q, 1)


def autocorrelation(rho: GridFunction) -> GridFunction:
    """(rho * rho~)(z) = int rho(y) rho(y - z) dy."""
    return gridfn.convolve(rho, rho.reflected())


def deregularization_residual(k: GridFunction, k_eps: GridFunction, rho: GridFunction) -> float:
    """int int |k - k_eps|^2(x1 - x2) rho(x1) rho(x2) dx1 dx2."""
    if rho.grid.dim != 1:
        raise GridError("deregularization residual is one-dimensional")
    d = k - k_eps
    return gridfn.quadrature(GridFunction(rho.grid, d.values**2) * autocorrelation(rho))


def gaussian_density(grid: Grid, mean: float = 0.0, var: float = 1.0) -> GridFunction:
    """Normalized Gaussian samples (renormalized so the quadrature is exactly one)."""
    x = grid.axis()
    v = np.exp(-((x - mean) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    f = GridFunction(grid, v)
    return GridFunction(grid, v / gridfn.quadrature(f), density=True)


@dataclass
class PdeSeries:
    rows: list = field(default_factory=list)

    def add(self, t, rho, reference=None):
        mass = gridfn.quadrature(rho)
        ent = relative_entropy(rho, reference) if reference is not None else float("nan")
        l1 = l1_distance(rho, reference) if reference is not None else float("nan")
        self.rows.append((t, mass, float(rho.values.min()), ent, l1))

    header = ("t", "mass", "min", "entropy_vs_ref", "l1_vs_ref")
