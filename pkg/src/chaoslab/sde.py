"""Coupled interacting / mean-field particle systems in one dimension.

X^i follows dX = -(1/N) sum_j k(X^i - X^j) dt + sigma dB^i and Y^i follows
dY = -(k * rho_t)(Y^i) dt + sigma dB^i with the same Brownian increments
(synchronous coupling).  Positions live on the torus [-L, L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend, gridfn
from .gridfn import Grid, GridError, GridFunction
from .rng import TAG_INCREMENT, TAG_INITIAL, Stream


class SdeError(ValueError):
    pass


def wrap(x, L: float) -> np.ndarray:
    """Map positions into [-L, L)."""
    y = np.asarray(x, dtype=float)
    out = (y + L) % (2.0 * L) - L
    # the modulo can round up to exactly L for tiny negative inputs
    return np.where(out >= L, -L, out)


@dataclass
class SdeConfig:
    N: int
    sigma: float
    T: float
    dt: float | None = None
    save_times: list | None = None
    seed: int = 0
    replica_id: int = 0

    def __post_init__(self):
        if self.N < 1:
            raise SdeError("N must be >= 1")
        if not self.sigma > 0:
            raise SdeError("sigma must be positive")
        if not self.T > 0:
            raise SdeError("T must be positive")
        if self.dt is None:
            self.dt = self.T / 128
        if not self.dt > 0:
            raise SdeError("dt must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise SdeError(f"T/dt = {steps} is not an integer")
        self.n_steps = int(round(steps))
        if self.save_times is None:
            self.save_times = list(np.linspace(0.0, self.T, 65))
        idx = []
        for t in self.save_times:
            if t < -1e-12 or t > self.T * (1 + 1e-12):
                raise SdeError(f"save time {t} outside [0, {self.T}]")
            idx.append(int(round(t / self.dt)))
        self.save_steps = sorted(set(idx))
        self.save_times = [s * self.dt for s in self.save_steps]

    def time(self, step: int) -> float:
        return step * self.dt


def epsilon_schedule(N: int, beta: float) -> float:
    """eps(N) = N^-beta for beta in (0, 1/2)."""
    if not 0 < beta < 0.5:
        raise SdeError(f"beta must lie in (0, 1/2), got {beta}")
    return float(N) ** (-beta)


@dataclass
class EmpiricalMeasure:
    positions: np.ndarray

    @property
    def N(self) -> int:
        return len(self.positions)

    @property
    def weight(self) -> float:
        return 1.0 / len(self.positions)


@dataclass
class ParticleEnsemble:
    X: np.ndarray
    Y: np.ndarray
    ids: np.ndarray
    L: float
    step: int = 0
    B: np.ndarray = None
    running_max_coupling: float = 0.0
    coupling_history: list = field(default_factory=list)
    boundary_hits: int = 0
    pending: np.ndarray | None = None

    def __post_init__(self):
        if self.B is None:
            self.B = np.zeros_like(self.X)

    @property
    def N(self) -> int:
        return len(self.X)

    def coupling_distance(self) -> float:
        """max_i |X^i - Y^i| with the minimum-image convention."""
        if self.N == 0:
            return 0.0
        return float(np.max(np.abs(wrap(self.X - self.Y, self.L))))

    def record_coupling(self) -> float:
        self.running_max_coupling = max(self.running_max_coupling, self.coupling_distance())
        self.coupling_history.append(self.running_max_coupling)
        return self.running_max_coupling

    def empirical(self, which: str = "X") -> EmpiricalMeasure:
        return EmpiricalMeasure((self.X if which == "X" else self.Y).copy())


def sample_initial(rho0: GridFunction, N: int, stream: Stream, ids=None) -> np.ndarray:
    """Inverse-CDF draws from a 1D density, piecewise constant on the cells around nodes."""
    if not rho0.density:
        raise GridError("sample_initial needs a density-flagged GridFunction")
    g = rho0.grid
    if g.dim != 1:
        raise GridError("particles live in one dimension")
    ids = np.arange(N) if ids is None else np.asarray(ids)
    u = stream.uniforms(0, ids, tag=TAG_INITIAL)
    cdf = np.concatenate([[0.0], np.cumsum(np.clip(rho0.values, 0.0, None))])
    cdf /= cdf[-1]
    edges = g.axis()[0] - 0.5 * g.h + g.h * np.arange(g.n + 1)
    # side="right" never lands in an empty cell
    j = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, g.n - 1)
    frac = (u - cdf[j]) / np.where(cdf[j + 1] > cdf[j], cdf[j + 1] - cdf[j], 1.0)
    return wrap(edges[j] + np.clip(frac, 0.0, 1.0) * g.h, g.L)


def new_ensemble(rho0: GridFunction, cfg: SdeConfig, ids=None, X0=None) -> ParticleEnsemble:
    stream = Stream(cfg.seed, cfg.replica_id)
    ids = np.arange(cfg.N, dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    X0 = sample_initial(rho0, cfg.N, stream, ids) if X0 is None else wrap(X0, rho0.grid.L)
    ens = ParticleEnsemble(X0.copy(), X0.copy(), ids, rho0.grid.L)
    ens.record_coupling()
    return ens


class ForceTable:
    """A 1D force sampled on the grid, ready for the pair-sum kernel."""

    def __init__(self, k: GridFunction):
        if k.grid.dim != 1:
            raise GridError("particle forces are one-dimensional")
        if k.is_complex:
            raise GridError("force must be real")
        self.k = k
        self.grid = k.grid
        self.table = backend.extended_table(k.values)

    def pair_mean(self, targets, sources, threads=None) -> np.ndarray:
        return backend.pairwise_mean(targets, sources, self.table, self.grid.L, self.grid.h, threads)

    def at_zero(self) -> float:
        return float(self.k.values[self.grid.n // 2])


def _boundary_count(x, L, eps) -> int:
    return int(np.count_nonzero(np.abs(x) > L - 4.0 * eps)) if eps else 0


def step_interacting(ens: ParticleEnsemble, force: ForceTable, cfg: SdeConfig, stream: Stream,
                     eps: float | None = None, threads=None) -> ParticleEnsemble:
    """One Euler-Maruyama step of the interacting system (self term j = i included)."""
    if ens.pending is not None:
        raise SdeError("previous increments were not consumed by step_meanfield")
    xi = stream.normals(ens.step, ens.ids, tag=TAG_INCREMENT)
    drift = force.pair_mean(ens.X, ens.X, threads)
    sq = math.sqrt(cfg.dt)
    ens.X = wrap(ens.X - cfg.dt * drift + cfg.sigma * sq * xi, ens.L)
    ens.B = ens.B + sq * xi
    ens.pending = xi
    ens.boundary_hits += _boundary_count(ens.X, ens.L, eps)
    return ens


def step_meanfield(ens: ParticleEnsemble, force_field: GridFunction, cfg: SdeConfig, field_time: float | None = None,
                   eps: float | None = None) -> ParticleEnsemble:
    """Y step with drift -(k * rho_t)(Y), reusing the increments of step_interacting."""
    t = cfg.time(ens.step)
    if field_time is not None and abs(field_time - t) > 0.5 * cfg.dt:
        raise SdeError(f"force field at t={field_time} used at SDE time {t} (mismatch > dt/2)")
    xi = ens.pending
    if xi is None:
        raise SdeError("step_interacting must run before step_meanfield")
    drift = gridfn.evaluate_at(force_field, ens.Y)
    ens.Y = wrap(ens.Y - cfg.dt * drift + cfg.sigma * math.sqrt(cfg.dt) * xi, ens.L)
    ens.pending = None
    ens.boundary_hits += _boundary_count(ens.Y, ens.L, eps)
    ens.step += 1
    if ens.step in cfg.save_steps:
        ens.record_coupling()
    return ens


def coupled_step(ens, force: ForceTable, force_field, cfg, stream, field_time=None, eps=None, threads=None):
    step_interacting(ens, force, cfg, stream, eps, threads)
    return step_meanfield(ens, force_field, cfg, field_time, eps)


# -- empirical convolution -------------------------------------------------------------


def deposit(positions, grid: Grid) -> GridFunction:
    """Particles spread with the linear weights of evaluate_at, as a grid density."""
    if grid.dim != 1:
        raise GridError("deposit is one-dimensional")
    x = np.asarray(positions, dtype=float)
    u = (wrap(x, grid.L) + grid.L) / grid.h
    i0 = np.floor(u).astype(np.int64)
    w = u - i0
    i0 %= grid.n
    i1 = (i0 + 1) % grid.n
    mass = np.bincount(i0, 1.0 - w, grid.n) + np.bincount(i1, w, grid.n)
    return GridFunction(grid, mass / (len(x) * grid.h))


def empirical_convolution(mu: EmpiricalMeasure, V: GridFunction, method: str = "fft", threads=None) -> GridFunction:
    """(1/N) sum_i V(y - X^i) on the grid nodes y."""
    if method == "fft":
        return gridfn.convolve(V, deposit(mu.positions, V.grid))
    if method == "direct":
        g = V.grid
        vals = backend.pairwise_mean(g.axis(), wrap(mu.positions, g.L), backend.extended_table(V.values), g.L, g.h,
                                     threads)
        return GridFunction(g, vals)
    raise ValueError(f"unknown method {method!r}")


def snapshot_rows(replica: int, t: float, ens: ParticleEnsemble):
    for i in range(ens.N):
        yield (replica, t, i, float(ens.X[i]), float(ens.Y[i]))
