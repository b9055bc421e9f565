"""Replica runs and sweeps: the pieces the CLI subcommands are built from."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import backend, diagnostics, gridfn, kernels, meanfield_pde, sde
from .gridfn import Grid, GridFunction


@dataclass
class NSetup:
    """Everything shared by the replicas at one particle number."""

    N: int
    eps: float
    pair: kernels.KernelPair
    force: sde.ForceTable
    path: meanfield_pde.MeanFieldPath
    rho0: GridFunction
    sigma: float
    T: float
    dt: float
    save_times: list
    seed: int
    l2: diagnostics.MollifiedL2
    lln: bool = True

    def sde_config(self, replica: int) -> sde.SdeConfig:
        return sde.SdeConfig(self.N, self.sigma, self.T, self.dt, list(self.save_times), self.seed, replica)


def prepare(N: int, eps: float, pair, rho0: GridFunction, sigma: float, T: float, n_steps: int, n_save: int,
            seed: int, lln: bool = True) -> NSetup:
    k = pair.force_1d()
    dt = T / n_steps
    path = meanfield_pde.solve_path(rho0, k, sigma, T, n_steps)
    save_every = max(1, n_steps // n_save)
    save_times = [s * dt for s in range(0, n_steps + 1, save_every)]
    if save_times[-1] < T - 1e-12:
        save_times.append(T)
    return NSetup(N, eps, pair, sde.ForceTable(k), path, rho0, sigma, T, dt, save_times, seed,
                  diagnostics.MollifiedL2(pair.V.real()), lln)


def run_replica(setup: NSetup, replica: int, threads: int | None = None,
                keep_snapshots: bool = False) -> diagnostics.DiagnosticsRecord:
    cfg = setup.sde_config(replica)
    stream = sde.Stream(cfg.seed, cfg.replica_id)
    ens = sde.new_ensemble(setup.rho0, cfg)
    rows = {k: [] for k in ("t", "l2", "l2dx", "K", "coupling", "lln")}
    snaps = []

    def record(step):
        rho = setup.path.rho[step]
        l2, l2dx = setup.l2.both(ens.X, rho)
        rows["t"].append(cfg.time(step))
        rows["l2"].append(l2)
        rows["l2dx"].append(l2dx)
        rows["K"].append(diagnostics.modulated_energy(sde.EmpiricalMeasure(ens.X), rho, setup.pair, cfg.sigma))
        rows["coupling"].append(ens.running_max_coupling)
        rows["lln"].append(diagnostics.lln_defect(ens.Y, setup.force, setup.path.force[step], threads)
                           if setup.lln else float("nan"))
        if keep_snapshots:
            snaps.append((cfg.time(step), ens.X.copy(), ens.Y.copy()))

    if 0 in cfg.save_steps:
        record(0)
    for n in range(cfg.n_steps):
        t_field, field = setup.path.at_step(n)
        sde.coupled_step(ens, setup.force, field, cfg, stream, t_field, setup.eps, threads)
        if ens.step in cfg.save_steps:
            record(ens.step)
    rec = diagnostics.DiagnosticsRecord(
        replica, setup.N, np.array(rows["t"]), np.array(rows["l2"]), np.array(rows["l2dx"]), np.array(rows["K"]),
        np.array(rows["coupling"]), np.array(rows["lln"]), ens.boundary_hits, float(ens.X[0]))
    if keep_snapshots:
        rec.snapshots = snaps
    return rec


def run_replicas(setup: NSetup, replicas, threads: int | None = None, keep_snapshots=False) -> list:
    """Replicas in a thread pool (the pair sums release the GIL); results come back in replica order."""
    threads = backend.resolve_threads(threads)
    replicas = list(replicas)
    if threads == 1 or len(replicas) == 1:
        return [run_replica(setup, r, 1, keep_snapshots) for r in replicas]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda r: run_replica(setup, r, 1, keep_snapshots), replicas))


def initial_samples(rho0: GridFunction, N: int, seed: int, replicas) -> list:
    """t = 0 positions of each replica (same streams as run_replica)."""
    out = []
    for r in replicas:
        out.append(sde.sample_initial(rho0, N, sde.Stream(seed, r), np.arange(N)))
    return out


# -- N = 2 Liouville oracle ----------------------------------------------------------------


@dataclass
class LiouvilleResult:
    times: list
    H2: list
    bound_mean: list
    bound_se: list
    grid_error: float
    ckp_pairs: list
    marginal_l1: list
    records: list


def liouville_oracle(pair, rho0: GridFunction, sigma: float, T: float, n_steps: int, replicas: int, seed: int,
                     n_save: int = 16, threads=None, coarse_pair=None, coarse_rho0=None) -> LiouvilleResult:
    """H_2(t) from the 2D Liouville solve next to the entropy bound from M replicas at N = 2.

    H_2 here is normalized like H_N: (1/2) int rho2 log(rho2 / rho (x) rho).
    The grid-error estimate is |H_2(T) - H_2^coarse(T)| when a coarse pair is given.
    """
    setup = prepare(2, pair.eps, pair, rho0, sigma, T, n_steps, n_save, seed)
    times = list(setup.save_times)
    H2, ckp, marg = _liouville_entropy(pair.force_1d(), rho0, sigma, times, setup.path, setup.dt)
    grid_error = 0.0
    if coarse_pair is not None:
        csetup_path = meanfield_pde.solve_path(coarse_rho0, coarse_pair.force_1d(), sigma, T, n_steps)
        Hc, _, _ = _liouville_entropy(coarse_pair.force_1d(), coarse_rho0, sigma, times, csetup_path, setup.dt)
        grid_error = abs(H2[-1] - Hc[-1])
    records = run_replicas(setup, range(replicas), threads)
    use_dx = pair.mode == "gradient_product"
    series = [r.l2_moll_dx if use_dx else r.l2_moll for r in records]
    Wn = kernels.gridfn.sobolev_norm(pair.W, 0, 2)
    mean, se = diagnostics.entropy_bound_curve(series, records[0].times, Wn, sigma)
    return LiouvilleResult(times, H2, list(mean), list(se), grid_error, ckp, marg, records)


def _liouville_entropy(k, rho0, sigma, times, path, dt):
    state = meanfield_pde.LiouvilleState2(meanfield_pde.tensor_square(rho0))
    H2, ckp, marg = [], [], []
    step_of = {round(t / dt): t for t in times}
    for s in sorted(step_of):
        t = step_of[s]
        state = meanfield_pde.liouville2_advance(state, k, sigma, t, dt) if t > state.t else state
        rho = path.rho[s]
        ref = meanfield_pde.tensor_square(rho)
        h = meanfield_pde.relative_entropy(state.rho2, ref)
        H2.append(0.5 * h)
        m = meanfield_pde.marginal(state.rho2)
        ckp.append((meanfield_pde.l1_distance(state.rho2, ref), h))
        ckp.append((meanfield_pde.l1_distance(m, rho), meanfield_pde.relative_entropy(m, rho)))
        marg.append(meanfield_pde.l1_distance(m, rho))
    return H2, ckp, marg


# -- de-regularization --------------------------------------------------------------------------


@dataclass
class DeregRow:
    eps: float
    l1_final: float
    l1_time_integrated: float
    residual_final: float
    residual_time_integrated: float


def pde_compare(R: float, eps_list, rho0: GridFunction, sigma: float, T: float, n_save: int = 32,
                route: str = "force", sign: float = 1.0) -> list:
    """rho^eps against the unmollified bounded-confidence solution rho, for each eps."""
    g = rho0.grid
    k = kernels.bounded_confidence_force(R, g, sign)
    times = np.linspace(0.0, T, n_save + 1)
    ref = _save_path(rho0, k, sigma, times)
    out = []
    for eps in eps_list:
        pair = kernels.bounded_confidence_pair(R, eps, g, route=route, sign=sign)
        ke = pair.force_1d()
        sol = _save_path(rho0, ke, sigma, times)
        l1 = [meanfield_pde.l1_distance(a, b) for a, b in zip(sol, ref)]
        res = [meanfield_pde.deregularization_residual(k, ke, r) for r in sol]
        out.append(DeregRow(eps, l1[-1], diagnostics.trapezoid(l1, times), res[-1], diagnostics.trapezoid(res, times)))
    return out


def _save_path(rho0, k, sigma, times):
    state = meanfield_pde.PdeState(rho0, 0.0, sigma, k)
    out = [state.rho]
    for t in times[1:]:
        state = meanfield_pde.advance(state, float(t))
        out.append(state.rho)
    return out


# -- kernel certification ----------------------------------------------------------------------


def default_eps_sweep(grid: Grid, base: str = "standard_bump", count: int = 5) -> list:
    """Geometric eps values from ~L/8 down to the resolvability limit."""
    lo = 4.0 * grid.h if base == "standard_bump" else 2.0 * grid.h
    hi = max(grid.L / 8.0, 2.0 * lo)
    return list(np.geomspace(hi, lo, count))


def factorization_residual(pair, target: GridFunction) -> float:
    P = pair.potential().real()
    return gridfn.lp_norm(P - target, 2) / gridfn.lp_norm(target, 2)


def is_finite(x) -> bool:
    return x is not None and math.isfinite(x)
