"""Acceptance suite: one test per criterion, each at its stated tolerance and scale.

The default-preset sweep (criterion 8) runs about 29 minutes on a single core.
"""

import math
import os
import time

import numpy as np
import pytest

from chaoslab import cli, config, diagnostics as dg, experiment, gridfn, kernels, meanfield_pde as mp, sde
from chaoslab.gridfn import Grid, GridFunction

SIGMA = 0.5


# -- 1-4: kernels ----------------------------------------------------------------------------------


def test_1_mollifier_scaling(criterion):
    t0 = time.perf_counter()
    g = Grid(1, 4.0, 4096)
    eps = [2.0**-k for k in range(3, 8)]
    s0, _ = kernels.certify_mollifier_scaling("standard_bump", g, 0, eps)
    s1, _ = kernels.certify_mollifier_scaling("standard_bump", g, 1, eps)
    dt = time.perf_counter() - t0
    ok = abs(s0 + 0.5) <= 0.02 and abs(s1 + 1.5) <= 0.05 and dt < 10
    criterion(1, "mollifier scaling", ok, f"L2 slope {s0:.4f}, H1 slope {s1:.4f}, {dt:.2f} s")


def test_2_factorization_residuals(criterion):
    t0 = time.perf_counter()
    g3 = Grid(3, 4.0, 64)
    pair = kernels.coulomb_factorized_pair(3, 0.05, g3, route="weierstrass_sqrt")
    coul = experiment.factorization_residual(pair, kernels.regularized_coulomb_oracle(3, 0.05, g3))
    dt = time.perf_counter() - t0
    bes = []
    for g in (Grid(1, 8.0, 1024), Grid(3, 4.0, 32)):
        bes.append(experiment.factorization_residual(kernels.bessel_pair(g.dim, 0.05, g),
                                                     kernels.bessel_target(0.05, g)))
    ok = coul <= 1e-2 and max(bes) <= 1e-6 and dt < 120
    criterion(2, "Coulomb / Bessel factorization", ok,
              f"Coulomb residual {coul:.2e} ({dt:.1f} s), Bessel residual {max(bes):.2e}")


def test_3_plancherel_gradient_scaling(criterion):
    g = Grid(3, 4.0, 64)
    eps = [0.4, 0.2, 0.1, 0.05]
    vals = []
    for e in eps:
        V = kernels.coulomb_factorized_pair(3, e, g).V
        vals.append(sum(gridfn.lp_norm(c, 2) ** 2 for c in gridfn.gradient(V)))
    s, _ = kernels.fit_power_law(eps, vals)
    criterion(3, "gradient scaling in d = 3", abs(s + 1.5) <= 0.1, f"slope {s:.4f} (target -1.5)")


def test_4_bounded_confidence_closed_form(criterion):
    g = Grid(1, 8.0, 512)
    R = 1.0
    box = kernels.indicator(g, -R / 2, R / 2)
    U = kernels.bounded_confidence_potential(R, g)
    err = float(np.max(np.abs(gridfn.convolve(box, box).values + U.values)))
    x = g.axis()
    at = lambda p: U.values[int(np.argmin(np.abs(x - p)))]  # noqa: E731
    exact = at(0.0) == -R and at(R) == 0.0 and at(-R) == 0.0
    criterion(4, "bounded-confidence closed form", err <= 2 * g.h and exact,
              f"max |box*box + U| = {err:.3e} (2h = {2 * g.h:.3e}), U(0) = {at(0.0)}, U(+-R) = {at(R)}, {at(-R)}")


# -- 5-7: PDE and statistical oracles -----------------------------------------------------------


@pytest.fixture(scope="module")
def run5():
    out = {"pairs": []}
    g = Grid(1, 8.0, 512)
    s = mp.PdeState(mp.gaussian_density(g), 0.0, SIGMA, GridFunction.zeros(g))
    s = mp.advance(s, 0.5, dt_max=0.01)
    exact = mp.gaussian_density(g, 0.0, 1.0 + SIGMA**2 * 0.5)
    out["diffusion"] = mp.l1_distance(s.rho, exact)
    out["pairs"].append((s.rho, exact))

    g = Grid(1, 8.0, 1024)
    pair = kernels.bounded_confidence_pair(1.0, 0.5, g)
    s = mp.PdeState(mp.gaussian_density(g), 0.0, SIGMA, pair.force_1d())
    drift = 0.0
    for _ in range(1000):
        s = mp.pde_step(s, 5e-4)
        drift = max(drift, abs(gridfn.quadrature(s.rho) - 1.0))
    out["mass"] = drift
    out["pairs"].append((s.rho, mp.gaussian_density(g, 0.0, 1.0 + SIGMA**2 * 0.5)))

    g = Grid(1, 6.0, 128)
    rho0 = mp.gaussian_density(g)
    z = GridFunction.zeros(g)
    st2 = mp.liouville2_advance(mp.LiouvilleState2(mp.tensor_square(rho0)), z, SIGMA, 0.5, dt_max=0.05)
    one = mp.advance(mp.PdeState(rho0, 0.0, SIGMA, z), 0.5, dt_max=0.05)
    ref = mp.tensor_square(one.rho)
    out["tensor"] = mp.l1_distance(st2.rho2, ref)
    out["pairs"] += [(st2.rho2, ref), (mp.marginal(st2), one.rho)]
    return out


def test_5_pde_oracles(criterion, run5):
    ok = run5["diffusion"] <= 1e-3 and run5["mass"] <= 1e-10 and run5["tensor"] <= 1e-3
    criterion(5, "PDE oracles", ok, f"diffusion L1 {run5['diffusion']:.2e}, mass drift {run5['mass']:.2e}, "
                                    f"tensorization L1 {run5['tensor']:.2e}")


@pytest.fixture(scope="module")
def run6():
    N, M, seed = 256, 400, 2024
    g = Grid(1, 8.0, 1024)
    rho0 = mp.gaussian_density(g)
    eps = sde.epsilon_schedule(N, 0.05)
    xs = experiment.initial_samples(rho0, N, seed, range(M))
    out = {"pairs": [], "rows": {}}
    t0 = time.perf_counter()
    for name, pair in (("bounded_confidence", kernels.bounded_confidence_pair(1.0, eps, g)),
                       ("bessel", kernels.bessel_pair(1, eps, g))):
        V = pair.V.real()
        est = dg.MollifiedL2(V)
        mean, se = dg.mean_se([est.value(x, rho0) for x in xs])
        out["rows"][name] = (mean, se, dg.initial_l2_identity(rho0, V, N))
        ref = dg.smoothed_reference(rho0, V)
        out["pairs"] += [(dg.kde(x, V), ref) for x in xs[:20]]
    out["time"] = time.perf_counter() - t0
    return out


def test_6_initial_identity(criterion, run6):
    parts, ok = [], run6["time"] < 60
    for name, (mean, se, want) in run6["rows"].items():
        z = (mean - want) / se
        ok &= abs(z) <= 3
        parts.append(f"{name} {mean:.4e} vs {want:.4e} ({z:+.2f} SE)")
    criterion(6, "t = 0 identity", ok, ", ".join(parts) + f", {run6['time']:.1f} s")


@pytest.fixture(scope="module")
def run7():
    g, cg = Grid(1, 4.0, 128), Grid(1, 4.0, 64)
    eps = sde.epsilon_schedule(2, 0.05)
    t0 = time.perf_counter()
    res = experiment.liouville_oracle(kernels.bounded_confidence_pair(1.0, eps, g), mp.gaussian_density(g), SIGMA,
                                      0.25, 64, 400, 77, n_save=16,
                                      coarse_pair=kernels.bounded_confidence_pair(1.0, eps, cg),
                                      coarse_rho0=mp.gaussian_density(cg))
    res.elapsed = time.perf_counter() - t0
    return res


def test_7_entropy_bound_at_two_particles(criterion, run7):
    r = run7
    slack = 2 * (r.bound_se[-1] + r.grid_error)
    ok = r.H2[-1] <= r.bound_mean[-1] + slack and r.elapsed < 600
    criterion(7, "N = 2 entropy bound", ok,
              f"H2(T) = {r.H2[-1]:.4e} <= {r.bound_mean[-1]:.4e} + {slack:.2e} "
              f"(SE {r.bound_se[-1]:.1e}, grid {r.grid_error:.1e}), {r.elapsed:.1f} s")


# -- 8: convergence trends with the default preset -------------------------------------------------


@pytest.mark.slow
def test_8_convergence_trends(criterion, tmp_path):
    cfg = config.validate(config.load(overrides=[{"output_dir": str(tmp_path)}]), "rate-sweep")
    t0 = time.perf_counter()
    report = cli._sweep(cfg, os.cpu_count() or 1, "rate-sweep", strict=True)
    elapsed = time.perf_counter() - t0
    Ns, sup = report.series("sup_l2_moll")
    dec, S, p = dg.mann_kendall_decreasing(sup)
    fit = report.fits["sup_l2_moll"]
    slope_ok = fit.slope <= -0.5 + fit.half_width
    freq = [report.per_N[N]["coupling"].frequency for N in Ns]
    freq_ok = dg.is_nonincreasing_trend(freq)
    # the limit is 30 min on 8 cores; with fewer cores the budget scales with the replica pool
    cores = os.cpu_count() or 1
    budget = 1800 * 8 / min(cores, 8)
    ok = dec and slope_ok and freq_ok and elapsed < budget
    criterion(8, "convergence trends", ok,
              f"(a) Mann-Kendall S = {S:.0f}, p = {p:.4f}; (b) slope {fit.slope:.3f} "
              f"[{fit.ci_lo:.3f}, {fit.ci_hi:.3f}]; (c) coupling freq {['%.3f' % f for f in freq]}; "
              f"{elapsed / 60:.1f} min on {cores} core(s), budget {budget / 60:.0f} min")


# -- 9: CKP on every density pair from runs 5-7 ----------------------------------------------------


def test_9_ckp_chain(criterion, run5, run6, run7):
    worst, count, bad = -math.inf, 0, 0
    for p, q in run5["pairs"] + run6["pairs"]:
        gap = mp.l1_distance(p, q) ** 2 - 2 * mp.relative_entropy(p, q)
        worst, count, bad = max(worst, gap), count + 1, bad + (gap > 1e-8)
    for l1, h in run7.ckp_pairs:
        gap = l1 * l1 - 2 * h
        worst, count, bad = max(worst, gap), count + 1, bad + (gap > 1e-8)
    criterion(9, "CKP chain", bad == 0, f"{count} pairs, {bad} violations, max(l1^2 - 2H) = {worst:.2e}")


# -- 10: de-regularization -----------------------------------------------------------------------


def test_10_deregularization(criterion):
    g = Grid(1, 8.0, 4096)
    t0 = time.perf_counter()
    rows = experiment.pde_compare(1.0, [0.2, 0.1, 0.05, 0.025], mp.gaussian_density(g), SIGMA, 0.5)
    dt = time.perf_counter() - t0
    l1 = [r.l1_final for r in rows]
    res = [r.residual_final for r in rows]
    dec = lambda v: all(b < a for a, b in zip(v, v[1:]))  # noqa: E731
    ok = dec(l1) and dec(res) and dec([r.l1_time_integrated for r in rows]) and dt < 300
    criterion(10, "de-regularization", ok,
              f"L1 {['%.2e' % v for v in l1]}, residual {['%.2e' % v for v in res]}, {dt:.1f} s")


# -- 11: determinism ------------------------------------------------------------------------------


def test_11_thread_determinism(criterion, tmp_path):
    base = ["--set", "schedule.N_list=[64,128,256,512]", "--set", "diagnostics.replicas=8",
            "--set", "sde.n_steps=32", "--set", "sde.n_save=8", "--seed", "11"]
    blobs = {}
    for th in (1, 4, 8):
        out = tmp_path / f"t{th}"
        assert cli.main(["rate-sweep", *base, "--out", str(out), "--threads", str(th)]) == 0
        blobs[th] = {f: (out / f).read_bytes() for f in sorted(os.listdir(out))}
    same = blobs[1] == blobs[4] == blobs[8]
    criterion(11, "thread determinism", same,
              f"{len(blobs[1])} CSVs, {sum(len(b) for b in blobs[1].values())} bytes, identical at 1/4/8 threads")
