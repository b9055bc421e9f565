"""chaoslab command line: simulate | kernel-check | liouville-oracle | pde-compare | rate-sweep."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import backend, config, diagnostics, experiment, gridfn, kernels, meanfield_pde, sde
from .gridfn import Grid

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4

NUMERICAL_ERRORS = (meanfield_pde.CFLError, gridfn.GridError, kernels.KernelError, sde.SdeError,
                    diagnostics.DiagnosticsError, FloatingPointError, ArithmeticError)

log = logging.getLogger("chaoslab")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, cfg, command, header, rows):
    with open(path, "w", newline="") as fh:
        for line in config.header_lines(cfg, command):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


# -- builders ----------------------------------------------------------------------------


def grid_from(cfg, dim: int = 1) -> Grid:
    return Grid(dim, float(cfg["grid"]["L"]), int(cfg["grid"]["n"]))


def initial_density(cfg, grid: Grid):
    ini = cfg["initial"]
    rho0 = meanfield_pde.gaussian_density(grid, float(ini["mean"]), float(ini["var"]))
    gridfn.warn_boundary_mass(rho0)
    return rho0


def _load_gf(path):
    return gridfn.load_binary(path) if str(path).endswith((".bin", ".chgf")) else gridfn.load_csv(path)


def build_pair(cfg, eps: float, grid: Grid):
    k = cfg["kernel"]
    fam = k["family"]
    if fam == "bounded_confidence":
        return kernels.bounded_confidence_pair(float(k["R"]), eps, grid, route=k["route"], sign=float(k["sign"]))
    if fam == "bessel":
        route = k["route"] if k["route"] in ("weierstrass", "mollifier") else "weierstrass"
        return kernels.bessel_pair(grid.dim, eps, grid, route=route)
    if fam == "coulomb":
        route = k["route"] if k["route"] in ("mollify_both", "fourier_sqrt", "weierstrass_sqrt") else "weierstrass_sqrt"
        base = "gaussian" if route == "fourier_sqrt" else "standard_bump"
        return kernels.coulomb_factorized_pair(grid.dim, eps, grid, route=route, base=base)
    W, V = _load_gf(k["W_file"]), _load_gf(k["V_file"])
    if W.grid != grid or V.grid != grid:
        raise config.ConfigError("kernel.W_file", f"custom kernels must live on the configured grid {grid}")
    return kernels.KernelPair(W, V, k["mode"], float(k["a_W"]), float(k["a_V"]), eps=eps, name="custom")


def kernel_dim(cfg) -> int:
    k = cfg["kernel"]
    return int(k["d"]) if k["family"] in ("coulomb", "bessel") else 1


# -- subcommands -----------------------------------------------------------------------------


def _sweep(cfg, threads, command, strict):
    out = cfg["output_dir"]
    grid = grid_from(cfg)
    rho0 = initial_density(cfg, grid)
    s, dg = cfg["sde"], cfg["diagnostics"]
    beta = float(cfg["schedule"]["beta"])
    report = diagnostics.SweepReport(float(dg["alpha"]), float(dg["delta"]), beta, float(dg["gamma"]))
    all_records = []
    pair = None
    for N in cfg["schedule"]["N_list"]:
        eps = sde.epsilon_schedule(N, beta)
        pair = build_pair(cfg, eps, grid)
        setup = experiment.prepare(N, eps, pair, rho0, float(s["sigma"]), float(s["T"]), int(s["n_steps"]),
                                   int(s["n_save"]), int(cfg["seed"]), bool(dg["lln"]))
        records = experiment.run_replicas(setup, range(int(dg["replicas"])), threads)
        all_records.extend(records)
        Wn = gridfn.sobolev_norm(pair.W, 0, 2)
        report.add(N, records, Wn, float(s["sigma"]), pair.mode == "gradient_product", strict=strict)
        log.info("N=%d eps=%.4g done (%d replicas)", N, eps, len(records))
    report.predicted = diagnostics.predicted_rate_table(pair.a_W, pair.a_V, report.alpha, beta, report.gamma)
    if len(cfg["schedule"]["N_list"]) >= 4:
        report.fit()
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "records.csv"), cfg, command, diagnostics.DiagnosticsRecord.header,
              (row for r in all_records for row in r.rows()))
    write_csv(os.path.join(out, "summary.csv"), cfg, command, diagnostics.SweepReport.header, report.rows)
    write_csv(os.path.join(out, "rates.csv"), cfg, command, diagnostics.SweepReport.rates_header, report.rate_rows())
    terms = report.predicted["terms"]
    write_csv(os.path.join(out, "predicted.csv"), cfg, command, ("term", "exponent", "binding"),
              ((t, e, int(t == report.predicted["binding"])) for t, e in terms.items()))
    return report


def run_simulate(cfg, threads=None) -> int:
    _sweep(cfg, threads, "simulate", strict=False)
    return EXIT_OK


def run_rate_sweep(cfg, threads=None) -> int:
    report = _sweep(cfg, threads, "rate-sweep", strict=True)
    for q, f in report.fits.items():
        print(f"{q}: slope {f.slope:.4f} [{f.ci_lo:.4f}, {f.ci_hi:.4f}]")
    print(f"predicted binding exponent {report.predicted['binding_exponent']:.4f} ({report.predicted['binding']})")
    return EXIT_OK


def run_kernel_check(cfg, threads=None) -> int:
    dim = kernel_dim(cfg)
    grid = grid_from(cfg, dim)
    eps_list = list(cfg["kernel_check"]["eps_list"]) or experiment.default_eps_sweep(grid)
    if len(eps_list) < 4:
        raise config.ConfigError("kernel_check.eps_list", "need at least 4 eps values")
    cert = kernels.certify_pair(lambda e: build_pair(cfg, e, grid), eps_list)
    fam = cfg["kernel"]["family"]
    rows = []
    for row in cert.rows:
        eps = row[0]
        res = float("nan")
        if fam == "bessel" and cfg["kernel"]["route"] != "mollifier":
            res = experiment.factorization_residual(build_pair(cfg, eps, grid), kernels.bessel_target(eps, grid))
        elif fam == "coulomb" and dim == 3 and cfg["kernel"]["route"] in ("weierstrass_sqrt", "weierstrass"):
            res = experiment.factorization_residual(build_pair(cfg, eps, grid),
                                                    kernels.regularized_coulomb_oracle(3, eps, grid))
        rows.append(tuple(row) + (res,))
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    header = ("eps", "W_L2", "W_H2", "V_H2", "k_Linf", "factorization_residual")
    write_csv(os.path.join(out, "kernel_check.csv"), cfg, "kernel-check", header, rows)
    tol = cert.tolerance
    fit_rows = [("W", -cert.slope_W, cert.declared[0], cert.residual_W, int(abs(cert.slope_W + cert.declared[0]) <= tol)),
                ("V_H2", -cert.slope_V, cert.declared[1], cert.residual_V,
                 int(abs(cert.slope_V + cert.declared[1]) <= tol))]
    fit_header = ("factor", "fitted_exponent", "declared_exponent", "fit_residual", "within_tolerance")
    write_csv(os.path.join(out, "kernel_fit.csv"), cfg, "kernel-check", fit_header, fit_rows)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    w.writerow(fit_header)
    for r in fit_rows:
        w.writerow([_fmt(v) for v in r])
    if not cert.passed:
        log.warning("fitted exponents differ from the declared ones by more than %.2g", tol)
    return EXIT_OK


def run_liouville_oracle(cfg, threads=None) -> int:
    grid = grid_from(cfg)
    rho0 = initial_density(cfg, grid)
    s, dg = cfg["sde"], cfg["diagnostics"]
    eps = sde.epsilon_schedule(2, float(cfg["schedule"]["beta"]))
    pair = build_pair(cfg, eps, grid)
    coarse_n = int(cfg["liouville"]["coarse_n"]) or grid.n // 2
    cgrid = Grid(1, grid.L, coarse_n)
    res = experiment.liouville_oracle(pair, rho0, float(s["sigma"]), float(s["T"]), int(s["n_steps"]),
                                      int(dg["replicas"]), int(cfg["seed"]), int(s["n_save"]), threads,
                                      build_pair(cfg, eps, cgrid), initial_density(cfg, cgrid))
    rows = []
    for i, t in enumerate(res.times):
        l1_2, h_2 = res.ckp_pairs[2 * i]
        l1_m, h_m = res.ckp_pairs[2 * i + 1]
        rows.append((t, res.H2[i], res.bound_mean[i], res.bound_se[i], l1_2, 2 * h_2, l1_m, h_m))
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    header = ("t", "H2", "entropy_bound_mean", "entropy_bound_se", "l1_rho2_vs_tensor", "two_kl_rho2",
              "l1_marginal", "kl_marginal")
    write_csv(os.path.join(out, "liouville.csv"), cfg, "liouville-oracle", header, rows)
    ok = res.H2[-1] <= res.bound_mean[-1] + 2 * (res.bound_se[-1] + res.grid_error)
    print(f"H2(T) = {res.H2[-1]:.6g}, bound = {res.bound_mean[-1]:.6g} +/- {res.bound_se[-1]:.2g}, "
          f"grid error {res.grid_error:.2g}: {'holds' if ok else 'VIOLATED'}")
    return EXIT_OK


def run_pde_compare(cfg, threads=None) -> int:
    grid = grid_from(cfg)
    rho0 = initial_density(cfg, grid)
    s, pc, k = cfg["sde"], cfg["pde_compare"], cfg["kernel"]
    rows = experiment.pde_compare(float(k["R"]), [float(e) for e in pc["eps_list"]], rho0, float(s["sigma"]),
                                  float(s["T"]), int(pc["n_save"]), route=k["route"], sign=float(k["sign"]))
    out = cfg["output_dir"]
    os.makedirs(out, exist_ok=True)
    header = ("eps", "l1_final", "l1_time_integrated", "residual_final", "residual_time_integrated")
    write_csv(os.path.join(out, "pde_compare.csv"), cfg, "pde-compare", header,
              ((r.eps, r.l1_final, r.l1_time_integrated, r.residual_final, r.residual_time_integrated) for r in rows))
    return EXIT_OK


COMMANDS = {
    "simulate": run_simulate,
    "kernel-check": run_kernel_check,
    "liouville-oracle": run_liouville_oracle,
    "pde-compare": run_pde_compare,
    "rate-sweep": run_rate_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chaoslab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("config", nargs="?", help="TOML configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads (default: $CHAOSLAB_THREADS or 1)")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration key")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = [config.parse_override(o) for o in args.set]
        if args.seed is not None:
            overrides.append({"seed": args.seed})
        if args.out is not None:
            overrides.append({"output_dir": args.out})
        cfg = config.validate(config.load(args.config, overrides), args.command)
        threads = backend.resolve_threads(args.threads)
    except config.ConfigError as exc:
        print(exc.as_json(), file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(config.ConfigError("threads", str(exc)).as_json(), file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return EXIT_IO
    try:
        return COMMANDS[args.command](cfg, threads)
    except config.ConfigError as exc:
        print(exc.as_json(), file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"chaoslab: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NUMERICAL_ERRORS as exc:
        print(f"chaoslab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
