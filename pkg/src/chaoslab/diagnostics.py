"""Estimators for the relative-entropy method and their Monte Carlo aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import gridfn, meanfield_pde
from .gridfn import GridError, GridFunction
from .rng import TAG_BOOTSTRAP, Stream
from .sde import EmpiricalMeasure, deposit

MIN_REPLICAS = 8
MIN_KDE_SAMPLES = 64


class DiagnosticsError(ValueError):
    pass


# -- per-snapshot estimators ------------------------------------------------------------


class MollifiedL2:
    """||V * (mu - rho)||^2 and ||V_x * (mu - rho)||^2 by deposit + FFT.

    The transforms of V and V_x are computed once and reused for every
    snapshot, since a run evaluates thousands of them.
    """

    def __init__(self, V: GridFunction):
        g = V.grid
        if g.dim != 1:
            raise GridError("mollified L2 distances are one-dimensional")
        self.grid = g
        self.Vhat = gridfn.fourier(V)
        self.Vxhat = self.Vhat * gridfn.derivative_symbol(0).evaluate(g)

    def _signed(self, positions, rho: GridFunction) -> np.ndarray:
        nu = deposit(positions, self.grid).values - rho.values
        return np.fft.fft(np.fft.ifftshift(nu)) * self.grid.h

    def _sq(self, hat):
        v = np.fft.ifft(hat).real / self.grid.h
        return math.fsum(v * v) * self.grid.h

    def both(self, positions, rho: GridFunction) -> tuple[float, float]:
        nuhat = self._signed(positions, rho)
        return self._sq(self.Vhat * nuhat), self._sq(self.Vxhat * nuhat)

    def value(self, positions, rho: GridFunction) -> float:
        return self._sq(self.Vhat * self._signed(positions, rho))


def mollified_l2(mu: EmpiricalMeasure, rho_eps: GridFunction, V_eps: GridFunction, derivative: bool = False) -> float:
    """quadrature((V * mu - V * rho)^2), with V_x in place of V if ``derivative``."""
    est = MollifiedL2(V_eps)
    l2, l2dx = est.both(mu.positions, rho_eps)
    return l2dx if derivative else l2


def initial_l2_identity(rho0: GridFunction, V: GridFunction, N: int) -> float:
    """(1/N)(int (V^2 * rho0) - int (V * rho0)^2): the exact mean of the t = 0 distance."""
    V2 = GridFunction(V.grid, V.values**2)
    a = gridfn.quadrature(gridfn.convolve(V2, rho0))
    Vr = gridfn.convolve(V, rho0)
    b = gridfn.quadrature(GridFunction(V.grid, Vr.values**2))
    return (a - b) / N


def modulated_energy(mu: EmpiricalMeasure, rho_eps: GridFunction, pair, sigma: float) -> float:
    """(c / sigma^2) <W^ * (mu - rho), V * (mu - rho)> with W^(x) = W(-x), c = pair.potential_sign."""
    g = rho_eps.grid
    nu = deposit(mu.positions, g) - rho_eps
    a = gridfn.convolve(pair.W.reflected(), nu)
    b = gridfn.convolve(pair.V, nu)
    inner = gridfn.quadrature(GridFunction(g, np.real(a.values * b.values)))
    return pair.potential_sign * inner / sigma**2


def modulated_energy_direct(mu: EmpiricalMeasure, rho_eps: GridFunction, pair, sigma: float) -> float:
    """Same quantity as the double sum of (W * V)(x - y) over the signed grid measure (O(n^2))."""
    g = rho_eps.grid
    P = pair.potential().real().values
    w = (deposit(mu.positions, g) - rho_eps).values * g.h
    n = g.n
    i = np.arange(n)
    M = P[(i[:, None] - i[None, :] + n // 2) % n]
    return float(w @ M @ w) / sigma**2


def lln_defect(Y, force, force_field: GridFunction, threads=None) -> float:
    """max_i |(1/N) sum_j k(Y^i - Y^j) - (k * rho)(Y^i)|."""
    pair_sum = force.pair_mean(Y, Y, threads)
    return float(np.max(np.abs(pair_sum - gridfn.evaluate_at(force_field, Y))))


# -- records and aggregation --------------------------------------------------------------


@dataclass
class DiagnosticsRecord:
    replica_id: int
    N: int
    times: np.ndarray
    l2_moll: np.ndarray
    l2_moll_dx: np.ndarray
    modulated_energy: np.ndarray
    coupling_max: np.ndarray
    lln_defect: np.ndarray
    boundary_hits: int = 0
    x1_final: float = float("nan")

    def sup_l2(self) -> float:
        return float(np.max(self.l2_moll))

    def int_l2_dx(self) -> float:
        return trapezoid(self.l2_moll_dx, self.times)

    def sup_abs_energy(self) -> float:
        return float(np.max(np.abs(self.modulated_energy)))

    def rows(self):
        for k, t in enumerate(self.times):
            yield (self.replica_id, self.N, float(t), float(self.l2_moll[k]), float(self.l2_moll_dx[k]),
                   float(self.modulated_energy[k]), float(self.coupling_max[k]), float(self.lln_defect[k]))

    header = ("replica", "N", "t", "l2_moll", "l2_moll_dx", "modulated_energy", "coupling_max", "lln_defect")


def trapezoid(y, t) -> float:
    y, t = np.asarray(y, dtype=float), np.asarray(t, dtype=float)
    return float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(t)))


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if len(v) < 2:
        return float(v.mean()) if len(v) else float("nan"), float("nan")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


def _need(records, k=MIN_REPLICAS):
    if len(records) < k:
        raise DiagnosticsError(f"need at least {k} replicas, got {len(records)}")


def entropy_bound_curve(l2_series, times, W_norm_l2: float, sigma: float, min_replicas: int = MIN_REPLICAS):
    """Mean and standard error of (||W||^2 / sigma^2) int_0^t l2 ds at every save time."""
    arr = np.atleast_2d(np.asarray(l2_series, dtype=float))
    if arr.shape[0] < min_replicas:
        raise DiagnosticsError(f"need at least {min_replicas} replicas, got {arr.shape[0]}")
    t = np.asarray(times, dtype=float)
    steps = 0.5 * (arr[:, 1:] + arr[:, :-1]) * np.diff(t)
    cum = np.concatenate([np.zeros((arr.shape[0], 1)), np.cumsum(steps, axis=1)], axis=1)
    cum *= W_norm_l2**2 / sigma**2
    mean = cum.mean(axis=0)
    if arr.shape[0] < 2:
        return mean, np.full_like(mean, np.nan)
    se = cum.std(axis=0, ddof=1) / math.sqrt(arr.shape[0])
    return mean, se


def entropy_bound_rhs(l2_series, times, W_norm_l2: float, sigma: float) -> tuple[float, float]:
    """Upper bound on H_N at the last save time, as (mean, standard error)."""
    mean, se = entropy_bound_curve(l2_series, times, W_norm_l2, sigma)
    return float(mean[-1]), float(se[-1])


@dataclass
class EventFrequency:
    frequency: float
    lo: float
    hi: float
    hits: int
    count: int


def wilson_interval(hits: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def _frequency(hits, n):
    lo, hi = wilson_interval(hits, n)
    return EventFrequency(hits / n if n else 0.0, lo, hi, hits, n)


def coupling_event_frequency(records, alpha: float, N: int, min_replicas: int = MIN_REPLICAS) -> EventFrequency:
    """Fraction of replicas with sup_t max_i |X^i - Y^i| >= N^-alpha."""
    _need(records, min_replicas)
    thr = float(N) ** (-alpha)
    hits = sum(1 for r in records if float(np.max(r.coupling_max)) >= thr)
    return _frequency(hits, len(records))


def lln_event_frequency(records, alpha: float, delta: float, N: int, min_replicas: int = MIN_REPLICAS) -> EventFrequency:
    """Fraction of (replica, save time) pairs with lln_defect > N^-(alpha + delta)."""
    if not 0 < alpha + delta < 0.5:
        raise DiagnosticsError(f"alpha + delta = {alpha + delta} must lie in (0, 1/2)")
    _need(records, min_replicas)
    thr = float(N) ** (-(alpha + delta))
    d = np.concatenate([np.asarray(r.lln_defect) for r in records])
    return _frequency(int(np.count_nonzero(d > thr)), len(d))


def kde(samples, V: GridFunction) -> GridFunction:
    """Density estimate V * (empirical measure), renormalized to unit mass."""
    est = gridfn.convolve(V, deposit(samples, V.grid))
    vals = np.clip(est.values, 0.0, None)
    return GridFunction(V.grid, vals / (math.fsum(vals) * V.grid.h), density=True)


def smoothed_reference(rho: GridFunction, V: GridFunction) -> GridFunction:
    ref = gridfn.convolve(V, rho)
    vals = np.clip(ref.values, 0.0, None)
    return GridFunction(rho.grid, vals / (math.fsum(vals) * rho.grid.h), density=True)


@dataclass
class EntropyEstimate:
    value: float
    se: float
    n_samples: int


def marginal_entropy_estimate(samples_X1, rho_eps: GridFunction, V_eps: GridFunction, n_boot: int = 200,
                              seed: int = 0) -> EntropyEstimate:
    """H(V * law(X^1) | V * rho) with both sides smoothed by V, plus a bootstrap standard error."""
    x = np.asarray(samples_X1, dtype=float)
    if len(x) < MIN_KDE_SAMPLES:
        raise DiagnosticsError(f"need at least {MIN_KDE_SAMPLES} samples, got {len(x)}")
    ref = smoothed_reference(rho_eps, V_eps)
    value = meanfield_pde.relative_entropy(kde(x, V_eps), ref)
    stream = Stream(seed, 0)
    boots = []
    for b in range(n_boot):
        idx = stream.integers(b, np.arange(len(x)), len(x), tag=TAG_BOOTSTRAP)
        boots.append(meanfield_pde.relative_entropy(kde(x[idx], V_eps), ref))
    return EntropyEstimate(float(value), float(np.std(boots, ddof=1)), len(x))


# -- rates ------------------------------------------------------------------------------------


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    ci_lo: float
    ci_hi: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_hi - self.ci_lo)


def rate_fit(Ns, values, level: float = 0.95) -> RateFit:
    """OLS of log(value) on log(N) with a t-based confidence interval for the slope."""
    N = np.asarray(Ns, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(N) < 4:
        raise DiagnosticsError("rate_fit needs at least 4 N values")
    if np.any(v <= 0) or np.any(N <= 0):
        raise DiagnosticsError("rate_fit needs positive values")
    x, y = np.log(N), np.log(v)
    xm = x.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - y.mean())) / sxx)
    intercept = float(y.mean() - slope * xm)
    resid = y - (intercept + slope * x)
    dof = len(x) - 2
    s2 = float(np.sum(resid**2)) / dof
    half = stats.t.ppf(0.5 + level / 2, dof) * math.sqrt(s2 / sxx)
    return RateFit(slope, intercept, math.sqrt(float(np.mean(resid**2))), slope - half, slope + half)


def predicted_rate_table(a_W: float, a_V: float, alpha: float, beta: float, gamma: float) -> dict:
    """Net exponents in N of the four terms of the L^2 bound with eps = N^-beta.

    Terms: 1/(N eps^(2aW+4aV)), 1/(N^2alpha eps^(2aW+4aV)), 1/(N^(alpha+1/2) eps^(aW+3aV)),
    1/(N^gamma eps^(2aW+4aV)).  The binding exponent is the largest (slowest decay).
    """
    p = 2 * a_W + 4 * a_V
    q = a_W + 3 * a_V
    terms = {
        "1/N": -1.0 + beta * p,
        "1/N^(2alpha)": -2.0 * alpha + beta * p,
        "1/N^(alpha+1/2)": -(alpha + 0.5) + beta * q,
        "1/N^gamma": -gamma + beta * p,
    }
    binding = max(terms, key=terms.get)
    return {"terms": terms, "binding": binding, "binding_exponent": terms[binding]}


def predicted_rate_table_for(pair, alpha, beta, gamma) -> dict:
    return predicted_rate_table(pair.a_W, pair.a_V, alpha, beta, gamma)


def mollifier_rate_exponents(alpha: float, beta: float, gamma: float, a_k: float) -> dict:
    """Decay rates r (bound ~ N^-r) of the four dominant terms when V = J^eps and |k^eps| <= eps^-a_k."""
    rates = {
        "2alpha-beta-(2a_k+2)beta": 2 * alpha - beta - (2 * a_k + 2) * beta,
        "alpha+1/2-3beta-(a_k+1)beta": alpha + 0.5 - 3 * beta - (a_k + 1) * beta,
        "2alpha-3beta-a_k beta": 2 * alpha - 3 * beta - a_k * beta,
        "gamma-(3+2a_k)beta": gamma - (3 + 2 * a_k) * beta,
    }
    slowest = min(rates, key=rates.get)
    return {"rates": rates, "binding": slowest, "binding_exponent": -rates[slowest]}


def mann_kendall_decreasing(values, level: float = 0.95) -> tuple[bool, float, float]:
    """One-sided Mann-Kendall test for a decreasing trend: (reject 'no trend', S, p-value).

    Uses the exact null distribution of S for n <= 10 (enumerated over
    permutations) and the normal approximation beyond that.
    """
    v = np.asarray(values, dtype=float)
    n = len(v)
    S = _mk_stat(v)
    if n <= 10:
        p = _mk_exact_cdf(n, S)
    else:
        var = n * (n - 1) * (2 * n + 5) / 18.0
        z = (S + 1) / math.sqrt(var) if S < 0 else (S - 1) / math.sqrt(var) if S > 0 else 0.0
        p = float(stats.norm.cdf(z))
    return p < 1 - level, float(S), float(p)


def _mk_stat(v) -> int:
    n = len(v)
    return int(sum(np.sign(v[j] - v[i]) for i in range(n) for j in range(i + 1, n)))


def _mk_exact_cdf(n: int, S: int) -> float:
    """P(S' <= S) under exchangeability: S' = pairs concordant - discordant (no ties)."""
    # inversion-count distribution via the Mahonian recurrence
    counts = np.zeros(1, dtype=float)
    counts[0] = 1.0
    for m in range(1, n + 1):
        new = np.zeros(len(counts) + m - 1)
        for k in range(m):
            new[k:k + len(counts)] += counts
        counts = new
    total = counts.sum()
    pairs = n * (n - 1) // 2
    inv = np.arange(len(counts))
    s_vals = pairs - 2 * inv
    return float(counts[s_vals <= S].sum() / total)


def is_nonincreasing_trend(values, level: float = 0.95) -> bool:
    """Nonincreasing claim: a one-sided Mann-Kendall test finds no significant increasing trend."""
    v = np.asarray(values, dtype=float)
    rejected_increase = mann_kendall_decreasing(-v, level)[0]
    return not rejected_increase


@dataclass
class SweepReport:
    """Per-N Monte Carlo statistics and log-log rate fits."""

    alpha: float
    delta: float
    beta: float
    gamma: float
    rows: list = field(default_factory=list)
    per_N: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    predicted: dict = field(default_factory=dict)

    def add(self, N: int, records, W_norm_l2: float, sigma: float, use_dx: bool, strict: bool = True):
        """Aggregate one N.  ``strict=False`` accepts fewer than 8 replicas (smoke runs)."""
        least = MIN_REPLICAS if strict else 1
        _need(records, least)
        sup_l2 = [r.sup_l2() for r in records]
        int_dx = [r.int_l2_dx() for r in records]
        sup_K = [r.sup_abs_energy() for r in records]
        series = [r.l2_moll_dx if use_dx else r.l2_moll for r in records]
        eb, eb_se = entropy_bound_curve(series, records[0].times, W_norm_l2, sigma, least)
        eb_mean, eb_se = float(eb[-1]), float(eb_se[-1])
        cf = coupling_event_frequency(records, self.alpha, N, least)
        lf = lln_event_frequency(records, self.alpha, self.delta, N, least)
        stats_N = {
            "sup_l2_moll": mean_se(sup_l2),
            "int_l2_moll_dx": mean_se(int_dx),
            "sup_abs_modulated_energy": mean_se(sup_K),
            "coupling_event_freq": (cf.frequency, math.sqrt(cf.frequency * (1 - cf.frequency) / cf.count)),
            "lln_complement_freq": (lf.frequency, math.sqrt(lf.frequency * (1 - lf.frequency) / lf.count)),
            "entropy_bound": (eb_mean, eb_se),
        }
        self.per_N[N] = {"count": len(records), "stats": stats_N, "coupling": cf, "lln": lf}
        for q, (m, s) in stats_N.items():
            self.rows.append((N, q, m, s, len(records)))

    def fit(self, quantities=("sup_l2_moll", "int_l2_moll_dx", "sup_abs_modulated_energy", "entropy_bound")):
        Ns = sorted(self.per_N)
        for q in quantities:
            vals = [self.per_N[N]["stats"][q][0] for N in Ns]
            if len(Ns) >= 4 and all(v > 0 for v in vals):
                self.fits[q] = rate_fit(Ns, vals)
        return self.fits

    def series(self, quantity: str):
        Ns = sorted(self.per_N)
        return Ns, [self.per_N[N]["stats"][quantity][0] for N in Ns]

    header = ("N", "quantity", "mean", "stderr", "count")
    rates_header = ("quantity", "slope", "ci_lo", "ci_hi", "predicted_binding_exponent")

    def rate_rows(self):
        pred = self.predicted.get("binding_exponent", float("nan"))
        for q, f in self.fits.items():
            yield (q, f.slope, f.ci_lo, f.ci_hi, pred)
