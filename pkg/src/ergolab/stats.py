"""Monte Carlo verification of statistical limit laws.

Covers Birkhoff-sum central limit behaviour (plain and functional),
autocorrelation decay with exponential/polynomial fits, Green-Kubo
variance, and large-deviation tail estimates.

Reproducibility contract: every ensemble quantity is a deterministic
function of (seed, N, n, law).  Random state is counter-based (Philox
keyed by the seed), per-orbit values are laid out by orbit index before
any reduction, and reductions are single fixed-order sums, so chunked or
threaded execution cannot change results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .maps import Observable, PiecewiseMap

_INV53 = 2.0**-53


@dataclass
class OrbitEnsemble:
    """A reproducible family of orbit initial conditions."""

    map: PiecewiseMap
    N: int
    n: int
    burn_in: int = 1000
    seed: int = 0
    law: str = "lebesgue"  # or "grid-weighted"
    grid_density: np.ndarray | None = None  # required for grid-weighted

    def __post_init__(self):
        if self.N < 1 or self.n < 1:
            raise ValueError("N and n must be positive")
        if self.law not in ("lebesgue", "grid-weighted"):
            raise ValueError(f"unknown initial law {self.law!r}")
        if self.law == "grid-weighted" and self.grid_density is None:
            raise ValueError("grid-weighted law needs grid_density")

    def initial_points(self) -> np.ndarray:
        """Initial conditions x_0, one per orbit, by counter-based draws."""
        rng = np.random.Generator(np.random.Philox(key=self.seed))
        u = rng.random(self.N)
        if self.law == "lebesgue":
            return u
        h = np.asarray(self.grid_density, dtype=float)
        cdf = np.concatenate([[0.0], np.cumsum(h)])
        cdf /= cdf[-1]
        k = h.size
        idx = np.searchsorted(cdf, u, side="right") - 1
        idx = np.clip(idx, 0, k - 1)
        frac = (u - cdf[idx]) / np.maximum(cdf[idx + 1] - cdf[idx], 1e-300)
        return (idx + frac) / k

    def _bit_stream(self, total_steps: int):
        """Packed random bit words for exact binary-shift simulation."""
        words = (total_steps + 63) // 64 + 1
        rng = np.random.Generator(np.random.Philox(key=self.seed + 1))
        return rng.integers(0, 2**64, size=(self.N, words),
                            dtype=np.uint64, endpoint=False)

    def iterate(self, n_steps: int, consumer) -> None:
        """Drive all orbits n_steps past burn-in, calling consumer(t, x)
        with the current position array at every step t = 0..n_steps-1.

        Binary-shift maps use an exact bit-window stream: double-precision
        iteration of x -> 2x mod 1 loses one random bit per step and
        collapses after 53 steps, so fresh low-order bits are injected
        from the orbit's own random tape, which reproduces the stationary
        symbolic process exactly.
        """
        x = self.initial_points()
        if self.map.exact_binary:
            total = self.burn_in + n_steps
            bits = self._bit_stream(total)
            # start from the tape instead of x so burn-in is exact too
            for t in range(total):
                if t >= self.burn_in:
                    consumer(t - self.burn_in, x)
                w = bits[:, t >> 6]
                bit = (w >> np.uint64(63 - (t & 63))) & np.uint64(1)
                x = x + x
                x = np.where(x >= 1.0, x - 1.0, x)
                x = x + bit.astype(float) * _INV53
            return
        for _ in range(self.burn_in):
            x = self.map.eval_array(x)
        for t in range(n_steps):
            consumer(t, x)
            x = self.map.eval_array(x)


@dataclass
class CLTReport:
    sigma2_gk: float
    sigma2_batch: float
    ks_distance: float
    sample_mean: float
    sample_var: float
    verdict: bool
    threshold: float
    N: int
    n: int


@dataclass
class DecayReport:
    n: np.ndarray
    rho: np.ndarray
    fit_kind: str  # "exponential" | "polynomial" | "decay-too-fast"
    rate: float
    r_squared: float
    noise_floor: float
    method: str = "mc"


@dataclass
class LDReport:
    epsilon: float
    n_grid: np.ndarray
    tail_prob: np.ndarray
    fitted_exponent: float
    all_zero: bool
    upper_bound: float  # 95% upper confidence bound when all counts vanish


# -- Birkhoff sums ----------------------------------------------------------------


def birkhoff_samples(ensemble: OrbitEnsemble, phi: Observable,
                     center: bool = True) -> np.ndarray:
    """Per-orbit normalized sums n^(-1/2) sum_{i<n} phi(f^i x)."""
    n = ensemble.n
    acc = np.zeros(ensemble.N)
    mean_acc = [0.0]

    def consume(t, x):
        v = np.asarray(phi(x), dtype=float)
        acc[:] += v
        mean_acc[0] += float(v.mean())

    ensemble.iterate(n, consume)
    if center:
        mu_hat = mean_acc[0] / n
        return (acc - n * mu_hat) / math.sqrt(n)
    return acc / math.sqrt(n)


def green_kubo_sigma(pmap: PiecewiseMap, phi: Observable, n_max: int = 30,
                     N: int = 200000, seed: int = 0,
                     rho: np.ndarray | None = None) -> tuple[float, DecayReport]:
    """sigma^2 = integral(phi^2) + 2 sum_n rho(n), summed to n_max.

    A precomputed autocorrelation sequence (e.g. from the operator method)
    can be passed instead of running the Monte Carlo estimator.  The
    truncation tail is negligible once terms fall under the noise floor;
    a nonsummable polynomial fit raises, since the variance is undefined.
    """
    if rho is None:
        rep = correlation(pmap, phi, phi, n_max=n_max, N=N, seed=seed)
    else:
        rep = decay_report_from_sequence(np.asarray(rho), N)
    fit = decay_fit(rep.rho[1:], noise_floor=rep.noise_floor)
    if fit.fit_kind == "polynomial" and fit.rate <= 1.0:
        raise ValueError("nonsummable correlation fit: variance undefined")
    # sum terms that stand above the noise floor; terms below it would
    # only add estimator noise, their true contribution goes in the tail
    a = np.abs(rep.rho[1:])
    above = np.nonzero(a > rep.noise_floor)[0]
    cutoff = int(above[-1]) + 1 if above.size else 0
    s = rep.rho[0] + 2.0 * float(np.sum(rep.rho[1:cutoff + 1]))
    if fit.fit_kind == "exponential" and math.isfinite(fit.rate) and fit.rate > 0:
        r = math.exp(-fit.rate)
        s += 2.0 * fit.prefactor * r ** (cutoff + 1) / (1.0 - r)
    return max(s, 0.0), rep


def decay_report_from_sequence(rho: np.ndarray, N: int) -> DecayReport:
    ns = np.arange(rho.size)
    fit = decay_fit(rho[1:], noise_floor=3.0 / math.sqrt(max(N, 1)))
    return DecayReport(n=ns, rho=rho, fit_kind=fit.fit_kind, rate=fit.rate,
                       r_squared=fit.r_squared, noise_floor=fit.noise_floor)


def clt_test(samples: np.ndarray, sigma2: float,
             threshold: float = 0.05) -> CLTReport:
    """Exact Kolmogorov-Smirnov distance of the sample set against the
    centered normal law with variance sigma2."""
    N = samples.size
    if sigma2 <= 0:
        # degenerate case: coboundary observables stay bounded
        spread = float(np.max(np.abs(samples)))
        return CLTReport(sigma2_gk=sigma2, sigma2_batch=float(np.var(samples)),
                         ks_distance=math.nan, sample_mean=float(samples.mean()),
                         sample_var=float(np.var(samples)),
                         verdict=spread < 1.0, threshold=threshold, N=N, n=0)
    xs = np.sort(samples)
    F = ndtr(xs / math.sqrt(sigma2))
    i = np.arange(1, N + 1)
    ks = float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))
    return CLTReport(sigma2_gk=sigma2, sigma2_batch=float(np.var(samples)),
                     ks_distance=ks, sample_mean=float(samples.mean()),
                     sample_var=float(np.var(samples)),
                     verdict=ks < threshold, threshold=threshold, N=N, n=0)


@dataclass
class FCLTReport:
    ks_endpoint: float
    ks_running_max: float
    ks_integral: float
    endpoint_samples: np.ndarray
    max_samples: np.ndarray
    integral_samples: np.ndarray


def fclt_paths(ensemble: OrbitEnsemble, phi: Observable, sigma2: float,
               threshold: float = 0.05) -> FCLTReport:
    """Path statistics of W_n(t) = n^(-1/2) * (partial sum at nt).

    The endpoint is compared against N(0, sigma2), the running maximum
    against the reflection-principle law P(max <= c) = 2 Phi(c) - 1, and
    the path integral against N(0, sigma2/3).
    """
    n, N = ensemble.n, ensemble.N
    sqrt_n = math.sqrt(n)
    S = np.zeros(N)
    run_max = np.zeros(N)
    integral = np.zeros(N)
    mean_acc = [0.0]

    def consume(t, x):
        v = np.asarray(phi(x), dtype=float)
        mean_acc[0] += float(v.mean())
        S[:] += v
        np.maximum(run_max, S, out=run_max)
        integral[:] += S

    ensemble.iterate(n, consume)
    mu_hat = mean_acc[0] / (n * 1.0)
    # recompute centered path statistics from the drift estimate: the
    # running max of the centered path needs a second pass
    S2 = np.zeros(N)
    run_max2 = np.full(N, 0.0)
    integral2 = np.zeros(N)

    def consume2(t, x):
        v = np.asarray(phi(x), dtype=float) - mu_hat
        S2[:] += v
        np.maximum(run_max2, S2, out=run_max2)
        integral2[:] += S2

    ensemble.iterate(n, consume2)
    W1 = S2 / sqrt_n
    Wmax = run_max2 / sqrt_n
    Wint = integral2 / (n * sqrt_n)
    sig = math.sqrt(sigma2)
    ks_end = _ks_against(W1, lambda c: ndtr(c / sig))
    ks_max = _ks_against(Wmax, lambda c: np.where(c >= 0, 2 * ndtr(c / sig) - 1, 0.0))
    ks_int = _ks_against(Wint, lambda c: ndtr(c / (sig / math.sqrt(3.0))))
    return FCLTReport(ks_endpoint=ks_end, ks_running_max=ks_max,
                      ks_integral=ks_int, endpoint_samples=W1,
                      max_samples=Wmax, integral_samples=Wint)


def _ks_against(samples: np.ndarray, cdf) -> float:
    xs = np.sort(samples)
    F = np.asarray(cdf(xs), dtype=float)
    N = xs.size
    i = np.arange(1, N + 1)
    return float(max(np.max(i / N - F), np.max(F - (i - 1) / N)))


# -- correlations -----------------------------------------------------------------


def correlation(pmap: PiecewiseMap, v: Observable, w: Observable,
                n_max: int = 30, N: int = 200000, seed: int = 0,
                burn_in: int = 1000, method: str = "mc", origins: int = 64,
                operator=None, density: np.ndarray | None = None) -> DecayReport:
    """Autocorrelation sequence rho(n) = E[v(x) w(f^n x)] - E v E w.

    MC method: stationary orbits averaged over both the ensemble and a
    window of time origins, which cuts the estimator variance roughly by
    the origin count.  Operator method: grid quadratures of the pushed
    density against w.
    """
    if method == "operator":
        return _correlation_operator(operator, density, v, w, n_max)
    T = max(origins, 1)
    steps = n_max + T
    ens = OrbitEnsemble(map=pmap, N=N, n=steps, burn_in=burn_in, seed=seed)
    ring = [None] * (n_max + 1)  # v values at the last n_max+1 steps
    acc = np.zeros(n_max + 1)
    counts = np.zeros(n_max + 1, dtype=int)
    sum_v = [0.0]
    sum_w = [0.0]

    def consume(t, x):
        wv = np.asarray(w(x), dtype=float)
        ring[t % (n_max + 1)] = np.asarray(v(x), dtype=float).copy()
        if t < T:
            sum_v[0] += float(ring[t % (n_max + 1)].mean())
        sum_w[0] += float(wv.mean())
        for lag in range(min(t, n_max) + 1):
            t0 = t - lag
            if t0 >= T:
                continue
            acc[lag] += float(np.mean(ring[t0 % (n_max + 1)] * wv))
            counts[lag] += 1

    ens.iterate(steps, consume)
    mean_v = sum_v[0] / T
    mean_w = sum_w[0] / steps
    rho = acc / counts - mean_v * mean_w
    floor = 3.0 / math.sqrt(N * T)
    fit = decay_fit(rho[1:], noise_floor=floor)
    return DecayReport(n=np.arange(n_max + 1), rho=rho, fit_kind=fit.fit_kind,
                       rate=fit.rate, r_squared=fit.r_squared,
                       noise_floor=floor, method="mc")


def _correlation_operator(op, h: np.ndarray, v: Observable, w: Observable,
                          n_max: int) -> DecayReport:
    k = op.k
    x = op.midpoints
    vv = np.asarray(v(x), dtype=float)
    wv = np.asarray(w(x), dtype=float)
    mu_v = float((vv * h).sum() / k)
    mu_w = float((wv * h).sum() / k)
    dens = (vv - mu_v) * h  # signed density of (v - mu_v) d mu
    rho = np.zeros(n_max + 1)
    MT = op.matrix.T.tocsr()
    cur = dens / k  # mass vector
    for n in range(n_max + 1):
        rho[n] = float((cur * (wv - mu_w)).sum())
        cur = MT @ cur
    fit = decay_fit(rho[1:], noise_floor=0.0)
    return DecayReport(n=np.arange(n_max + 1), rho=rho, fit_kind=fit.fit_kind,
                       rate=fit.rate, r_squared=fit.r_squared,
                       noise_floor=fit.noise_floor, method="operator")


@dataclass
class DecayFit:
    fit_kind: str
    rate: float
    r_squared: float
    noise_floor: float
    prefactor: float = 0.0


def decay_fit(rho: np.ndarray, noise_floor: float = 0.0) -> DecayFit:
    """Choose between exponential and polynomial decay by regression fit.

    rho is indexed from lag 1.  Points at or below the noise floor are
    dropped; if fewer than a handful survive the decay was too fast to
    resolve, which is reported as its own verdict.
    """
    a = np.abs(np.asarray(rho, dtype=float))
    ns = np.arange(1, a.size + 1, dtype=float)
    usable = a > max(noise_floor, 0.0)
    if noise_floor > 0 and int(usable.sum()) < 10:
        if int(usable.sum()) < 3:
            return DecayFit("decay-too-fast", math.inf, 1.0, noise_floor)
    mask = usable & (a > 0)
    if int(mask.sum()) < 2:
        return DecayFit("decay-too-fast", math.inf, 1.0, noise_floor)
    x1, y = ns[mask], np.log(a[mask])
    s1, i1 = np.polyfit(x1, y, 1)
    r2_exp = _r2(y, s1 * x1 + i1)
    x2 = np.log(x1)
    s2, i2 = np.polyfit(x2, y, 1)
    r2_pol = _r2(y, s2 * x2 + i2)
    if r2_exp >= r2_pol:
        return DecayFit("exponential", float(-s1), float(r2_exp), noise_floor,
                        prefactor=math.exp(i1))
    return DecayFit("polynomial", float(-s2), float(r2_pol), noise_floor,
                    prefactor=math.exp(i2))


def _r2(y: np.ndarray, yhat: np.ndarray) -> float:
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def decay_envelope(tau_tails: np.ndarray, tau_weight: float, n_grid: np.ndarray,
                   q: float, delta: float = 0.5) -> np.ndarray:
    """Return-tail decay envelope: sum_{j > delta n} P(tau > j)
    + n P(tau > delta n) + n^-q, from a measured tail distribution."""
    tails = np.asarray(tau_tails, dtype=float) / max(tau_weight, 1e-300)
    out = np.zeros(n_grid.size)
    nmax = tails.size - 1
    for i, n in enumerate(n_grid):
        j0 = int(delta * n)
        out[i] = (float(tails[min(j0, nmax):].sum())
                  + n * float(tails[min(j0, nmax)])
                  + float(n) ** -q)
    return out


# -- large deviations --------------------------------------------------------------


def large_deviation(ensemble: OrbitEnsemble, v: Observable, epsilon: float,
                    n_grid: np.ndarray) -> LDReport:
    """Empirical tail probabilities of |Birkhoff sum| >= epsilon n over a
    grid of horizons, with a log-log slope fit."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n_grid = np.asarray(sorted(int(n) for n in n_grid))
    n_top = int(n_grid[-1])
    N = ensemble.N
    S = np.zeros(N)
    mean_acc = [0.0]
    probs = np.zeros(n_grid.size)
    checkpoints = {int(n): i for i, n in enumerate(n_grid)}

    # first pass for the empirical mean of v (centering)
    def consume_mean(t, x):
        mean_acc[0] += float(np.mean(np.asarray(v(x), dtype=float)))

    ensemble.iterate(n_top, consume_mean)
    mu_hat = mean_acc[0] / n_top

    def consume(t, x):
        S[:] += np.asarray(v(x), dtype=float) - mu_hat
        m = t + 1
        i = checkpoints.get(m)
        if i is not None:
            probs[i] = float(np.mean(np.abs(S) >= epsilon * m))

    ensemble.iterate(n_top, consume)
    all_zero = bool(np.all(probs == 0.0))
    if all_zero:
        ub = 3.0 / N  # 95% upper confidence bound for a zero count
        return LDReport(epsilon=epsilon, n_grid=n_grid, tail_prob=probs,
                        fitted_exponent=math.inf, all_zero=True, upper_bound=ub)
    mask = probs > 0
    slope = math.nan
    if int(mask.sum()) >= 2:
        slope, _ = np.polyfit(np.log(n_grid[mask]), np.log(probs[mask]), 1)
    return LDReport(epsilon=epsilon, n_grid=n_grid, tail_prob=probs,
                    fitted_exponent=float(-slope) if not math.isnan(slope) else math.nan,
                    all_zero=False, upper_bound=0.0)
