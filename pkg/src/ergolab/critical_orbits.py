"""Critical-orbit sequences d_n, D_n, E_n and summability diagnostics.

All derivative products live in log space: D_n grows like 4^n for the
quadratic map and would overflow doubles near n ~ 500.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .maps import OneSidedCriticalPoint, PiecewiseMap

LOG10E = math.log10(math.e)


@dataclass
class CriticalOrbitData:
    """Log-scale orbit sequences for one one-sided critical point.

    Arrays are indexed 1..N (entry 0 is a convention slot, log_D[0] = 0).
    log_d[n] = log d(f^n c, C), log_D[n] = log |(f^n)'(fc)|,
    log_E[n] = log_D[n-1] / (2 ell - 1).
    """

    point: OneSidedCriticalPoint
    horizon: int
    log_d: np.ndarray
    log_D: np.ndarray
    log_E: np.ndarray
    points: np.ndarray  # f^n c for n = 0..N (entry 0 is f(c) side-limit source c)
    degenerate: bool = False
    singular: bool = False  # ell < 1: sequences computed but conditions not imposed

    @property
    def ell(self) -> float:
        return self.point.order

    def d(self, n):
        return np.exp(self.log_d[n])

    def D(self, n):
        return np.exp(self.log_D[n])

    def E(self, n):
        return np.exp(self.log_E[n])

    def log_dE(self) -> np.ndarray:
        """log(d_n E_n) for n = 1..N."""
        return self.log_d[1:] + self.log_E[1:]


@dataclass
class SummabilityReport:
    p: float
    N: int
    S3: float  # partial sum of n^p d_n^-1 log d_n^-1 E_n^-1
    S4: float  # partial sum of n^p E_n^-1
    verdict3: str  # converging | diverging | inconclusive | not-applicable
    verdict4: str
    tail_ratio3: float = math.nan
    tail_ratio4: float = math.nan


@dataclass
class RecurrenceFit:
    """Log-linear fit of d_n E_n against n (exponential-recurrence hypothesis)."""

    c0_hat: float
    C0_hat: float
    intercept: float
    residual: float
    ok: bool
    message: str = ""


def orbit_data(pmap: PiecewiseMap, c: OneSidedCriticalPoint, N: int,
               precision_dps: int = 0) -> CriticalOrbitData:
    """Iterate the one-sided critical orbit for N steps.

    f(c) is the one-sided limit from the declared side; subsequent iterates
    use the branch containing the point (domain endpoints take the adjacent
    branch closure).  precision_dps > 0 switches the iteration to mpmath
    with that many decimal digits; logs are stored as float64 either way.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    log_d = np.zeros(N + 1)
    log_D = np.zeros(N + 1)
    log_E = np.zeros(N + 1)
    pts = np.zeros(N + 1)
    pts[0] = c.location
    two_ell_m1 = 2.0 * c.order - 1.0
    degenerate = False

    if precision_dps > 0:
        xs = _orbit_mpmath(pmap, c, N, precision_dps)
    else:
        xs = _orbit_float(pmap, c, N)

    cum_logD = 0.0
    for n in range(1, N + 1):
        x = xs[n]
        pts[n] = x
        dn = pmap.distance_to_critical(x)
        if dn == 0.0:
            degenerate = True
            log_d[n] = -math.inf
        else:
            log_d[n] = math.log(dn) if math.isfinite(dn) else math.inf
        dfx = _deriv_at(pmap, x)
        cum_logD += math.log(abs(dfx)) if dfx != 0.0 else -math.inf
        log_D[n] = cum_logD
        log_E[n] = log_D[n - 1] / two_ell_m1
    return CriticalOrbitData(point=c, horizon=N, log_d=log_d, log_D=log_D,
                             log_E=log_E, points=pts, degenerate=degenerate,
                             singular=c.order < 1.0)


def _orbit_float(pmap: PiecewiseMap, c: OneSidedCriticalPoint, N: int) -> list[float]:
    xs = [c.location, pmap.critical_value(c)]
    for _ in range(2, N + 1):
        xs.append(pmap.eval(xs[-1], side="+"))
    return xs


def _orbit_mpmath(pmap: PiecewiseMap, c: OneSidedCriticalPoint, N: int,
                  dps: int) -> list[float]:
    import mpmath as mp
    with mp.workdps(dps):
        x = mp.mpf(pmap.critical_value(c))
        xs = [c.location, float(x)]
        for _ in range(2, N + 1):
            b = pmap.branches[pmap.branch_index(float(x), "+")]
            fm = b.formula
            if fm.kind == "poly":
                y = mp.mpf(0)
                for coef in reversed(fm.coeffs):
                    y = y * x + coef
            else:
                y = fm.offset + fm.scale * mp.fabs(x - fm.pivot) ** fm.exponent
            x = min(max(y, mp.mpf(0)), mp.mpf(1))
            xs.append(float(x))
    return xs


def _deriv_at(pmap: PiecewiseMap, x: float) -> float:
    """|f'| factor used in the D_n product; domain endpoints use the
    adjacent branch, interior boundary points the right branch."""
    side = "-" if x == 1.0 else "+"
    b = pmap.branches[pmap.branch_index(x, side)]
    return float(b.deriv(x, 1))


def summability_report(data: CriticalOrbitData, p: float,
                       N: int | None = None) -> SummabilityReport:
    """Partial sums of the (A3_p)/(A4_p) series with a tail-ratio verdict.

    The verdict is a heuristic on the geometric ratio of the last quartile
    of terms; an honest 'inconclusive' is possible.  Singular points
    (ell < 1) report not-applicable.
    """
    N = data.horizon if N is None else min(N, data.horizon)
    if data.singular:
        return SummabilityReport(p, N, math.nan, math.nan,
                                 "not-applicable", "not-applicable")
    n = np.arange(1, N + 1, dtype=float)
    logd = data.log_d[1:N + 1]
    logE = data.log_E[1:N + 1]
    if data.degenerate or not np.all(np.isfinite(logd)):
        return SummabilityReport(p, N, math.inf, math.inf, "diverging", "diverging")
    # term3_n = n^p d_n^-1 log(d_n^-1) E_n^-1, term4_n = n^p E_n^-1
    log_t4 = p * np.log(n) - logE
    factor = np.maximum(-logd, 0.0)  # log d_n^-1 >= 0 since d_n <= 1
    with np.errstate(divide="ignore"):
        log_t3 = log_t4 - logd + np.log(factor, out=np.full_like(n, -np.inf),
                                        where=factor > 0)
    t3 = np.exp(log_t3)
    t4 = np.exp(log_t4)
    v3, r3 = _classify_tail(t3)
    v4, r4 = _classify_tail(t4)
    return SummabilityReport(p, N, float(t3.sum()), float(t4.sum()), v3, v4, r3, r4)


def _classify_tail(terms: np.ndarray) -> tuple[str, float]:
    """Geometric-ratio heuristic on the last quartile of terms."""
    t = terms[np.isfinite(terms)]
    if t.size < terms.size:
        return "diverging", math.inf
    tail = t[-max(len(t) // 4, 4):]
    tail = tail[tail > 0]
    if tail.size < 3:
        return "converging", 0.0  # terms underflowed to zero
    ratios = tail[1:] / tail[:-1]
    g = float(np.exp(np.mean(np.log(ratios))))
    if g < 0.97:
        return "converging", g
    if g > 1.02:
        return "diverging", g
    return "inconclusive", g


def tail_double_sum(data: CriticalOrbitData, p: float, N: int | None = None) -> float:
    """Partial sum of sum_n n^(p-1) sum_{b>n} E_b^-1 over n,b <= N.

    Finite-horizon counterpart of the double-sum rearrangement of (A4_p);
    its convergence classification should match summability_report's S4.
    """
    N = data.horizon if N is None else min(N, data.horizon)
    Einv = np.exp(-data.log_E[1:N + 1])
    tails = np.concatenate([np.cumsum(Einv[::-1])[::-1][1:], [0.0]])
    n = np.arange(1, N + 1, dtype=float)
    return float(np.sum(n ** (p - 1.0) * tails))


def exp_recurrence_check(data: CriticalOrbitData,
                         log_dE: np.ndarray | None = None) -> RecurrenceFit:
    """Fit d_n E_n >= C0 e^(c0 n): slope of log(d_n E_n) vs n, with
    C0_hat the largest constant making the bound hold pointwise up to N."""
    y = data.log_dE() if log_dE is None else np.asarray(log_dE, dtype=float)
    if y.size < 10:
        raise ValueError("need horizon N >= 10 for the recurrence fit")
    if not np.all(np.isfinite(y)):
        return RecurrenceFit(math.nan, 0.0, math.nan, math.nan, False,
                             "degenerate orbit (d_n = 0)")
    n = np.arange(1, y.size + 1, dtype=float)
    c0, intercept = np.polyfit(n, y, 1)
    resid = float(np.sqrt(np.mean((y - (c0 * n + intercept)) ** 2)))
    logC0 = float(np.min(y - c0 * n))
    ok = c0 > 0.0
    return RecurrenceFit(c0_hat=float(c0), C0_hat=math.exp(logC0),
                         intercept=float(intercept), residual=resid, ok=ok,
                         message="" if ok else
                         "nonpositive slope: exponential-recurrence hypothesis fails")


def export_csv(data: CriticalOrbitData, path, p: float = 1.0) -> None:
    """Write n, d_n, D_n, E_n and the two summability terms, log10 scale."""
    N = data.horizon
    n = np.arange(1, N + 1, dtype=float)
    logd = data.log_d[1:]
    logE = data.log_E[1:]
    log10_t4 = (p * np.log(n) - logE) * LOG10E
    factor = np.maximum(-logd, 0.0)
    with np.errstate(divide="ignore"):
        log10_t3 = log10_t4 + (-logd + np.log(
            factor, out=np.full_like(n, -np.inf), where=factor > 0)) * LOG10E
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "log10_d", "log10_D", "log10_E",
                    f"log10_term3_p{p:g}", f"log10_term4_p{p:g}"])
        for i in range(N):
            w.writerow([i + 1,
                        f"{logd[i] * LOG10E:.17g}",
                        f"{data.log_D[i + 1] * LOG10E:.17g}",
                        f"{logE[i] * LOG10E:.17g}",
                        f"{log10_t3[i]:.17g}",
                        f"{log10_t4[i]:.17g}"])
