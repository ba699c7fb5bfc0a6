"""Inducing scheme: neighbourhood Delta, first-entry times, binding periods,
partition cells with return time tau, and the induced map F = f^tau.

Construction is event-driven: candidate intervals are iterated and split at
the exact pullbacks (monotone bisection) of branch boundaries, Delta
endpoints and binding-escape thresholds, so every retained cell has constant
itinerary, constant first-entry time and constant binding period by
construction rather than by sampling.

Binding-period rule (the source construction leaves it abstract):
b(x) = min{ n >= 1 : |f^n x - f^n c| > escape_factor * d_n(c) } with
escape_factor = 1/2 by default.  Gaps f^n x - f^n c are propagated through
branch formulas recentred at the critical orbit, which is exact for
polynomial branches; a direct difference would round to zero once the gap
falls below 1e-16 and silently cap deep binding levels.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .critical_orbits import CriticalOrbitData, orbit_data
from .maps import Observable, OneSidedCriticalPoint, PiecewiseMap, _horner


class NotCoveredError(LookupError):
    """Point falls in the truncated (discarded) part of the partition."""


@dataclass
class Cell:
    left: float
    right: float
    tau: int
    b: int          # binding level, 0 for free cells
    ell0: int       # first-entry time (= tau when free is q0 by convention)
    crit_index: int | None  # which critical point the cell bound to
    itinerary: tuple[int, ...]  # branch index per step, length tau
    sup_invF: float = math.nan
    var_invF: float = math.nan
    image_span: float = math.nan  # length of the image interval

    @property
    def length(self) -> float:
        return self.right - self.left


@dataclass
class WeightedObservable:
    """Function on the induced domain with per-cell sup/var bookkeeping."""

    scheme: "InducedScheme"
    fn: object  # callable y -> value
    sup_abs: np.ndarray  # per retained cell
    var: np.ndarray
    name: str = "Phi"

    def __call__(self, y):
        return self.fn(y)

    @property
    def weighted_norm(self) -> float:
        return weighted_bv_norm(self.scheme, self)


@dataclass
class InducedScheme:
    map: PiecewiseMap
    delta: float
    q0: int
    tau_max: int
    escape_factor: float
    cells: list[Cell]
    coverage: float
    truncation_loss: float
    discarded: list[tuple[float, float, str]]
    orbits: list[CriticalOrbitData]  # one per critical point
    refine_tol: float = 1e-13

    def locate(self, y: float) -> int:
        """Index of the retained cell containing y; NotCoveredError otherwise."""
        i = bisect.bisect_right(self._lefts, y) - 1
        if i >= 0 and self.cells[i].left <= y <= self.cells[i].right:
            return i
        raise NotCoveredError(f"y={y} lies in truncated mass")

    def __post_init__(self):
        self.cells.sort(key=lambda c: c.left)
        self._lefts = [c.left for c in self.cells]

    @property
    def cell_lengths(self) -> np.ndarray:
        return np.array([c.length for c in self.cells])

    @property
    def taus(self) -> np.ndarray:
        return np.array([c.tau for c in self.cells], dtype=int)


# -- elementary pointwise operations ------------------------------------------


def _delta_intervals(pmap: PiecewiseMap, delta: float) -> list[tuple[float, float]]:
    return [c.neighbourhood(delta) for c in pmap.critical_points]


def _in_delta(pmap: PiecewiseMap, delta: float, x: float) -> int | None:
    for i, (lo, hi) in enumerate(_delta_intervals(pmap, delta)):
        if lo < x < hi:
            return i
    return None


def first_entry_time(pmap: PiecewiseMap, x: float, delta: float, q0: int) -> int:
    """min{j >= 0 : f^j x in Delta} when < q0, else the sentinel q0 (free)."""
    y = x
    for j in range(q0):
        if _in_delta(pmap, delta, y) is not None:
            return j
        y = pmap.eval(y)
    return q0


def binding_period(pmap: PiecewiseMap, c: OneSidedCriticalPoint, x: float,
                   b_max: int, escape_factor: float = 0.5,
                   data: CriticalOrbitData | None = None) -> int | None:
    """Shadowing-escape binding period of x in Delta(c, delta).

    Returns None when the gap never exceeds the threshold within b_max
    (cap flag).  Singular points (ell < 1) release immediately: b = 1.
    """
    if c.order < 1.0:
        return 1
    if data is None:
        data = orbit_data(pmap, c, b_max + 1)
    gap = x - c.location
    if gap == 0.0:
        return None
    for n in range(1, b_max + 1):
        z_prev = data.points[n - 1] if n > 1 else c.location
        gap = _propagate_gap(pmap, z_prev, gap, side=c.side if n == 1 else None)
        if abs(gap) > escape_factor * data.d(n):
            return n
    return None


def _branch_at(pmap: PiecewiseMap, z: float, side: str | None = None):
    s = side if side is not None else ("-" if z == 1.0 else "+")
    return pmap.branches[pmap.branch_index(z, s)]


@lru_cache(maxsize=8192)
def _shifted_at(formula, z: float):
    return formula.shifted(z)


def _gap_fn(pmap: PiecewiseMap, z: float, side: str | None = None):
    """Scalar closure gap -> f(z + gap) - f(z), branch resolved once."""
    g = _shifted_at(_branch_at(pmap, z, side).formula, z)
    if g.kind == "poly":
        tail = tuple(reversed(g.coeffs[1:]))

        def fn(gap: float) -> float:
            acc = 0.0
            for c in tail:
                acc = acc * gap + c
            return acc * gap
        return fn
    base = float(g.value(0.0))

    def fn(gap: float) -> float:
        return float(g.value(gap)) - base
    return fn


def _propagate_gap(pmap: PiecewiseMap, z: float, gap,
                   side: str | None = None):
    """f(z + gap) - f(z) through the branch containing z, recentred at z."""
    if isinstance(gap, float):
        return _gap_fn(pmap, z, side)(gap)
    g = _shifted_at(_branch_at(pmap, z, side).formula, z)
    if g.kind == "poly":
        u = np.asarray(gap, dtype=float)
        out = u * _horner(u, g.coeffs[1:])
        return out if out.ndim else float(out)
    v = np.asarray(g.value(gap)) - float(g.value(np.array(0.0)))
    return v if v.ndim else float(v)


def _gap_deriv(pmap: PiecewiseMap, z: float, gap, side: str | None = None):
    """f'(z + gap) evaluated through the recentred formula (stable at z = c)."""
    g = _shifted_at(_branch_at(pmap, z, side).formula, z)
    return g.deriv(gap, 1)


# -- partition construction ----------------------------------------------------


def _compose(pmap: PiecewiseMap, x, symbols) -> float:
    """Apply the branch formulas along an itinerary (forced branches)."""
    y = x
    for s in symbols:
        y = pmap.branches[s].formula.value(y)
    return y


def _pullback(fn, lo: float, hi: float, target: float) -> float:
    """x in [lo,hi] with fn(x) = target, fn monotone."""
    flo, fhi = fn(lo), fn(hi)
    if flo == target:
        return lo
    if fhi == target:
        return hi
    if (flo < target) != (fhi < target):
        return float(brentq(lambda x: fn(x) - target, lo, hi,
                            xtol=5e-324, rtol=4 * np.finfo(float).eps,
                            maxiter=200))
    # target outside the image within rounding: bisect toward the endpoint
    inc = flo <= fhi
    a, b = lo, hi
    for _ in range(200):
        m = 0.5 * (a + b)
        if m <= a or m >= b:
            break
        if (fn(m) < target) == inc:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def build_partition(pmap: PiecewiseMap, delta: float = 0.05, q0: int = 10,
                    tau_max: int = 60, refine_tol: float = 1e-13,
                    escape_factor: float = 0.5,
                    var_refine_tol: float = 1e-3) -> InducedScheme:
    """Construct the inducing scheme (partition alpha, return time tau).

    Cells still binding past tau_max, or narrower than refine_tol while
    unresolved, are discarded into the truncation ledger.
    """
    if q0 < 1 or delta <= 0 or tau_max < 1:
        raise ValueError("q0, delta, tau_max must be positive")
    deltas = _delta_intervals(pmap, delta)
    orbits = [orbit_data(pmap, c, tau_max + 1) for c in pmap.critical_points]
    cuts = sorted({b.lo for b in pmap.branches[1:]}
                  | {e for lo, hi in deltas for e in (lo, hi)})

    retained: list[Cell] = []
    discarded: list[tuple[float, float, str]] = []

    # phase-A item: (lo, hi, j, symbols); image endpoints recomputed on demand
    work = [(0.0, 1.0, 0, ())]
    while work:
        lo, hi, j, sym = work.pop()
        if hi - lo < refine_tol:
            discarded.append((lo, hi, "unresolved"))
            continue
        if j == q0:
            retained.append(Cell(lo, hi, q0, 0, q0, None, sym))
            continue
        g = lambda x: _compose(pmap, x, sym)
        a, b = g(lo), g(hi)
        ilo, ihi = (a, b) if a <= b else (b, a)
        inner = [c for c in cuts if ilo < c < ihi]
        if inner:
            # pullbacks landing on an endpoint mean the cut grazes the image
            # boundary within rounding; dropping them guarantees progress
            pts = sorted(p for c in inner
                         if lo < (p := _pullback(g, lo, hi, c)) < hi)
            if pts:
                edges = [lo] + pts + [hi]
                for u, v in zip(edges, edges[1:]):
                    if v > u:
                        work.append((u, v, j, sym))
                continue
        mid_img = g(0.5 * (lo + hi))
        ci = _in_delta(pmap, delta, mid_img)
        if ci is not None:
            _bind_cell(pmap, lo, hi, j, sym, ci, orbits[ci], q0, tau_max,
                       refine_tol, escape_factor, retained, discarded, work)
            continue
        s = pmap.branch_index(mid_img)
        work.append((lo, hi, j + 1, sym + (s,)))

    # finalize geometry bookkeeping
    cov = sum(c.length for c in retained)
    loss = sum(hi - lo for lo, hi, _ in discarded)
    scheme = InducedScheme(map=pmap, delta=delta, q0=q0, tau_max=tau_max,
                           escape_factor=escape_factor, cells=retained,
                           coverage=cov, truncation_loss=loss,
                           discarded=discarded, orbits=orbits,
                           refine_tol=refine_tol)
    _populate_invF(scheme, var_refine_tol)
    return scheme


def _invert_gap_step(pmap, z, target: float, bracket: tuple[float, float],
                     side: str | None = None) -> float:
    """Gap g in bracket with f(z+g) - f(z) = target; monotone root find."""
    fn = _gap_fn(pmap, z, side)
    a, b = bracket
    fa, fb = fn(a), fn(b)
    if fa == target:
        return a
    if fb == target:
        return b
    if (fa < target) != (fb < target):
        return float(brentq(lambda g: fn(g) - target, a, b,
                            xtol=5e-324, rtol=4 * np.finfo(float).eps,
                            maxiter=200))
    inc = fa <= fb
    for _ in range(200):
        m = 0.5 * (a + b)
        if m <= min(a, b) or m >= max(a, b):
            break
        if (fn(m) < target) == inc:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def _invert_gap_chain(pmap, c, data, n: int, target: float, delta: float,
                      escape_factor: float) -> float:
    """Entry gap g0 whose n-step propagated gap equals target.

    Inverts one monotone step at a time, bracketing by the bound region of
    the previous step (the first step is one-sided since the recentred
    formula at c itself is even in the gap)."""
    for k in range(n, 0, -1):
        z_prev = data.points[k - 1] if k > 1 else c.location
        if k == 1:
            bracket = (0.0, delta) if c.side == "+" else (-delta, 0.0)
            side = c.side
        else:
            B = escape_factor * data.d(k - 1) * (1.0 + 1e-9)
            bracket, side = (-B, B), None
        target = _invert_gap_step(pmap, z_prev, target, bracket, side)
    return target


def _bind_cell(pmap, lo, hi, ell0, sym, ci, data, q0, tau_max, refine_tol,
               escape_factor, retained, discarded, work_unused):
    """Resolve the binding period on a cell whose f^ell0-image sits in
    Delta(c).  Splits at the exact escape-threshold pullbacks so b is
    constant on every retained piece.  Endpoint gaps are carried
    incrementally; threshold crossings are pulled back to entry gaps and
    then to cell coordinates, so the cost per level is O(1) inversions."""
    c = pmap.critical_points[ci]
    cloc = c.location

    def entry_gap(x):
        return _compose(pmap, x, sym) - cloc

    if c.order < 1.0:
        # singular point: immediate release, b = 1 on the whole cell
        _retain_bound(pmap, lo, hi, ell0, 1, sym, ci, data, retained)
        return

    g_lo, g_hi = entry_gap(lo), entry_gap(hi)
    delta = max(abs(g_lo), abs(g_hi)) * (1.0 + 1e-9)
    # items: (u, v, gap_u, gap_v) with gaps at the current binding step
    items = [(lo, hi, g_lo, g_hi)]
    n = 0
    while items and ell0 + n < tau_max:
        n += 1
        z_prev = data.points[n - 1] if n > 1 else cloc
        side = c.side if n == 1 else None
        thr = escape_factor * data.d(n)
        step = _gap_fn(pmap, z_prev, side)
        stack = [(u, v, step(gu), step(gv)) for u, v, gu, gv in items]
        items = []
        tol = thr * 1e-12
        while stack:
            u, v, gu, gv = stack.pop()
            if v - u < refine_tol:
                discarded.append((u, v, "unresolved"))
                continue
            amin, amax = sorted((abs(gu), abs(gv)))
            if gu * gv >= 0 and amin >= thr - tol and amax > thr:
                _retain_bound(pmap, u, v, ell0, n, sym, ci, data, retained)
            elif amax <= thr + tol:
                items.append((u, v, gu, gv))
            else:
                # threshold (or zero) crossing inside: pull it back to entry
                # gap space, then to cell coordinates
                if gu * gv < 0:
                    target_n = 0.0
                else:
                    target_n = thr if (gu + gv) > 0 else -thr
                g0 = (0.0 if target_n == 0.0 else
                      _invert_gap_chain(pmap, c, data, n, target_n, delta,
                                        escape_factor))
                m = _pullback(entry_gap, u, v, g0)
                if not u < m < v:
                    m = 0.5 * (u + v)
                    target_n = None  # fall back: recompute both sides fresh
                gm = target_n if target_n is not None else _gap_after(
                    pmap, c, data, entry_gap(m), n)
                stack.append((u, m, gu, gm))
                stack.append((m, v, gm, gv))
    for u, v, _, _ in items:
        discarded.append((u, v, "bind-cap"))


def _gap_after(pmap, c, data, g0: float, n: int) -> float:
    g = g0
    for k in range(1, n + 1):
        z_prev = data.points[k - 1] if k > 1 else c.location
        g = _propagate_gap(pmap, z_prev, g, c.side if k == 1 else None)
    return g


def _retain_bound(pmap, u, v, ell0, b, sym, ci, data, retained):
    c = pmap.critical_points[ci]
    bind_sym = []
    for k in range(1, b + 1):
        z_prev = data.points[k - 1] if k > 1 else c.location
        bind_sym.append(pmap.branch_index(
            z_prev, c.side if k == 1 else ("-" if z_prev == 1.0 else "+")))
    retained.append(Cell(u, v, ell0 + b, b, ell0, ci, tuple(sym) + tuple(bind_sym)))


# -- trajectories inside a cell -------------------------------------------------


def cell_trajectory(scheme: InducedScheme, cell: Cell, xs: np.ndarray):
    """Positions x, f x, ..., f^(tau-1) x and log|F'| for points of a cell.

    Returns (traj, logF') with traj of shape (tau, len(xs)).  The binding
    segment runs through recentred gap arithmetic for accuracy near the
    critical orbit.
    """
    pmap = scheme.map
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    tau = cell.tau
    traj = np.empty((tau, xs.size))
    logd = np.zeros(xs.size)
    y = xs.copy()
    for j in range(cell.ell0 if cell.b else tau):
        traj[j] = y
        br = pmap.branches[cell.itinerary[j]]
        logd += np.log(np.abs(br.deriv(y, 1)))
        y = np.asarray(br.value(y), dtype=float)
    if cell.b:
        c = pmap.critical_points[cell.crit_index]
        data = scheme.orbits[cell.crit_index]
        gap = y - c.location
        for k in range(1, cell.b + 1):
            z_prev = data.points[k - 1] if k > 1 else c.location
            side = c.side if k == 1 else None
            traj[cell.ell0 + k - 1] = z_prev + gap
            logd += np.log(np.abs(np.asarray(
                _gap_deriv(pmap, z_prev, gap, side), dtype=float)))
            gap = np.asarray(_propagate_gap(pmap, z_prev, gap, side), dtype=float)
        y = data.points[cell.b] + gap
    return traj, logd, np.clip(y, 0.0, 1.0)


def induced_map_eval(scheme: InducedScheme, y: float) -> tuple[float, float]:
    """(F(y), log|F'(y)|) on the retained cell containing y."""
    cell = scheme.cells[scheme.locate(y)]
    _, logd, fy = cell_trajectory(scheme, cell, np.array([y]))
    return float(fy[0]), float(logd[0])


def return_time(scheme: InducedScheme, x: float) -> int:
    return scheme.cells[scheme.locate(x)].tau


def _populate_invF(scheme: InducedScheme, var_refine_tol: float) -> None:
    """Per-cell sup and total variation of 1/|F'| by doubling refinement."""
    for cell in scheme.cells:
        npts, prev = 17, None
        while True:
            xs = np.linspace(cell.left, cell.right, npts)
            _, logd, ends = cell_trajectory(scheme, cell, xs)
            cell.image_span = abs(float(ends[-1]) - float(ends[0]))
            inv = np.exp(-logd)
            sup = float(inv.max())
            var = float(np.abs(np.diff(inv)).sum())
            if prev is not None and (var == 0.0 or
                                     abs(var - prev) <= var_refine_tol * max(var, 1e-300)):
                break
            if npts > 4096:
                break
            prev, npts = var, npts * 2 - 1
        cell.sup_invF, cell.var_invF = sup, var


# -- scheme-level statistics ----------------------------------------------------


@dataclass
class LevelStats:
    count: int
    max_sup_invF: float
    max_var_invF: float


@dataclass
class CellStatistics:
    levels: dict  # b -> LevelStats
    M_hat: int
    C_hat_sup: float
    C_hat_var: float

    @property
    def C_hat(self) -> float:
        vals = [v for v in (self.C_hat_sup, self.C_hat_var) if math.isfinite(v)]
        return max(vals) if vals else math.nan


def cell_statistics(scheme: InducedScheme) -> CellStatistics:
    """Per-binding-level table and the smallest constants for the three
    bounds #alpha(b) <= M, sup <= C/E_b, var <= C (1+log d_{b-1}^-1) / (d_{b-1} E_{b-1}).

    C_hat_sup uses levels b >= 1, C_hat_var levels b >= 2 (where the
    reference quantities are defined)."""
    levels: dict[int, LevelStats] = {}
    C_sup, C_var = 0.0, 0.0
    for cell in scheme.cells:
        st = levels.get(cell.b)
        if st is None:
            levels[cell.b] = LevelStats(1, cell.sup_invF, cell.var_invF)
        else:
            st.count += 1
            st.max_sup_invF = max(st.max_sup_invF, cell.sup_invF)
            st.max_var_invF = max(st.max_var_invF, cell.var_invF)
        if cell.b >= 1 and cell.crit_index is not None:
            data = scheme.orbits[cell.crit_index]
            C_sup = max(C_sup, cell.sup_invF * data.E(cell.b))
            if cell.b >= 2:
                b = cell.b
                ref = (1.0 + (-data.log_d[b - 1])) * math.exp(
                    -data.log_d[b - 1] - data.log_E[b - 1])
                if ref > 0:
                    C_var = max(C_var, cell.var_invF / ref)
    M_hat = max(st.count for st in levels.values())
    return CellStatistics(levels=levels, M_hat=M_hat,
                          C_hat_sup=C_sup if C_sup else math.nan,
                          C_hat_var=C_var if C_var else math.nan)


def F_condition_sums(scheme: InducedScheme, p: float) -> dict:
    """(F1_p)/(F2_p) partial sums over retained cells plus a truncation-tail
    bound C M sum_{b > b_ret} E_b^-1 (b + q0)^p from the per-level constants."""
    sups = np.array([c.sup_invF for c in scheme.cells])
    vars_ = np.array([c.var_invF for c in scheme.cells])
    taus = scheme.taus.astype(float)
    S1 = float(np.sum(sups * taus**p))
    S2 = float(np.sum(vars_ * taus**p))
    stats = cell_statistics(scheme)
    tail = 0.0
    if scheme.orbits:
        b_ret = max((c.b for c in scheme.cells), default=0)
        CM = (stats.C_hat_sup if math.isfinite(stats.C_hat_sup) else 1.0) * stats.M_hat
        for data in scheme.orbits:
            if data.singular:
                continue
            bs = np.arange(b_ret + 1, data.horizon + 1, dtype=float)
            tail += CM * float(np.sum(
                np.exp(-data.log_E[b_ret + 1:]) * (bs + scheme.q0) ** p))
    return {"sup_sum": S1, "var_sum": S2, "tail_bound": tail, "p": p}


@dataclass
class TauDistribution:
    tails: np.ndarray  # tails[n] = weight(tau > n), n = 0..tau_max
    lp_norms: dict
    total_weight: float


def tau_distribution(scheme: InducedScheme,
                     cell_weights: np.ndarray | None = None) -> TauDistribution:
    """Tail weights of the return time; Lebesgue cell lengths by default,
    or caller-supplied per-cell weights (e.g. mu_Y masses)."""
    w = scheme.cell_lengths if cell_weights is None else np.asarray(cell_weights)
    taus = scheme.taus
    tails = np.zeros(scheme.tau_max + 1)
    for n in range(scheme.tau_max + 1):
        tails[n] = w[taus > n].sum()
    total = float(w.sum())
    lp = {p: float(np.sum(w * taus.astype(float) ** p) ** (1.0 / p))
          for p in (1, 2, 3)}
    return TauDistribution(tails=tails, lp_norms=lp, total_weight=total)


# -- observables on the induced system -----------------------------------------


def induced_observable(scheme: InducedScheme, phi: Observable,
                       n_samples: int = 65) -> WeightedObservable:
    """Phi(y) = sum_{l < tau(y)} phi(f^l y), with per-cell sup/var estimates."""
    sup_abs = np.zeros(len(scheme.cells))
    var = np.zeros(len(scheme.cells))
    for i, cell in enumerate(scheme.cells):
        xs = np.linspace(cell.left, cell.right, n_samples)
        traj, _, _ = cell_trajectory(scheme, cell, xs)
        vals = np.sum(np.asarray(phi(traj)), axis=0)
        sup_abs[i] = float(np.abs(vals).max())
        var[i] = float(np.abs(np.diff(vals)).sum())

    def fn(y):
        cell = scheme.cells[scheme.locate(float(y))]
        traj, _, _ = cell_trajectory(scheme, cell, np.array([float(y)]))
        return float(np.sum(phi(traj[:, 0])))

    return WeightedObservable(scheme=scheme, fn=fn, sup_abs=sup_abs, var=var,
                              name=f"induced({phi.name})")


def weighted_bv_norm(scheme: InducedScheme, psi: WeightedObservable) -> float:
    """sup over cells of (sup_a |Psi| + var_a Psi) / tau(a); reduces to the
    ordinary BV norm when tau is identically 1."""
    taus = scheme.taus.astype(float)
    return float(np.max((psi.sup_abs + psi.var) / taus))


def level_observable(scheme: InducedScheme, v: Observable, j,
                     n_samples: int = 65) -> WeightedObservable:
    """v_hat(y) = v(f^(j(y)) y) for a per-cell level j with 0 <= j(a) < tau(a).

    j may be an int, an array over cells, or a callable cell -> int."""
    cells = scheme.cells
    if callable(j):
        js = [int(j(c)) for c in cells]
    elif np.ndim(j) == 0:
        js = [int(j)] * len(cells)
    else:
        js = [int(x) for x in j]
    for cell, jj in zip(cells, js):
        if not 0 <= jj < cell.tau:
            raise ValueError(f"level {jj} out of range [0,{cell.tau}) on cell "
                             f"[{cell.left},{cell.right}]")
    sup_abs = np.zeros(len(cells))
    var = np.zeros(len(cells))
    for i, (cell, jj) in enumerate(zip(cells, js)):
        xs = np.linspace(cell.left, cell.right, n_samples)
        traj, _, _ = cell_trajectory(scheme, cell, xs)
        vals = np.asarray(v(traj[jj]))
        sup_abs[i] = float(np.abs(vals).max())
        var[i] = float(np.abs(np.diff(vals)).sum())
    jarr = list(js)

    def fn(y):
        i = scheme.locate(float(y))
        traj, _, _ = cell_trajectory(scheme, scheme.cells[i], np.array([float(y)]))
        return float(v(traj[jarr[i], 0]))

    return WeightedObservable(scheme=scheme, fn=fn, sup_abs=sup_abs, var=var,
                              name=f"level({v.name})")


# -- export ---------------------------------------------------------------------


def export_csv(scheme: InducedScheme, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["# delta", f"{scheme.delta:.17g}", "q0", scheme.q0,
                    "tau_max", scheme.tau_max,
                    "coverage", f"{scheme.coverage:.17g}"])
        w.writerow(["cell_left", "cell_right", "tau", "b", "itinerary",
                    "sup_invF", "var_invF"])
        for c in scheme.cells:
            w.writerow([f"{c.left:.17g}", f"{c.right:.17g}", c.tau, c.b,
                        "".join(str(s) for s in c.itinerary),
                        f"{c.sup_invF:.17g}", f"{c.var_invF:.17g}"])
