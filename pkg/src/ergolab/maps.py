"""Piecewise smooth interval maps with one-sided critical/singular points.

A map is a finite list of monotone branches covering [0,1] plus a finite
set of one-sided critical points, each carrying an order ell != 1.  Near a
critical point c the branch behaves like |f(x)-f(c)| ~ d(x,c)^ell, so
ell > 1 means the derivative vanishes (critical) and ell < 1 means it
blows up (singular).
"""

from __future__ import annotations

import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np


class MapDomainError(ValueError):
    """Point outside [0,1]."""


class OneSidedLimitRequired(ValueError):
    """Query landed exactly on a critical/singular location; pass a side."""


@lru_cache(maxsize=8192)
def _poly_deriv_coeffs(coeffs: tuple, order: int) -> tuple:
    c = coeffs
    for _ in range(order):
        c = tuple(i * c[i] for i in range(1, len(c)))
    return c


def _horner(x, coeffs):
    """Array Horner evaluation, coefficients in increasing degree."""
    if not coeffs:
        return np.zeros_like(np.asarray(x, dtype=float))
    acc = np.full(np.shape(x), coeffs[-1], dtype=float)
    for c in coeffs[-2::-1]:
        acc *= x
        acc += c
    return acc


@dataclass(frozen=True)
class Formula:
    """Scalar branch formula, numpy-vectorizable.

    kind "poly": value = sum coeffs[i] * x**i.
    kind "power": value = offset + scale * |x - pivot|**exponent.
    """

    kind: str
    coeffs: tuple[float, ...] = ()
    offset: float = 0.0
    scale: float = 0.0
    pivot: float = 0.5
    exponent: float = 1.0

    def value(self, x):
        if isinstance(x, float):  # fast scalar path, hot in partition building
            if self.kind == "poly":
                acc = 0.0
                for c in reversed(self.coeffs):
                    acc = acc * x + c
                return acc
            return self.offset + self.scale * abs(x - self.pivot) ** self.exponent
        if self.kind == "poly":
            out = _horner(x, self.coeffs)
            return out if out.ndim else float(out)
        u = np.abs(np.asarray(x, dtype=float) - self.pivot)
        out = self.offset + self.scale * u**self.exponent
        return out if out.ndim else float(out)

    def shifted(self, c: float) -> "Formula":
        """Recenter at c: returns g with g(u) = f(c+u).

        For poly this is an exact Taylor shift; evaluating g(u) - g(0) is
        then free of the cancellation that f(c+u) - f(c) suffers near a
        critical point.  For power with pivot c the increment is already
        exact; other pivots just shift.
        """
        if self.kind == "poly":
            P = np.polynomial.polynomial
            k = len(self.coeffs)
            new = tuple(
                float(P.polyval(c, P.polyder(self.coeffs, m=j))) / math.factorial(j)
                for j in range(k))
            return Formula("poly", new)
        return Formula("power", offset=self.offset, scale=self.scale,
                       pivot=self.pivot - c, exponent=self.exponent)

    def deriv(self, x, order: int = 1):
        if self.kind == "poly":
            c = _poly_deriv_coeffs(self.coeffs, order)
            if isinstance(x, float):
                acc = 0.0
                for ck in reversed(c):
                    acc = acc * x + ck
                return acc
            out = _horner(x, c)
            return out if out.ndim else float(out)
        e = self.exponent
        xa = np.asarray(x, dtype=float)
        u = xa - self.pivot
        s = np.where(u >= 0.0, 1.0, -1.0)
        with np.errstate(divide="ignore"):
            if order == 1:
                out = self.scale * e * np.abs(u) ** (e - 1.0) * s
            elif order == 2:
                out = self.scale * e * (e - 1.0) * np.abs(u) ** (e - 2.0)
            else:
                raise ValueError(f"unsupported derivative order {order}")
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class Branch:
    """Monotone branch on the open interval (lo, hi), C^2 in the interior,
    extending continuously to the closure."""

    lo: float
    hi: float
    formula: Formula

    def value(self, x):
        return self.formula.value(x)

    def deriv(self, x, order: int = 1):
        return self.formula.deriv(x, order)


@dataclass(frozen=True)
class OneSidedCriticalPoint:
    location: float
    side: str  # "+" or "-"
    order: float  # ell > 0, ell != 1

    def __post_init__(self):
        if self.side not in ("+", "-"):
            raise ValueError(f"side must be '+' or '-', got {self.side!r}")
        if self.order <= 0 or self.order == 1.0:
            raise ValueError(f"critical order must be positive and != 1, got {self.order}")

    def neighbourhood(self, delta: float) -> tuple[float, float]:
        """Open one-sided interval Delta(c, delta)."""
        if self.side == "+":
            return (self.location, self.location + delta)
        return (self.location - delta, self.location)


@dataclass(frozen=True)
class Observable:
    """Scalar (or vector) observable on [0,1] with a declared BV bound."""

    fn: Callable
    dimension: int = 1
    tv_bound: float | None = None
    name: str = "phi"

    def __call__(self, x):
        return self.fn(x)


@dataclass
class ExpansionReport:
    delta: float
    kappa_hat: float | None
    c_hat: float | None
    lambda_hat: float | None
    n_segments_kappa: int
    n_segments_free: int
    inconclusive: bool
    witnesses: list = field(default_factory=list)


@dataclass
class OrderReport:
    """Min/max of the three scaling ratios of (A1) over a log-spaced sample,
    plus a drift slope per ratio; a nonzero drift flags a wrong declared order."""

    point: OneSidedCriticalPoint
    delta: float
    ratio_bounds: dict
    slopes: dict
    mismatch: bool
    message: str = ""


class PiecewiseMap:
    """Interval map given by monotone branches and one-sided critical points."""

    def __init__(self, name: str, branches: Sequence[Branch],
                 critical_points: Sequence[OneSidedCriticalPoint] = (),
                 exact_binary: bool = False):
        branches = sorted(branches, key=lambda b: b.lo)
        if abs(sum(b.hi - b.lo for b in branches) - 1.0) > 1e-12:
            raise ValueError("branch intervals must cover [0,1]")
        for b, nb in zip(branches, branches[1:]):
            if abs(b.hi - nb.lo) > 1e-12:
                raise ValueError(f"branch gap/overlap at {b.hi} vs {nb.lo}")
        if abs(branches[0].lo) > 1e-12 or abs(branches[-1].hi - 1.0) > 1e-12:
            raise ValueError("branches must start at 0 and end at 1")
        self.name = name
        self.branches = list(branches)
        self.critical_points = list(critical_points)
        self.exact_binary = exact_binary
        self._los = np.array([b.lo for b in self.branches])
        self._crit_locs = np.array(sorted({c.location for c in self.critical_points}))

    # -- branch lookup ----------------------------------------------------

    def branch_index(self, x: float, side: str = "+") -> int:
        if x < 0.0 or x > 1.0:
            raise MapDomainError(f"x={x} outside [0,1]")
        if x >= self.branches[-1].lo:
            if x == self.branches[-1].lo and side == "-":
                return len(self.branches) - 2
            return len(self.branches) - 1
        i = int(np.searchsorted(self._los, x, side="right")) - 1
        if side == "-" and i > 0 and x == self._los[i]:
            i -= 1
        return max(i, 0)

    def branch_index_array(self, x: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self._los, x, side="right") - 1
        return np.clip(idx, 0, len(self.branches) - 1)

    # -- evaluation -------------------------------------------------------

    def eval(self, x: float, side: str = "+") -> float:
        """f(x); at a branch boundary the declared side picks the branch."""
        b = self.branches[self.branch_index(x, side)]
        return min(max(float(b.value(x)), 0.0), 1.0)

    def eval_array(self, x: np.ndarray) -> np.ndarray:
        """Vectorized f over an array, boundary points taken from the right."""
        idx = self.branch_index_array(x)
        out = np.empty_like(x, dtype=float)
        for i, b in enumerate(self.branches):
            m = idx == i
            if m.any():
                out[m] = b.value(x[m])
        return np.clip(out, 0.0, 1.0)

    def derivative(self, x: float, order: int = 1, side: str | None = None):
        """f'(x) or f''(x); signed infinity at singular one-sided limits."""
        if x < 0.0 or x > 1.0:
            raise MapDomainError(f"x={x} outside [0,1]")
        if side is None:
            if self._crit_locs.size and np.isclose(self._crit_locs, x, atol=0.0).any():
                raise OneSidedLimitRequired(
                    f"x={x} is a critical/singular location; pass side='+' or '-'")
            side = "+"
        b = self.branches[self.branch_index(x, side)]
        v = float(b.deriv(x, order))
        return v

    def deriv_array(self, x: np.ndarray, order: int = 1) -> np.ndarray:
        idx = self.branch_index_array(x)
        out = np.empty_like(x, dtype=float)
        for i, b in enumerate(self.branches):
            m = idx == i
            if m.any():
                out[m] = b.deriv(x[m], order)
        return out

    def distance_to_critical(self, x) -> float | np.ndarray:
        """d(x, C); +inf when the critical set is empty."""
        if self._crit_locs.size == 0:
            if np.ndim(x):
                return np.full(np.shape(x), np.inf)
            return math.inf
        d = np.min(np.abs(np.subtract.outer(np.asarray(x, dtype=float),
                                            self._crit_locs)), axis=-1)
        return d if d.ndim else float(d)

    def critical_value(self, c: OneSidedCriticalPoint) -> float:
        """One-sided limit f(c+-), from the branch on the declared side."""
        return self.eval(c.location, side=c.side)

    def __repr__(self):
        return (f"PiecewiseMap({self.name!r}, {len(self.branches)} branches, "
                f"{len(self.critical_points)} critical points)")


# -- builtins --------------------------------------------------------------

def builtin_map(name: str, **params) -> PiecewiseMap:
    """Canonical instances: 'doubling', 'ulam', 'cusp' (gamma in (1/2,1))."""
    if name == "doubling":
        return PiecewiseMap(
            "doubling",
            [Branch(0.0, 0.5, Formula("poly", (0.0, 2.0))),
             Branch(0.5, 1.0, Formula("poly", (-1.0, 2.0)))],
            critical_points=[],
            exact_binary=True,
        )
    if name == "ulam":
        quad = Formula("poly", (0.0, 4.0, -4.0))
        return PiecewiseMap(
            "ulam",
            [Branch(0.0, 0.5, quad), Branch(0.5, 1.0, quad)],
            critical_points=[OneSidedCriticalPoint(0.5, "-", 2.0),
                             OneSidedCriticalPoint(0.5, "+", 2.0)],
        )
    if name == "cusp":
        gamma = float(params.get("gamma", 0.75))
        if not 0.5 < gamma < 1.0:
            raise ValueError(f"cusp requires gamma in (1/2, 1), got {gamma}")
        f = Formula("power", offset=1.0, scale=-(2.0**gamma), pivot=0.5, exponent=gamma)
        return PiecewiseMap(
            f"cusp({gamma})",
            [Branch(0.0, 0.5, f), Branch(0.5, 1.0, f)],
            critical_points=[OneSidedCriticalPoint(0.5, "-", gamma),
                             OneSidedCriticalPoint(0.5, "+", gamma)],
        )
    raise ValueError(f"unknown builtin map {name!r}")


# -- (A1) order verification ------------------------------------------------

def verify_order(pmap: PiecewiseMap, c: OneSidedCriticalPoint, delta: float = 1e-2,
                 n_samples: int = 64, drift_tol: float = 0.2) -> OrderReport:
    """Check the declared one-sided order against the three scaling ratios
    |f(x)-f(c)|/d^ell, |f'(x)|/d^(ell-1), |f''(x)|/d^(ell-2).

    The ratios are sampled at log-spaced distances in (0, delta]; a clear
    log-log drift of any ratio with distance flags an order mismatch.
    """
    sgn = 1.0 if c.side == "+" else -1.0
    d = np.geomspace(delta * 1e-6, delta, n_samples)
    bi = pmap.branch_index(c.location + sgn * delta / 2)
    # recentred formula g(u) = f(c+u): avoids cancellation in f(x) - f(c)
    g = pmap.branches[bi].formula.shifted(c.location)
    u = sgn * d
    if g.kind == "poly":
        # drop the constant term so the increment carries no cancellation
        inc = u * np.polynomial.polynomial.polyval(u, g.coeffs[1:])
    elif g.pivot == 0.0:
        inc = g.scale * np.abs(u) ** g.exponent
    else:
        inc = np.asarray(g.value(u)) - float(g.value(np.array(0.0)))
    ell = c.order
    with np.errstate(divide="ignore", invalid="ignore"):
        r0 = np.abs(inc) / d**ell
        r1 = np.abs(np.asarray(g.deriv(u, 1))) / d ** (ell - 1.0)
        r2 = np.abs(np.asarray(g.deriv(u, 2))) / d ** (ell - 2.0)
    bounds, slopes = {}, {}
    mismatch = False
    msg = []
    for name, r in (("value", r0), ("deriv1", r1), ("deriv2", r2)):
        r = np.asarray(r, dtype=float)
        ok = np.isfinite(r) & (r > 0)
        if ok.sum() < 4:
            bounds[name] = (math.nan, math.nan)
            slopes[name] = math.nan
            continue
        bounds[name] = (float(r[ok].min()), float(r[ok].max()))
        slope = np.polyfit(np.log(d[ok]), np.log(r[ok]), 1)[0]
        slopes[name] = float(slope)
        if abs(slope) > drift_tol:
            mismatch = True
            msg.append(f"{name} ratio drifts with slope {slope:.3f}")
    return OrderReport(point=c, delta=delta, ratio_bounds=bounds,
                       slopes=slopes, mismatch=mismatch, message="; ".join(msg))


# -- (A2) expansion diagnostics ---------------------------------------------

def verify_expansion(pmap: PiecewiseMap, delta: float = 0.05, horizon: int = 30,
                     n_orbits: int = 400, seed: int = 0) -> ExpansionReport:
    """Statistical check of uniform expansion away from the critical set.

    kappa_hat is the smallest n-step derivative product over sampled orbit
    segments that stay delta-away from C and then enter Delta; (c_hat,
    lambda_hat) come from a log-linear fit of the smallest product per
    segment length over segments avoiding Delta throughout.  Derivative
    products are accumulated in log space.
    """
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(0.0, 1.0, size=n_orbits)
    # orbit[i, t], logder[i, t] = log|f'(orbit[i, t])|, away[i, t]
    orbit = np.empty((n_orbits, horizon + 1))
    orbit[:, 0] = x0
    for t in range(horizon):
        orbit[:, t + 1] = pmap.eval_array(orbit[:, t])
    dist = pmap.distance_to_critical(orbit) if pmap.critical_points else \
        np.full(orbit.shape, np.inf)
    with np.errstate(divide="ignore"):
        logder = np.log(np.abs(pmap.deriv_array(orbit[:, :-1])))
    away = dist > delta

    kappa_logs = []
    witnesses = []
    # min log-product per length over segments with all iterates away
    best: dict[int, float] = {}
    for i in range(n_orbits):
        csum = 0.0
        for n in range(1, horizon + 1):
            if not away[i, n - 1]:
                break
            csum += logder[i, n - 1]
            if dist[i, n] <= delta:
                kappa_logs.append(csum)
                witnesses.append((float(orbit[i, 0]), n))
                break
            if n not in best or csum < best[n]:
                best[n] = csum
    kappa_hat = math.exp(min(kappa_logs)) if kappa_logs else None
    c_hat = lambda_hat = None
    if len(best) >= 3:
        ns = np.array(sorted(best))
        ys = np.array([best[n] for n in ns])
        lam, logc = np.polyfit(ns, ys, 1)
        c_hat, lambda_hat = math.exp(logc), float(lam)
    inconclusive = not kappa_logs and len(best) < 3
    if kappa_hat is None and best:
        # no segment ever re-enters Delta (e.g. empty critical set): fall
        # back to the smallest observed full product, still a valid floor
        kappa_hat = math.exp(min(best.values()))
    return ExpansionReport(delta=delta, kappa_hat=kappa_hat, c_hat=c_hat,
                           lambda_hat=lambda_hat,
                           n_segments_kappa=len(kappa_logs),
                           n_segments_free=len(best),
                           inconclusive=inconclusive,
                           witnesses=witnesses[:10])


# -- map definition files -----------------------------------------------------

def load_map(path) -> PiecewiseMap:
    """Read a map definition file (TOML: name, [[branch]], [[critical_point]])."""
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValueError(f"{path}: parse error: {exc}") from exc
    return map_from_dict(doc, origin=str(path))


def map_from_dict(doc: dict, origin: str = "<dict>") -> PiecewiseMap:
    def fail(field_, why):
        raise ValueError(f"{origin}: field {field_!r}: {why}")

    name = doc.get("name")
    if not isinstance(name, str):
        fail("name", "missing or not a string")
    branches = []
    for i, bd in enumerate(doc.get("branch", [])):
        where = f"branch[{i}]"
        for key in ("lo", "hi", "kind"):
            if key not in bd:
                fail(f"{where}.{key}", "missing")
        kind = bd["kind"]
        if kind == "poly":
            coeffs = bd.get("coeffs")
            if not isinstance(coeffs, list) or not coeffs:
                fail(f"{where}.coeffs", "poly branch needs a coefficient list")
            fm = Formula("poly", tuple(float(c) for c in coeffs))
        elif kind == "power":
            try:
                fm = Formula("power", offset=float(bd["offset"]),
                             scale=float(bd["scale"]), pivot=float(bd["pivot"]),
                             exponent=float(bd["exponent"]))
            except KeyError as exc:
                fail(f"{where}.{exc.args[0]}", "missing for power branch")
        else:
            fail(f"{where}.kind", f"unknown kind {kind!r}")
        branches.append(Branch(float(bd["lo"]), float(bd["hi"]), fm))
    if not branches:
        fail("branch", "at least one branch required")
    crits = []
    for i, cd in enumerate(doc.get("critical_point", [])):
        where = f"critical_point[{i}]"
        try:
            crits.append(OneSidedCriticalPoint(float(cd["location"]),
                                               str(cd["side"]), float(cd["order"])))
        except KeyError as exc:
            fail(f"{where}.{exc.args[0]}", "missing")
        except ValueError as exc:
            fail(where, str(exc))
    return PiecewiseMap(name, branches, crits)
