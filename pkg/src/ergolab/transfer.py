"""Grid (Ulam) discretization of transfer operators.

Operators act on piecewise-constant functions over k equal cells of [0,1].
The matrix convention is row-stochastic: entry (i, j) is the fraction of
cell i whose image under the map lands in cell j.  Acting on densities is
a left product v -> vM; acting on grid functions a right product v -> Mv
is the discretized Koopman side, and the transfer operator on functions is
M transposed against the invariant weights (see conjugated_operator).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import svdvals
from scipy.optimize import brentq

from .inducing import InducedScheme, cell_trajectory
from .maps import PiecewiseMap


@dataclass
class UlamOperator:
    """Row-stochastic grid discretization of a transfer operator."""

    k: int
    matrix: sparse.csr_matrix  # rows sum to 1 on retained rows
    kind: str  # "L_f" for the map, "L_F" for the induced map
    provenance: str
    excluded_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    row_correction: float = 0.0  # largest row renormalization applied

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.k) + 0.5) / self.k

    def density_step(self, v: np.ndarray) -> np.ndarray:
        """One application of the transfer operator to a density vector."""
        return self.matrix.T @ v

    def check_stochastic(self, tol: float = 1e-12) -> bool:
        rows = np.asarray(self.matrix.sum(axis=1)).ravel()
        rows = rows[~self.excluded_rows] if self.excluded_rows.size else rows
        return bool(np.all(np.abs(rows - 1.0) <= tol))


@dataclass
class SpectralReport:
    leading_eigenvalue: float
    second_modulus: float
    density: np.ndarray  # invariant density on the grid, integrates to 1
    residual: float
    iterations: int
    multiplicity_one: bool
    approximate: bool
    bv_norm_h: float
    int_inv_h: float  # grid estimate of the integral of 1/h
    non_mixing: bool = False


@dataclass
class RenewalFamily:
    """Return-time decomposition of the invariant-measure operator.

    P_n v = P(v restricted to return time n); stored via the per-grid-cell
    return-time weight profile so P(z) is evaluated with one diagonal
    scaling.  weights[n][i] is the fraction of grid cell i carrying return
    time n (Lebesgue fraction of retained mass).
    """

    P: np.ndarray  # dense k x k, acts on grid functions (column vectors)
    weights: dict  # n -> array of per-cell indicator fractions
    tau_max: int
    truncation_mass: float

    def operator(self, n: int) -> np.ndarray:
        w = self.weights.get(n)
        if w is None:
            return np.zeros_like(self.P)
        return self.P * w[np.newaxis, :]

    def eval(self, z: complex) -> np.ndarray:
        """P(z) = sum_n P_n z^n via a single diagonal weighting."""
        g = np.zeros(self.P.shape[1], dtype=complex)
        for n, w in self.weights.items():
            g += w * z**n
        return self.P * g[np.newaxis, :]

    def completeness_gap(self) -> float:
        """sup-norm of sum_n P_n - P; bounded by the truncation mass."""
        g = np.zeros(self.P.shape[1])
        for w in self.weights.values():
            g += w
        return float(np.max(np.abs(self.P * (g - 1.0)[np.newaxis, :])
                            .sum(axis=1)))


@dataclass
class TowerMeasure:
    density_Y: np.ndarray       # invariant density of the induced map
    mean_return_time: float     # integral of tau against mu_Y
    pushed_density: np.ndarray  # resulting invariant density estimate on I
    grid_k: int


# -- matrix assembly -------------------------------------------------------------


def ulam_matrix(source, k: int, samples_per_bin: int = 8) -> UlamOperator:
    """Row-stochastic grid matrix for a map or an induced scheme.

    Map branches are handled by exact monotone inversion of the grid lines.
    Scheme cells use quadrature over an adaptive subdivision (one accurate
    trajectory evaluation per cell); subdivision pieces partition each cell
    exactly, so row mass is conserved by construction.
    """
    if k < 2:
        raise ValueError("grid size k must be >= 2")
    if isinstance(source, PiecewiseMap):
        return _ulam_matrix_map(source, k)
    if isinstance(source, InducedScheme):
        if source.coverage < 0.95:
            raise ValueError(f"scheme coverage {source.coverage:.3f} < 0.95")
        return _ulam_matrix_scheme(source, k, samples_per_bin)
    raise TypeError(f"unsupported source {type(source).__name__}")


def _grid_line_preimages(fn, lo: float, hi: float, k: int) -> np.ndarray:
    """Sorted x with fn(x) on a grid line, fn monotone on [lo, hi]."""
    flo, fhi = fn(lo), fn(hi)
    a, b = min(flo, fhi), max(flo, fhi)
    targets = np.arange(math.floor(a * k) + 1, math.ceil(b * k)) / k
    xs = [float(brentq(lambda x: fn(x) - t, lo, hi,
                       xtol=5e-324, rtol=4 * np.finfo(float).eps))
          for t in targets if a < t < b]
    return np.array(sorted(xs))


def _ulam_matrix_map(pmap: PiecewiseMap, k: int) -> UlamOperator:
    rows, cols, vals = [], [], []
    grid = np.arange(1, k) / k
    for br in pmap.branches:
        f = br.formula.value
        pre = _grid_line_preimages(f, br.lo, br.hi, k)
        pts = np.unique(np.concatenate(
            [[br.lo, br.hi], pre, grid[(grid > br.lo) & (grid < br.hi)]]))
        mids = 0.5 * (pts[:-1] + pts[1:])
        lens = np.diff(pts)
        i_idx = np.minimum((mids * k).astype(int), k - 1)
        img = np.clip(np.asarray(br.value(mids), dtype=float), 0.0, 1.0)
        j_idx = np.minimum((img * k).astype(int), k - 1)
        rows.append(i_idx)
        cols.append(j_idx)
        vals.append(lens * k)  # mass / m(B_i) with m(B_i) = 1/k
    M = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(k, k)).tocsr()
    return _finalize(M, k, "L_f", pmap.name)


def _ulam_matrix_scheme(scheme: InducedScheme, k: int,
                        samples_per_bin: int) -> UlamOperator:
    rows, cols, vals = [], [], []
    for cell in scheme.cells:
        pts = _cell_subdivision(cell, k, samples_per_bin, scheme)
        mids = 0.5 * (pts[:-1] + pts[1:])
        lens = np.diff(pts)
        _, _, img = cell_trajectory(scheme, cell, mids)
        i_idx = np.minimum((mids * k).astype(int), k - 1)
        j_idx = np.minimum((img * k).astype(int), k - 1)
        rows.append(i_idx)
        cols.append(j_idx)
        vals.append(lens * k)
    M = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(k, k)).tocsr()
    return _finalize(M, k, "L_F",
                     f"scheme({scheme.map.name},q0={scheme.q0})")


def _cell_subdivision(cell, k: int, samples_per_bin: int,
                      scheme: InducedScheme) -> np.ndarray:
    """Partition points of a cell: grid lines plus equal slices fine enough
    that each piece's image spans well under one target grid cell."""
    span = cell.image_span
    if not math.isfinite(span):
        _, _, ends = cell_trajectory(scheme, cell,
                                     np.array([cell.left, cell.right]))
        span = abs(float(ends[1]) - float(ends[0]))
    n_eq = int(min(16384, max(8, math.ceil(span * k * samples_per_bin))))
    eq = np.linspace(cell.left, cell.right, n_eq + 1)
    g = np.arange(math.floor(cell.left * k) + 1, math.ceil(cell.right * k)) / k
    return np.unique(np.concatenate([eq, g]))


def _finalize(M: sparse.csr_matrix, k: int, kind: str,
              provenance: str) -> UlamOperator:
    row_sums = np.asarray(M.sum(axis=1)).ravel()
    excluded = row_sums <= 1e-12
    scale = np.where(excluded, 1.0, 1.0 / np.where(excluded, 1.0, row_sums))
    D = sparse.diags(scale)
    corr = float(np.max(np.abs(row_sums[~excluded] - 1.0))) if (~excluded).any() else 0.0
    return UlamOperator(k=k, matrix=(D @ M).tocsr(), kind=kind,
                        provenance=provenance,
                        excluded_rows=excluded, row_correction=corr)


# -- invariant density and spectrum ----------------------------------------------


def invariant_density(op: UlamOperator, tol: float = 1e-12,
                      max_iter: int = 20000) -> SpectralReport:
    """Left fixed vector of the grid operator, normalized as a density."""
    k = op.k
    keep = ~op.excluded_rows if op.excluded_rows.size else np.ones(k, bool)
    v = np.where(keep, 1.0, 0.0)
    v /= v.sum()
    MT = op.matrix.T.tocsr()
    it = 0
    res = math.inf
    for it in range(1, max_iter + 1):
        w = MT @ v
        s = w.sum()
        if s <= 0:
            break
        w /= s
        res = float(np.abs(w - v).sum())
        v = w
        if res < tol:
            break
    h = v * k  # density: cell mass / cell width
    gamma, mult_one = _second_modulus(op)
    with np.errstate(divide="ignore"):
        inv_h = np.where(h > 1e-8, 1.0 / np.where(h > 0, h, 1.0), np.inf)
    bv = float(np.abs(np.diff(h)).sum() + np.abs(h).max())
    return SpectralReport(
        leading_eigenvalue=1.0, second_modulus=gamma, density=h,
        residual=res, iterations=it, multiplicity_one=mult_one,
        approximate=res >= tol, bv_norm_h=bv,
        int_inv_h=float(np.sum(inv_h[keep]) / k),
        non_mixing=not mult_one)


def spectral_gap(op: UlamOperator, n_eigs: int = 6) -> tuple[float, bool]:
    """Contraction factor of the operator on the complement of constants,
    and simplicity of eigenvalue 1.

    The grid matrix is non-normal; on Markov-aligned grids its eigenvalues
    collapse (e.g. the dyadic grid for the doubling map gives spectrum
    {1, 0}) while the observed decay of nonconstant test functions matches
    the true essential contraction.  gamma is therefore estimated from the
    geometric decay of iterated grid-BV test functions; the eigensolve is
    used only for the multiplicity / peripheral-spectrum check.
    """
    return _decay_gamma(op), _eig_simple(op, n_eigs)


def _second_modulus(op: UlamOperator, n_eigs: int = 6) -> tuple[float, bool]:
    return _decay_gamma(op), _eig_simple(op, n_eigs)


def _eig_simple(op: UlamOperator, n_eigs: int = 6) -> bool:
    A = op.matrix
    if op.k <= 512:
        lam = np.linalg.eigvals(A.toarray())
    else:
        from scipy.sparse.linalg import eigs
        lam = eigs(A.T.astype(float), k=max(n_eigs, 3), which="LM",
                   return_eigenvectors=False, maxiter=5000, tol=1e-10)
    near_one = np.sum(np.abs(lam - 1.0) < 1e-8)
    peripheral = np.sum(np.abs(lam) > 1.0 - 1e-8)
    return bool(near_one == 1 and peripheral == 1)


def _grid_bv(v: np.ndarray) -> float:
    return float(np.abs(np.diff(v)).sum() + np.abs(v).max())


def _decay_gamma(op: UlamOperator, n_steps: int = 40) -> float:
    """Geometric decay rate of mean-zero BV test functions under the
    density action, averaged over the last few resolvable steps."""
    MT = op.matrix.T.tocsr()
    x = op.midpoints
    gammas = []
    for v0 in (x - 0.5, np.cos(2 * np.pi * x) + 0.3 * x):
        v = v0 - v0.mean()
        r0 = float(np.abs(v).mean())
        ratios = []
        prev = r0
        for _ in range(n_steps):
            v = MT @ v
            v -= v.mean()
            r = float(np.abs(v).mean())
            if r <= 1e-10 * r0 or prev == 0.0:
                break
            ratios.append(r / prev)
            prev = r
        if ratios:
            gammas.append(float(np.exp(np.mean(np.log(ratios)))))
    return max(gammas) if gammas else 0.0


def conjugated_operator(op: UlamOperator,
                        h: np.ndarray) -> np.ndarray:
    """Invariant-measure operator P = h^-1 L(h .) acting on grid functions.

    Returns a dense matrix with P1 = 1 on the support of h.  Cells with h
    below threshold carry no invariant mass (they are transient on the
    grid); their rows are zeroed so they contribute nothing to spectra.
    """
    M = op.matrix.toarray()
    good = h > 1e-8
    # (P v)_j = (1/h_j) sum_i M_ij h_i v_i
    P = (M * h[:, np.newaxis]).T / np.where(good, h, 1.0)[:, np.newaxis]
    P[~good, :] = 0.0
    return P


# -- tower pushdown ---------------------------------------------------------------


def pushdown_measure(scheme: InducedScheme, h: np.ndarray,
                     grid_k: int | None = None,
                     samples_per_bin: int = 4) -> TowerMeasure:
    """Spread the induced invariant measure along orbit segments.

    Each cell's mu_Y mass is distributed over its tau forward images and
    the result is normalized by the mean return time, yielding an estimate
    of the invariant density of the original map.
    """
    kh = h.size
    k = kh if grid_k is None else grid_k
    hist = np.zeros(k)
    mean_tau = 0.0
    for cell in scheme.cells:
        pts = _cell_subdivision(cell, k, samples_per_bin, scheme)
        mids = 0.5 * (pts[:-1] + pts[1:])
        w = np.diff(pts) * h[np.minimum((mids * kh).astype(int), kh - 1)]
        traj, _, _ = cell_trajectory(scheme, cell, mids)
        mean_tau += cell.tau * float(w.sum())
        idx = np.minimum((np.clip(traj, 0.0, 1.0) * k).astype(int), k - 1)
        hist += np.bincount(idx.ravel(),
                            weights=np.broadcast_to(w, idx.shape).ravel(),
                            minlength=k)
    pushed = hist * k / mean_tau
    pushed /= pushed.sum() / k  # exact renormalization of quadrature error
    hY = h / (h.sum() / kh)
    return TowerMeasure(density_Y=hY, mean_return_time=mean_tau,
                        pushed_density=pushed, grid_k=k)


# -- renewal family ---------------------------------------------------------------


def renewal_operators(scheme: InducedScheme, P: np.ndarray,
                      tau_max: int | None = None) -> RenewalFamily:
    """Split P by return time: P_n acts on the part of Y with tau = n."""
    k = P.shape[0]
    tau_max = scheme.tau_max if tau_max is None else tau_max
    weights: dict[int, np.ndarray] = {}
    covered = np.zeros(k)
    for cell in scheme.cells:
        w = weights.setdefault(cell.tau, np.zeros(k))
        _accumulate_overlap(w, cell.left, cell.right, k)
        _accumulate_overlap(covered, cell.left, cell.right, k)
    total = np.zeros(k)
    for n in [n for n in weights if n > tau_max]:
        del weights[n]
    # normalize: weights are fractions of the retained mass of each grid cell
    for w in weights.values():
        np.divide(w, covered, out=w, where=covered > 0)
        total += w
    return RenewalFamily(P=P, weights=weights, tau_max=tau_max,
                         truncation_mass=float(np.max(1.0 - np.minimum(total, 1.0))))


def _accumulate_overlap(acc: np.ndarray, lo: float, hi: float, k: int) -> None:
    """Add the overlap length of [lo, hi] with each grid cell, as a fraction
    of the grid cell width."""
    i0 = max(int(lo * k), 0)
    i1 = min(int(math.ceil(hi * k)), k)
    for i in range(i0, i1):
        a, b = i / k, (i + 1) / k
        ov = min(hi, b) - max(lo, a)
        if ov > 0:
            acc[i] += ov * k


@dataclass
class RenewalSpectrumPoint:
    z: complex
    min_singular_value: float
    eigenvalue_one_gap: float | None = None  # filled at z = 1
    simple_at_one: bool | None = None


def renewal_spectrum_check(family: RenewalFamily,
                           thetas=(0.5, 1.0, 2.0, 3.0),
                           sv_tol: float = 1e-6) -> list[RenewalSpectrumPoint]:
    """Distance of 1 from the spectrum of P(z) on the unit circle.

    At z = 1 the eigenvalue-1 simplicity and spectral gap are reported; at
    z = e^(i theta) != 1 the smallest singular value of Id - P(z) certifies
    that 1 is not in the spectrum (mixing); values below sv_tol raise the
    mixing-failure flag on the report entry.
    """
    out = []
    k = family.P.shape[0]
    Pz1 = family.eval(1.0)
    lam = np.linalg.eigvals(Pz1)
    near_one = np.sum(np.abs(lam - 1.0) < 1e-8)
    mods = np.sort(np.abs(lam))[::-1]
    gap = float(1.0 - mods[1]) if mods.size > 1 else 1.0
    sv1 = float(svdvals(np.eye(k) - Pz1)[-1])
    out.append(RenewalSpectrumPoint(z=1.0 + 0.0j, min_singular_value=sv1,
                                    eigenvalue_one_gap=gap,
                                    simple_at_one=bool(near_one == 1)))
    for th in thetas:
        z = complex(math.cos(th), math.sin(th))
        sv = float(svdvals(np.eye(k) - family.eval(z))[-1])
        out.append(RenewalSpectrumPoint(z=z, min_singular_value=sv))
    return out


def operator_norm_decay(family: RenewalFamily) -> dict:
    """Log-linear fit of the sup-norm surrogate of P_n against n."""
    ns, norms = [], []
    for n in sorted(family.weights):
        norm = float(np.abs(family.operator(n)).sum(axis=1).max())
        if norm > 0:
            ns.append(n)
            norms.append(norm)
    ns_a = np.array(ns, dtype=float)
    ln = np.log(np.array(norms))
    slope, intercept = np.polyfit(ns_a, ln, 1) if len(ns) >= 2 else (0.0, 0.0)
    return {"n": ns_a, "norms": np.array(norms),
            "slope": float(slope), "intercept": float(intercept)}


def tail_norm_sums(scheme: InducedScheme, p: float) -> dict:
    """Return-tail weighted branch sums controlling the renewal norms.

    first = sum_n n^(p-1) sum_{tau(a)>n} sup_a(1/F'), second the same with
    the variation; a truncation tail bound from the per-level constants is
    included.
    """
    from .inducing import cell_statistics

    first = 0.0
    second = 0.0
    for cell in scheme.cells:
        ns = np.arange(1, cell.tau, dtype=float)
        wn = float(np.sum(ns ** (p - 1.0)))
        first += wn * cell.sup_invF
        second += wn * cell.var_invF
    stats = cell_statistics(scheme)
    tail = 0.0
    b_ret = max((c.b for c in scheme.cells), default=0)
    C = stats.C_hat_sup if math.isfinite(stats.C_hat_sup) else 1.0
    for data in scheme.orbits:
        if data.singular:
            continue
        bs = np.arange(b_ret + 1, data.horizon + 1, dtype=float)
        tail += C * stats.M_hat * float(np.sum(
            np.exp(-data.log_E[b_ret + 1:]) * (bs + scheme.q0) ** (p - 1.0)))
    return {"first": first, "second": second, "tail_bound": tail, "p": p}


# -- twisted operators ------------------------------------------------------------


def twisted_operator(op: UlamOperator, phi_grid: np.ndarray,
                     t: float) -> tuple[np.ndarray, float]:
    """L_t v = L(e^(i t Phi) v) on the grid, with a norm surrogate for
    L_t - L_0 (max absolute row sum plus the grid variation of the
    multiplier)."""
    mult = np.exp(1j * t * phi_grid)
    M = op.matrix.toarray()
    Lt = (M * mult[:, np.newaxis]).T.astype(complex)
    L0 = M.T
    diff = np.abs(Lt - L0)
    row_term = float(diff.sum(axis=1).max())
    var_term = float(np.abs(np.diff(mult - 1.0)).sum()) / op.k
    return Lt, row_term + var_term


# -- martingale-coboundary decomposition ------------------------------------------


@dataclass
class GordinDecomposition:
    chi: np.ndarray
    phi_hat: np.ndarray  # grid proxy of Phi - chi o F + chi
    residual: float      # weighted L2 norm of P Phi - (Id - P) chi
    relative_residual: float
    series_terms: int


def gordin_solve(P: np.ndarray, phi: np.ndarray, weights: np.ndarray,
                 F_of_midpoints: np.ndarray | None = None,
                 tol: float = 1e-12, max_terms: int = 100000) -> GordinDecomposition:
    """Solve the coboundary equation chi = sum_{n>=1} P^n phi.

    phi must be mean zero against the weights (the invariant measure of P);
    it is centered internally.  The residual reported is the invariant-L2
    norm of P phi - (Id - P) chi, which vanishes identically in exact
    arithmetic and certifies that the decomposed part lies in the kernel
    of P.  F_of_midpoints (grid values of the induced map at midpoints)
    is only used to build the grid proxy of the decomposed observable.
    """
    w = weights / weights.sum()
    phi = phi - float(w @ phi)
    term = P @ phi
    chi = term.copy()
    n = 1
    while n < max_terms:
        term = P @ term
        chi += term
        n += 1
        inc = float(np.sqrt(w @ term**2))
        if inc < tol:
            break
    resid_vec = (P @ phi) - (chi - P @ chi)
    residual = float(np.sqrt(w @ resid_vec**2))
    if F_of_midpoints is not None:
        k = phi.size
        idx = np.minimum((np.clip(F_of_midpoints, 0.0, 1.0) * k).astype(int), k - 1)
        phi_hat = phi - chi[idx] + chi
    else:
        phi_hat = phi + chi - P @ chi  # uses P chi as the conditional mean
    norm_hat = float(np.sqrt(w @ phi_hat**2))
    rel = residual / norm_hat if norm_hat > 0 else 0.0
    return GordinDecomposition(chi=chi, phi_hat=phi_hat, residual=residual,
                               relative_residual=rel, series_terms=n)


# -- export -----------------------------------------------------------------------


def export_operator_csv(op: UlamOperator, path) -> None:
    coo = op.matrix.tocoo()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for i, j, v in sorted(zip(coo.row, coo.col, coo.data)):
            w.writerow([int(i), int(j), f"{v:.17g}"])


def export_density_csv(density: np.ndarray, path) -> None:
    k = density.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["midpoint", "density"])
        for i in range(k):
            w.writerow([f"{(i + 0.5) / k:.17g}", f"{density[i]:.17g}"])
