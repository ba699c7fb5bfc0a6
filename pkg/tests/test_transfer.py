import math

import numpy as np
import pytest

from conftest import l1_distance
from ergolab.inducing import cell_trajectory
from ergolab.maps import builtin_map
from ergolab.transfer import (conjugated_operator, export_density_csv,
                              export_operator_csv, gordin_solve,
                              invariant_density, operator_norm_decay,
                              pushdown_measure, renewal_operators,
                              renewal_spectrum_check, spectral_gap,
                              tail_norm_sums, twisted_operator, ulam_matrix)


def arcsine_density(x: np.ndarray) -> np.ndarray:
    return 1.0 / (np.pi * np.sqrt(x * (1.0 - x)))


def test_doubling_two_bin_matrix(doubling_map):
    op = ulam_matrix(doubling_map, 2)
    np.testing.assert_allclose(op.matrix.toarray(),
                               [[0.5, 0.5], [0.5, 0.5]], atol=1e-14)


def test_doubling_matrix_stochastic_and_flat_density(doubling_map):
    op = ulam_matrix(doubling_map, 64)
    assert op.check_stochastic()
    rep = invariant_density(op)
    np.testing.assert_allclose(rep.density, 1.0, atol=1e-10)
    assert rep.multiplicity_one


def test_quadratic_density_approximates_arcsine(ulam_map):
    op = ulam_matrix(ulam_map, 512)
    assert op.check_stochastic()
    rep = invariant_density(op)
    ref = arcsine_density(op.midpoints)
    ref /= ref.sum() / op.k
    assert l1_distance(rep.density, ref) < 0.1


def test_density_grid_convergence(ulam_map):
    errs = []
    for k in (128, 256, 512):
        op = ulam_matrix(ulam_map, k)
        rep = invariant_density(op)
        ref = arcsine_density(op.midpoints)
        ref /= ref.sum() / k
        errs.append(l1_distance(rep.density, ref))
    assert errs[2] < errs[0]


def test_doubling_contraction_factor(doubling_map):
    op = ulam_matrix(doubling_map, 64)
    gamma, simple = spectral_gap(op)
    assert simple
    assert gamma == pytest.approx(0.5, abs=0.05)


def test_two_cycle_map_is_not_mixing():
    # x + 1/2 mod 1: invariant but periodic, eigenvalue 1 not simple on
    # the grid (eigenvalue -1 sits on the unit circle)
    from ergolab.maps import Branch, Formula, PiecewiseMap
    rot = PiecewiseMap("rot-half",
                       [Branch(0.0, 0.5, Formula("poly", (0.5, 1.0))),
                        Branch(0.5, 1.0, Formula("poly", (-0.5, 1.0)))])
    op = ulam_matrix(rot, 32)
    _, simple = spectral_gap(op)
    assert not simple


def test_conjugated_operator_fixes_constants(ulam_map):
    op = ulam_matrix(ulam_map, 128)
    rep = invariant_density(op)
    P = conjugated_operator(op, rep.density)
    ones = np.ones(op.k)
    good = rep.density > 1e-8
    np.testing.assert_allclose((P @ ones)[good], 1.0, atol=1e-9)


def test_renewal_family_consistency(small_scheme):
    op = ulam_matrix(small_scheme, 64)
    rep = invariant_density(op)
    P = conjugated_operator(op, rep.density)
    fam = renewal_operators(small_scheme, P)
    # summing the pieces recovers P up to the truncation ledger
    assert fam.completeness_gap() <= fam.truncation_mass + 1e-10
    total = np.zeros_like(P)
    for n in fam.weights:
        total += fam.operator(n)
    np.testing.assert_allclose(total, fam.eval(1.0).real, atol=1e-12)


def test_renewal_spectrum_points(small_scheme):
    op = ulam_matrix(small_scheme, 64)
    rep = invariant_density(op)
    P = conjugated_operator(op, rep.density)
    fam = renewal_operators(small_scheme, P)
    pts = renewal_spectrum_check(fam)
    assert pts[0].z == 1.0
    assert pts[0].simple_at_one
    assert all(p.min_singular_value > 0.01 for p in pts[1:])


def test_operator_norm_decay(small_scheme):
    op = ulam_matrix(small_scheme, 64)
    rep = invariant_density(op)
    P = conjugated_operator(op, rep.density)
    fam = renewal_operators(small_scheme, P)
    fit = operator_norm_decay(fam)
    assert fit["slope"] < 0  # norms of the return-time pieces decrease


def test_doubling_tail_norm_sums_exact(doubling_scheme):
    # all cells have tau = q0 and sum of sup(1/F') over branches is 1,
    # so the first sum collapses to sum_{n=1}^{q0-1} 1 = q0 - 1
    sums = tail_norm_sums(doubling_scheme, 1.0)
    assert sums["first"] == pytest.approx(doubling_scheme.q0 - 1.0, rel=1e-9)
    assert sums["second"] == pytest.approx(0.0, abs=1e-9)


def test_pushdown_doubling_flat(doubling_scheme):
    op = ulam_matrix(doubling_scheme, 64)
    rep = invariant_density(op)
    tm = pushdown_measure(doubling_scheme, rep.density, grid_k=64)
    np.testing.assert_allclose(tm.pushed_density, 1.0, atol=1e-8)
    assert tm.mean_return_time == pytest.approx(doubling_scheme.q0, rel=1e-9)


def test_pushdown_quadratic_close_to_arcsine(small_scheme):
    op = ulam_matrix(small_scheme, 128)
    rep = invariant_density(op)
    tm = pushdown_measure(small_scheme, rep.density, grid_k=128)
    x = (np.arange(128) + 0.5) / 128
    ref = arcsine_density(x)
    ref /= ref.sum() / 128
    assert l1_distance(tm.pushed_density, ref) < 0.2


def test_twisted_operator_limits(doubling_map):
    op = ulam_matrix(doubling_map, 32)
    phi = op.midpoints - 0.5
    L0, d0 = twisted_operator(op, phi, 0.0)
    np.testing.assert_allclose(L0, op.matrix.toarray().T, atol=1e-14)
    assert d0 == pytest.approx(0.0, abs=1e-14)
    _, d1 = twisted_operator(op, phi, 0.5)
    assert d1 > 0
    # the operator perturbation is Lipschitz in the twist parameter
    _, d2 = twisted_operator(op, phi, 1.0)
    assert d2 <= 2.5 * d1


def test_gordin_residual_vanishes(small_scheme):
    op = ulam_matrix(small_scheme, 64)
    rep = invariant_density(op)
    P = conjugated_operator(op, rep.density)
    k = op.k
    phi = np.zeros(k)
    for i, m in enumerate(op.midpoints):
        try:
            cell = small_scheme.cells[small_scheme.locate(m)]
        except LookupError:
            continue
        traj, _, _ = cell_trajectory(small_scheme, cell, np.array([m]))
        phi[i] = float(np.sum(traj[:, 0] - 0.5))
    dec = gordin_solve(P, phi, rep.density)
    assert dec.relative_residual <= 1e-8
    assert dec.series_terms >= 1


def test_exports(tmp_path, doubling_map):
    op = ulam_matrix(doubling_map, 8)
    rep = invariant_density(op)
    export_operator_csv(op, tmp_path / "op.csv")
    export_density_csv(rep.density, tmp_path / "h.csv")
    assert (tmp_path / "op.csv").read_text().startswith("row,col,value")
    assert len((tmp_path / "h.csv").read_text().splitlines()) == 9
