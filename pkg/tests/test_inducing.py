import math

import numpy as np
import pytest

from ergolab.inducing import (F_condition_sums, NotCoveredError,
                              build_partition, cell_statistics,
                              cell_trajectory, export_csv, induced_map_eval,
                              induced_observable, return_time,
                              tau_distribution, weighted_bv_norm)
from ergolab.maps import Observable


def test_cells_partition_interval(small_scheme):
    cells = small_scheme.cells
    assert all(c.left < c.right for c in cells)
    for a, b in zip(cells, cells[1:]):
        assert a.right <= b.left + 1e-12
    total = sum(c.length for c in cells)
    assert total == pytest.approx(small_scheme.coverage, abs=1e-12)
    assert small_scheme.coverage > 0.95


def test_return_time_law(small_scheme):
    # tau = free flight (at most q0) plus binding period
    for c in small_scheme.cells:
        assert c.tau == c.ell0 + c.b
        assert 0 <= c.ell0 <= small_scheme.q0
        assert c.b <= c.tau <= small_scheme.q0 + c.b


def test_coverage_ledger(small_scheme):
    discarded_mass = sum(hi - lo for lo, hi, _ in small_scheme.discarded)
    assert small_scheme.coverage + discarded_mass == pytest.approx(1.0,
                                                                   abs=1e-9)
    assert small_scheme.truncation_loss == pytest.approx(discarded_mass,
                                                         abs=1e-12)


def test_induced_map_matches_naive_iteration(small_scheme):
    pmap = small_scheme.map
    rng = np.random.default_rng(5)
    checked = 0
    for y in rng.uniform(0.0, 1.0, 200):
        try:
            tau = return_time(small_scheme, y)
        except NotCoveredError:
            continue
        Fy, logd = induced_map_eval(small_scheme, y)
        z = y
        for _ in range(tau):
            z = pmap.eval(z)
        assert Fy == pytest.approx(z, abs=1e-7)
        checked += 1
    assert checked > 150


def test_cell_trajectory_shape_and_derivative(small_scheme):
    cell = max(small_scheme.cells, key=lambda c: c.b)
    assert cell.b >= 1
    xs = np.linspace(cell.left, cell.right, 5)[1:-1]
    traj, logd, fy = cell_trajectory(small_scheme, cell, xs)
    assert traj.shape == (cell.tau, xs.size)
    np.testing.assert_allclose(traj[0], xs)
    # |F'| via the chain rule against a finite difference
    h = 1e-9 * max(cell.length, 1e-3)
    x0 = xs[1]
    f0, _ = induced_map_eval(small_scheme, x0)
    f1, _ = induced_map_eval(small_scheme, x0 + h)
    fd = abs(f1 - f0) / h
    assert math.exp(logd[1]) == pytest.approx(fd, rel=1e-3)


def test_itinerary_constant_on_cells(small_scheme):
    pmap = small_scheme.map
    for cell in small_scheme.cells[::25]:
        xs = np.linspace(cell.left, cell.right, 7)[1:-1]
        y = xs.copy()
        for j in range(cell.ell0):
            idx = pmap.branch_index_array(y)
            assert np.all(idx == cell.itinerary[j])
            y = pmap.eval_array(y)


def test_cell_statistics_constants(small_scheme):
    stats = cell_statistics(small_scheme)
    assert stats.M_hat >= 1
    assert math.isfinite(stats.C_hat_sup) and stats.C_hat_sup > 0
    assert sum(st.count for st in stats.levels.values()) == len(
        small_scheme.cells)


def test_branch_condition_sums_finite(small_scheme):
    for p in (1.0, 2.0):
        sums = F_condition_sums(small_scheme, p)
        assert math.isfinite(sums["sup_sum"]) and sums["sup_sum"] > 0
        assert math.isfinite(sums["var_sum"]) and sums["var_sum"] >= 0
        assert sums["tail_bound"] >= 0


def test_tau_distribution(small_scheme):
    td = tau_distribution(small_scheme)
    assert td.tails[0] == pytest.approx(small_scheme.coverage, abs=1e-12)
    assert np.all(np.diff(td.tails) <= 1e-15)  # tails are non-increasing
    assert td.tails[-1] == 0.0 or td.tails[-1] < td.tails[0]
    assert td.lp_norms[1] > 0


def test_doubling_scheme_is_pure_free_flight(doubling_scheme):
    # no critical points: every cell returns after exactly q0 free steps
    assert all(c.b == 0 for c in doubling_scheme.cells)
    assert all(c.tau == doubling_scheme.q0 for c in doubling_scheme.cells)
    assert doubling_scheme.coverage == pytest.approx(1.0, abs=1e-12)


def test_locate_and_not_covered(small_scheme):
    cell = small_scheme.cells[3]
    mid = 0.5 * (cell.left + cell.right)
    assert small_scheme.locate(mid) == 3
    if small_scheme.discarded:
        lo, hi, _ = small_scheme.discarded[0]
        with pytest.raises(NotCoveredError):
            small_scheme.locate(0.5 * (lo + hi))


def test_induced_observable_and_bv_norm(small_scheme):
    phi = Observable(fn=lambda x: np.asarray(x, dtype=float) - 0.5,
                     name="centered")
    psi = induced_observable(small_scheme, phi)
    norm = weighted_bv_norm(small_scheme, psi)
    assert math.isfinite(norm) and norm > 0
    # the induced sum over a cell is bounded by tau * sup|phi|
    cell = small_scheme.cells[0]
    mid = 0.5 * (cell.left + cell.right)
    assert abs(psi(mid)) <= cell.tau * 0.5 + 1e-9


def test_build_partition_validation(ulam_map):
    with pytest.raises(ValueError):
        build_partition(ulam_map, delta=-1.0)
    with pytest.raises(ValueError):
        build_partition(ulam_map, q0=0)


def test_tau_max_truncation(ulam_map):
    tight = build_partition(ulam_map, delta=0.05, q0=5, tau_max=6)
    assert all(c.tau <= 5 + c.b for c in tight.cells)
    # truncating harder can only lose coverage
    loose = build_partition(ulam_map, delta=0.05, q0=5, tau_max=20)
    assert tight.coverage <= loose.coverage + 1e-12


def test_export_csv(tmp_path, small_scheme):
    out = tmp_path / "cells.csv"
    export_csv(small_scheme, out)
    lines = out.read_text().strip().splitlines()
    assert len(lines) == len(small_scheme.cells) + 2  # banner + header
