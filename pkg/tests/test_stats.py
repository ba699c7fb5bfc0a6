import math

import numpy as np
import pytest

from ergolab.maps import Observable, builtin_map
from ergolab.stats import (OrbitEnsemble, birkhoff_samples, clt_test,
                           correlation, decay_envelope, decay_fit, fclt_paths,
                           green_kubo_sigma, large_deviation)

CENTERED = Observable(fn=lambda x: np.asarray(x, dtype=float) - 0.5,
                      name="x-centered")
COS = Observable(fn=lambda x: np.cos(2 * np.pi * np.asarray(x, dtype=float)),
                 name="cos")


@pytest.fixture(scope="module")
def doubling():
    return builtin_map("doubling")


def test_ensemble_seed_reproducibility(doubling):
    a = OrbitEnsemble(map=doubling, N=100, n=10, seed=3).initial_points()
    b = OrbitEnsemble(map=doubling, N=100, n=10, seed=3).initial_points()
    c = OrbitEnsemble(map=doubling, N=100, n=10, seed=4).initial_points()
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_ensemble_validation(doubling):
    with pytest.raises(ValueError):
        OrbitEnsemble(map=doubling, N=0, n=10)
    with pytest.raises(ValueError):
        OrbitEnsemble(map=doubling, N=10, n=10, law="bogus")
    with pytest.raises(ValueError):
        OrbitEnsemble(map=doubling, N=10, n=10, law="grid-weighted")


def test_exact_binary_iteration_stays_random(doubling):
    # float iteration of x -> 2x mod 1 collapses to 0 after 53 steps; the
    # exact bit-injection path must keep the empirical mean near 1/2
    ens = OrbitEnsemble(map=doubling, N=2000, n=200, burn_in=100, seed=1)
    means = []
    ens.iterate(200, lambda t, x: means.append(float(x.mean())))
    late = np.mean(means[100:])
    assert late == pytest.approx(0.5, abs=0.02)
    assert np.std(means[100:]) > 1e-6  # not frozen


def test_grid_weighted_initial_law(doubling):
    h = np.zeros(10)
    h[7] = 1.0  # all mass in [0.7, 0.8)
    ens = OrbitEnsemble(map=doubling, N=500, n=5, law="grid-weighted",
                        grid_density=h)
    pts = ens.initial_points()
    assert np.all((pts >= 0.7) & (pts < 0.8))


def test_birkhoff_variance_doubling(doubling):
    ens = OrbitEnsemble(map=doubling, N=5000, n=2000, seed=11)
    samples = birkhoff_samples(ens, CENTERED)
    # sigma^2 = 1/4 for x - 1/2 under the doubling map
    assert float(np.var(samples)) == pytest.approx(0.25, rel=0.1)


def test_clt_test_accepts_gaussian_rejects_uniform():
    rng = np.random.default_rng(0)
    good = clt_test(rng.normal(0.0, 0.5, 20000), 0.25)
    assert good.verdict and good.ks_distance < 0.02
    bad = clt_test(rng.uniform(-1, 1, 20000), 0.25)
    assert not bad.verdict


def test_clt_test_degenerate_variance():
    rep = clt_test(np.full(100, 0.01), 0.0)
    assert rep.verdict  # bounded sums are the degenerate (coboundary) regime


def test_correlation_matches_geometric_oracle(doubling):
    rep = correlation(doubling, CENTERED, CENTERED, n_max=8, N=40000, seed=2)
    # rho(n) = 2^-n / 12 for the doubling map
    assert rep.rho[0] == pytest.approx(1.0 / 12.0, rel=0.02)
    for n in (1, 2, 3):
        assert rep.rho[n] == pytest.approx(2.0**-n / 12.0,
                                           abs=3 * rep.noise_floor)


def test_correlation_operator_method(doubling):
    from ergolab.transfer import invariant_density, ulam_matrix
    op = ulam_matrix(doubling, 256)
    h = invariant_density(op).density
    rep = correlation(doubling, CENTERED, CENTERED, n_max=8,
                      method="operator", operator=op, density=h)
    assert rep.method == "operator"
    for n in (1, 2, 3):
        assert rep.rho[n] == pytest.approx(2.0**-n / 12.0, rel=0.05)


def test_green_kubo_doubling(doubling):
    s2, _ = green_kubo_sigma(doubling, CENTERED, n_max=25, N=50000, seed=3)
    assert s2 == pytest.approx(0.25, rel=0.05)
    s2c, _ = green_kubo_sigma(doubling, COS, n_max=25, N=50000, seed=3)
    assert s2c == pytest.approx(0.5, rel=0.05)


def test_green_kubo_rejects_nonsummable():
    ns = np.arange(0, 30, dtype=float)
    rho = np.empty(30)
    rho[0] = 1.0
    rho[1:] = ns[1:] ** -0.5  # tail sum diverges
    with pytest.raises(ValueError):
        green_kubo_sigma(builtin_map("doubling"), CENTERED, rho=rho)


def test_decay_fit_synthetic_exponential():
    ns = np.arange(1, 26, dtype=float)
    fit = decay_fit(3.0 * np.exp(-0.7 * ns))
    assert fit.fit_kind == "exponential"
    assert fit.rate == pytest.approx(0.7, rel=1e-9)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.prefactor == pytest.approx(3.0, rel=1e-9)


def test_decay_fit_synthetic_polynomial():
    ns = np.arange(1, 26, dtype=float)
    fit = decay_fit(5.0 * ns**-2.5)
    assert fit.fit_kind == "polynomial"
    assert fit.rate == pytest.approx(2.5, rel=1e-9)


def test_decay_fit_too_fast():
    fit = decay_fit(np.array([1e-12, 1e-13, 0.0, 0.0]), noise_floor=1e-6)
    assert fit.fit_kind == "decay-too-fast"


def test_decay_envelope_shape():
    tails = 2.0 ** -np.arange(0, 21, dtype=float)
    env = decay_envelope(tails, 1.0, np.array([4, 8, 16]), q=2.0)
    assert np.all(env > 0)
    assert env[2] < env[0]


def test_fclt_doubling(doubling):
    ens = OrbitEnsemble(map=doubling, N=4000, n=1000, seed=13)
    rep = fclt_paths(ens, CENTERED, 0.25)
    assert rep.ks_endpoint < 0.05
    assert rep.ks_running_max < 0.05
    assert rep.ks_integral < 0.05


def test_large_deviation_trivial_regime(doubling):
    # threshold above sup|v| makes the tail empty for every horizon
    ens = OrbitEnsemble(map=doubling, N=500, n=100, seed=4)
    rep = large_deviation(ens, CENTERED, 2.0, np.array([10, 50, 100]))
    assert rep.all_zero
    np.testing.assert_array_equal(rep.tail_prob, 0.0)
    assert rep.upper_bound == pytest.approx(3.0 / 500)


def test_large_deviation_tail_decreases(doubling):
    ens = OrbitEnsemble(map=doubling, N=5000, n=400, seed=5)
    rep = large_deviation(ens, CENTERED, 0.1, np.array([25, 100, 400]))
    pos = rep.tail_prob[rep.tail_prob > 0]
    assert rep.tail_prob[0] > 0
    assert np.all(np.diff(rep.tail_prob) <= 0)
    assert pos[-1] < pos[0] or rep.tail_prob[-1] == 0.0


def test_large_deviation_validation(doubling):
    ens = OrbitEnsemble(map=doubling, N=10, n=10, seed=0)
    with pytest.raises(ValueError):
        large_deviation(ens, CENTERED, 0.0, np.array([5]))
