import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridphase.dynamics import HybridHamiltonian, IntegratorConfig, Scheme
from hybridphase.ensemble import (
    ClassicalDistribution,
    DensityOperator,
    HybridEnsemble,
    ensemble_expectation,
    liouville_propagate,
    marginal,
    sample_factorized,
    summary,
)
from hybridphase.io import read_csv
from hybridphase.observables import constraint_polynomial, quadratic_form_from_operator, sigma_x, sigma_z
from hybridphase.phase import contract_state, same_ray
from hybridphase.polynomial import PolynomialObservable as Poly
from helpers import random_state


def gaussian(mean=(0.0, 0.0), s=(0.5, 0.5)):
    return ClassicalDistribution.gaussian(mean, np.diag(np.square(s)))


def test_branch_counts_are_binomial():
    count, w = 20000, 0.3
    ens = sample_factorized(gaussian(), DensityOperator.diagonal([w, 1 - w]), count, seed=1)
    k = np.count_nonzero(ens.labels == 0)
    assert abs(k - w * count) <= 5 * math.sqrt(count * w * (1 - w))


def test_gaussian_moments_within_clt_bounds():
    count = 20000
    mean, s = np.array([1.0, -2.0]), np.array([0.5, 2.0])
    ens = sample_factorized(gaussian(mean, s), DensityOperator.pure([1, 0]), count, seed=2)
    m = ens.weights @ ens.coords[:, :2]
    assert np.all(np.abs(m - mean) <= 5 * s / math.sqrt(count))
    var = ens.weights @ (ens.coords[:, :2] - m) ** 2
    assert np.all(np.abs(var - s**2) <= 5 * s**2 * math.sqrt(2 / count))


def test_uniform_and_delta():
    u = sample_factorized(ClassicalDistribution.uniform([0, -1], [1, 1]), DensityOperator.pure([1]), 500, seed=3)
    assert np.all((u.coords[:, 0] >= 0) & (u.coords[:, 0] < 1))
    d = sample_factorized(ClassicalDistribution.delta([0.2, 0.3]), DensityOperator.pure([0.6, 0.8]), 50, seed=3)
    np.testing.assert_array_equal(d.coords[:, :2], np.tile([0.2, 0.3], (50, 1)))
    for pt, _ in d.particles:
        assert same_ray(contract_state(pt.qm), [0.6, 0.8])


def test_sampling_is_deterministic_and_prefix_stable():
    cl, rho = gaussian(), DensityOperator.diagonal([0.5, 0.5])
    a = sample_factorized(cl, rho, 300, seed=7)
    b = sample_factorized(cl, rho, 300, seed=7)
    np.testing.assert_array_equal(a.coords, b.coords)
    head = sample_factorized(cl, rho, 100, seed=7)
    np.testing.assert_array_equal(head.coords, a.coords[:100])
    assert not np.array_equal(sample_factorized(cl, rho, 300, seed=8).coords, a.coords)


def test_phase_seed_changes_only_phases():
    cl, rho = gaussian(), DensityOperator.diagonal([0.4, 0.6])
    a = sample_factorized(cl, rho, 200, seed=9)
    b = sample_factorized(cl, rho, 200, seed=9, phase_seed=123)
    np.testing.assert_array_equal(a.coords[:, :2], b.coords[:, :2])
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.allclose(a.coords[:, 2:], b.coords[:, 2:])
    for k in range(20):
        assert same_ray(a.particle(k)[0].qm, b.particle(k)[0].qm)


def test_density_operator_validation():
    with pytest.raises(ValueError):
        DensityOperator.diagonal([0.5, 0.6])
    with pytest.raises(ValueError):
        DensityOperator([0.5, 0.5], [[1, 0], [1, 0]])
    rho = DensityOperator.from_matrix([[0.75, 0.25], [0.25, 0.25]])
    np.testing.assert_allclose(rho.matrix, [[0.75, 0.25], [0.25, 0.25]], atol=1e-14)
    with pytest.raises(ValueError):
        DensityOperator.from_matrix([[1.5, 0], [0, -0.5]])


def test_distribution_validation():
    with pytest.raises(ValueError):
        ClassicalDistribution.gaussian([0, 0], [[1, 2], [2, 1]])
    with pytest.raises(ValueError):
        ClassicalDistribution.uniform([0, 0], [1, 0])
    with pytest.raises(ValueError):
        ClassicalDistribution("cauchy")
    with pytest.raises(ValueError):
        sample_factorized(gaussian(), DensityOperator.pure([1]), 0, seed=0)


def test_free_streaming_variance_grows_quadratically():
    sx, sp, t = 0.3, 0.7, 2.0
    ens = sample_factorized(gaussian(s=(sx, sp)), DensityOperator.pure([1, 0]), 20000, seed=4)
    H = HybridHamiltonian(1, 2, h_cl=Poly.variable("p1", 1, 2) ** 2 / 2)
    out = liouville_propagate(ens, H, 0, t, IntegratorConfig(0.5, Scheme.LEAPFROG_SPLIT))
    np.testing.assert_allclose(out.coords[:, 0], ens.coords[:, 0] + t * ens.coords[:, 1], atol=1e-13)
    var = summary(out)["variance"]["x1"]
    expect = sx**2 + t**2 * sp**2
    assert abs(var - expect) <= 5 * expect * math.sqrt(2 / len(ens))


def test_chunking_does_not_change_results():
    rng = np.random.default_rng(5)
    ens = sample_factorized(gaussian(), DensityOperator.pure(random_state(rng, 2)), 37, seed=5)
    x = Poly.variable("x1", 1, 2)
    H = HybridHamiltonian(1, 2, h_cl=Poly.variable("p1", 1, 2) ** 2 / 2 + x**4 / 4, h_qm=sigma_x(),
                          interaction=x * quadratic_form_from_operator(sigma_z(), 1))
    cfg = IntegratorConfig(0.05, Scheme.GAUSS4)
    a = liouville_propagate(ens, H, 0, 0.5, cfg)
    b = liouville_propagate(ens, H, 0, 0.5, cfg, chunk_size=5)
    np.testing.assert_array_equal(a.coords, b.coords)
    np.testing.assert_array_equal(a.weights, ens.weights)


def test_expectations_of_identity_constraint_and_sigma_z():
    w = 0.3
    ens = sample_factorized(gaussian(), DensityOperator.diagonal([w, 1 - w]), 5000, seed=6)
    one = Poly.constant(1, 1, 2)
    assert ensemble_expectation(ens, one) == pytest.approx(1.0, abs=1e-12)
    assert ensemble_expectation(ens, constraint_polynomial(1, 2)) == pytest.approx(1.0, abs=1e-12)
    frac = np.count_nonzero(ens.labels == 0) / len(ens)
    sz = ensemble_expectation(ens, quadratic_form_from_operator(sigma_z(), 1))
    assert sz == pytest.approx(2 * frac - 1, abs=1e-12)


def test_marginal_properties(tmp_path):
    ens = sample_factorized(gaussian(), DensityOperator.pure([1, 0]), 2000, seed=10)
    edges = np.linspace(-1, 1, 41)
    m = marginal(ens, "x1", edges)
    assert np.all(m.masses >= 0)
    assert m.masses.sum() + m.out_of_range == pytest.approx(1.0, abs=1e-12)
    assert m.below > 0 and m.above > 0
    wide = marginal(ens, "x1", [-100, 100])
    assert wide.masses[0] == pytest.approx(1.0, abs=1e-12) and wide.out_of_range == 0
    assert marginal(ens, 0, edges).axis == "x1"
    header, rows = read_csv(m.to_csv(tmp_path / "m.csv"))
    assert header == ["bin_left", "bin_right", "mass"] and rows.shape == (40, 3)
    with pytest.raises(ValueError):
        marginal(ens, "x1", [1, 0])


def test_subset_renormalizes():
    ens = sample_factorized(gaussian(), DensityOperator.diagonal([0.5, 0.5]), 100, seed=11)
    sub = ens.subset(ens.labels == 1)
    assert sub.weights.sum() == pytest.approx(1.0)
    assert np.all(sub.labels == 1)


def test_ensemble_csv_columns(tmp_path):
    ens = sample_factorized(ClassicalDistribution.delta([0.1, 0.2, 0.3, 0.4]), DensityOperator.pure([1, 0]), 3, seed=0)
    header, rows = read_csv(ens.to_csv(tmp_path / "e.csv"))
    assert header == ["weight", "x1", "x2", "p1", "p2", "X1", "X2", "P1", "P2"]
    np.testing.assert_allclose(rows[0, 1:5], [0.1, 0.3, 0.2, 0.4])


@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_sampled_particles_satisfy_constraint(seed, N):
    rng = np.random.default_rng(seed)
    V = np.linalg.qr(rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N)))[0]
    w = rng.dirichlet(np.ones(N))
    ens = sample_factorized(gaussian(), DensityOperator(w, V.T), 50, seed=seed)
    assert np.abs(ens.constraint_values() - 1.0).max() <= 1e-12
    assert isinstance(ens, HybridEnsemble) and ens.weights.sum() == pytest.approx(1.0)
