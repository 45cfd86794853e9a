import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from hybridphase.observables import (
    HermitianOperator,
    ObservableKind,
    Sector,
    cl_bracket,
    classify,
    commutator_expectation,
    complex_expansion,
    constraint_polynomial,
    expectation_at,
    hybrid_bracket,
    infinitesimal_canonical_transform,
    is_phase_invariant,
    operator_from_quadratic_form,
    qm_bracket,
    quadratic_form_from_operator,
    sigma_x,
    sigma_y,
    sigma_z,
)
from hybridphase.phase import StateVector, expand_state, phase_rotate
from hybridphase.polynomial import PolynomialObservable as Poly
from helpers import integer_hermitian, random_hermitian, random_polynomial, random_state


def V(name, n, N):
    return Poly.variable(name, n, N)


# -- Hermitian operators -------------------------------------------------------


def test_hermitian_symmetrizes_small_asymmetry_and_rejects_large():
    op = HermitianOperator([[1.0, 2.0 + 1e-14], [2.0, 3.0]])
    assert np.array_equal(op.matrix, op.matrix.conj().T)
    with pytest.raises(ValueError):
        HermitianOperator([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        HermitianOperator(np.ones((2, 3)))


def test_eigendecomposition_is_real_and_orthonormal():
    rng = np.random.default_rng(0)
    op = random_hermitian(rng, 5)
    w, U = op.eigh
    assert w.dtype == np.float64
    np.testing.assert_allclose(U.conj().T @ U, np.eye(5), atol=1e-13)
    np.testing.assert_allclose(U @ np.diag(w) @ U.conj().T, op.matrix, atol=1e-13)


# -- quadratic forms -------------------------------------------------------------


def test_identity_form_is_constraint():
    assert quadratic_form_from_operator(HermitianOperator.identity(2)) == constraint_polynomial(0, 2)


def test_sigma_z_form():
    X1, P1, X2, P2 = (V(s, 0, 2) for s in ("X1", "P1", "X2", "P2"))
    half = Fraction(1, 2)
    assert quadratic_form_from_operator(sigma_z()) == half * (X1**2 + P1**2) - half * (X2**2 + P2**2)


def test_diagonal_form():
    E = [0.25, -2.0, 5.0]
    form = quadratic_form_from_operator(HermitianOperator.diagonal(E))
    expect = sum(
        E[i] / 2 * (V(f"X{i + 1}", 0, 3) ** 2 + V(f"P{i + 1}", 0, 3) ** 2) for i in range(3)
    )
    assert form.terms.keys() == expect.terms.keys()
    for k, c in expect.terms.items():
        assert float(form.terms[k]) == c


def test_form_values_are_expectations():
    rng = np.random.default_rng(1)
    for N in (1, 3, 6):
        op = random_hermitian(rng, N)
        psi = random_state(rng, N)
        form = quadratic_form_from_operator(op)
        assert form(expand_state(StateVector(psi)).coords) == pytest.approx(op.expectation(psi), abs=1e-13)
        assert expectation_at(op, expand_state(StateVector(psi))) == pytest.approx(op.expectation(psi), abs=1e-13)


def test_operator_round_trip():
    rng = np.random.default_rng(2)
    op = random_hermitian(rng, 4)
    back = operator_from_quadratic_form(quadratic_form_from_operator(op))
    np.testing.assert_allclose(back.matrix, op.matrix, atol=1e-15)
    with pytest.raises(ValueError):
        operator_from_quadratic_form(V("X1", 0, 2))
    with pytest.raises(ValueError):
        operator_from_quadratic_form(V("X1", 0, 2) ** 2)


# -- brackets ------------------------------------------------------------------


def test_canonical_pairs():
    assert cl_bracket(V("x1", 2, 0), V("p1", 2, 0)) == 1
    assert cl_bracket(V("x1", 2, 0), V("x2", 2, 0)).is_zero()
    assert qm_bracket(V("X1", 0, 1), V("P1", 0, 1)) == 1


def _fd_bracket(A, B, y, pairs, h=1e-5):
    def grad(f, i):
        e = np.zeros_like(y)
        e[i] = h
        return (f(y + e) - f(y - e)) / (2 * h)

    return sum(grad(A, q) * grad(B, p) - grad(A, p) * grad(B, q) for q, p in pairs)


def test_classical_bracket_matches_finite_differences():
    x1, p1, x2, p2 = (V(s, 2, 0) for s in ("x1", "p1", "x2", "p2"))
    A, B = x1**2 * p2, x2 * p1
    R = cl_bracket(A, B)
    rng = np.random.default_rng(3)
    for y in rng.uniform(-2, 2, (100, 4)):
        assert R(y) == pytest.approx(_fd_bracket(A, B, y, [(0, 1), (2, 3)]), rel=1e-7, abs=1e-7)


def test_sigma_algebra():
    fx, fy, fz = (quadratic_form_from_operator(s()) for s in (sigma_x, sigma_y, sigma_z))
    assert qm_bracket(fx, fy) == 2 * fz


def test_constraint_commutes_with_every_quadratic_form():
    rng = np.random.default_rng(4)
    C = constraint_polynomial(1, 3)
    for _ in range(10):
        form = quadratic_form_from_operator(integer_hermitian(rng, 3), 1)
        assert qm_bracket(C, form).is_zero()


def test_bracket_dimension_mismatch():
    with pytest.raises(ValueError):
        hybrid_bracket(V("x1", 1, 1), V("x1", 1, 2))


def test_cross_sector_bracket_vanishes():
    a = V("x1", 1, 2) ** 2 * V("p1", 1, 2)
    b = quadratic_form_from_operator(sigma_x(), 1)
    assert hybrid_bracket(a, b).is_zero()


def test_self_bracket_vanishes():
    rng = np.random.default_rng(5)
    A = random_polynomial(rng, 2, 2)
    assert hybrid_bracket(A, A).is_zero()


def test_proliferation_example():
    n, N = 1, 2
    a = V("x1", n, N) ** 2
    b = V("p1", n, N)
    fz = quadratic_form_from_operator(sigma_z(), n)
    fx = quadratic_form_from_operator(sigma_x(), n)
    R = hybrid_bracket(a * fz, b * fx)
    quartic = R.homogeneous_qm_part(4)
    # {x^2, p}_CL = 2x, so the quartic part is 2 x <sigma_z><sigma_x>
    assert quartic == 2 * V("x1", n, N) * fz * fx
    # the quadratic part is a b {<sz>, <sx>}_QM = a b * 2 <sy>
    fy = quadratic_form_from_operator(sigma_y(), n)
    assert R.homogeneous_qm_part(2) == a * b * 2 * fy


# -- commutator / Poisson correspondence ------------------------------------


def test_commutator_expectation_examples():
    assert commutator_expectation(sigma_x(), sigma_x(), [1, 0]) == 0.0
    assert commutator_expectation(sigma_x(), sigma_y(), [1, 0]) == pytest.approx(2.0)


def test_commutator_matches_symbolic_bracket():
    rng = np.random.default_rng(6)
    F, G = random_hermitian(rng, 6), random_hermitian(rng, 6)
    psi = random_state(rng, 6)
    sym = qm_bracket(quadratic_form_from_operator(F), quadratic_form_from_operator(G))
    val = sym(expand_state(StateVector(psi)).coords)
    assert val == pytest.approx(commutator_expectation(F, G, psi), abs=1e-12)


# -- infinitesimal canonical transforms ---------------------------------------


def test_zero_generator_step_is_identity():
    pt = expand_state(StateVector([0.6, 0.8j]))
    np.testing.assert_array_equal(infinitesimal_canonical_transform(pt, sigma_x(), 0.0).coords, pt.coords)


def test_hamiltonian_generator_is_euler_step():
    rng = np.random.default_rng(7)
    H = random_hermitian(rng, 4)
    psi = random_state(rng, 4)
    dt = 1e-4
    pt = infinitesimal_canonical_transform(expand_state(StateVector(psi)), H, dt)
    euler = psi - 1j * dt * (H.matrix @ psi)
    np.testing.assert_allclose(pt.coords, expand_state(StateVector(euler)).coords, atol=1e-15)
    exact = expm(-1j * dt * H.matrix) @ psi
    err = np.abs(pt.coords - expand_state(StateVector(exact)).coords).max()
    assert err < 10 * dt**2 * np.linalg.norm(H.matrix, 2) ** 2


def test_identity_generator_is_phase_rotation():
    pt = expand_state(StateVector([0.6, 0.8j]))
    d = 1e-6
    moved = infinitesimal_canonical_transform(pt, HermitianOperator.identity(2), d)
    # identity generates exp(-i d) on the state
    np.testing.assert_allclose(moved.coords, phase_rotate(pt, -d).coords, atol=d**2)


# -- classification --------------------------------------------------------


def test_classify_sigma_z_form():
    cls = classify(quadratic_form_from_operator(sigma_z()))
    assert cls.kind is ObservableKind.QM_QUADRATIC
    assert Sector.BELONGS_QM in cls.sectors
    assert cls.qm_observable


def test_classify_balanced_quartic():
    fz = quadratic_form_from_operator(sigma_z())
    cls = classify(fz * fz)
    assert cls.kind is ObservableKind.ALMOST_CLASSICAL
    assert not cls.eligible(ObservableKind.QM_QUADRATIC)
    assert cls.eligible(ObservableKind.GENERAL_CLASSICAL)


def test_classify_unbalanced_linear():
    cls = classify(V("X1", 0, 1))
    assert cls.kind is ObservableKind.GENERAL_CLASSICAL
    assert not cls.almost_classical


def test_classify_sectors():
    assert classify(V("x1", 1, 1) ** 2).sectors == frozenset({Sector.BELONGS_CL})
    assert classify(V("x1", 1, 1) * V("X1", 1, 1) ** 2).sectors == frozenset({Sector.HYBRID})
    zero = classify(Poly.zero(1, 1))
    assert zero.kind is ObservableKind.QM_QUADRATIC
    assert zero.sectors == frozenset({Sector.BELONGS_CL, Sector.BELONGS_QM})


def test_classical_coefficient_times_form_is_not_qm_observable():
    cls = classify(V("x1", 1, 2) * quadratic_form_from_operator(sigma_x(), 1))
    assert cls.kind is ObservableKind.QM_QUADRATIC
    assert not cls.qm_observable


def test_complex_expansion_of_sigma_x():
    exp = complex_expansion(quadratic_form_from_operator(sigma_x()))
    # <sigma_x> ~ z1* z2 + z2* z1: every monomial has one z and one z*
    live = {k: v for k, v in exp.items() if v != (0, 0)}
    assert set(live) == {((), (1, 0), (0, 1)), ((), (0, 1), (1, 0))}


@given(st.integers(0, 2**32 - 1))
def test_phase_invariance_agrees_with_constraint_bracket(seed):
    rng = np.random.default_rng(seed)
    q = random_polynomial(rng, 1, 2, max_degree=4, max_terms=3)
    if rng.random() < 0.5:
        # make balanced inputs common
        coeff = random_polynomial(rng, 1, 0, max_degree=2).embed(1, 2)
        q = coeff * quadratic_form_from_operator(integer_hermitian(rng, 2), 1) ** int(rng.integers(1, 3))
    oracle = qm_bracket(constraint_polynomial(1, 2), q).is_zero()
    assert is_phase_invariant(q) == oracle


@given(st.integers(0, 2**32 - 1))
def test_subset_chain(seed):
    rng = np.random.default_rng(seed)
    q = random_polynomial(rng, 1, 2)
    cls = classify(q)
    if cls.kind is ObservableKind.QM_QUADRATIC:
        assert cls.almost_classical
    assert cls.eligible(ObservableKind.GENERAL_CLASSICAL)
    assert cls.almost_classical == cls.phase_invariant


def test_classification_is_rotation_invariant_numerically():
    rng = np.random.default_rng(8)
    fz = quadratic_form_from_operator(random_hermitian(rng, 3))
    q = fz * fz + 2 * fz
    pt = expand_state(StateVector(random_state(rng, 3)))
    for theta in np.linspace(0, 2 * math.pi, 7):
        assert q(phase_rotate(pt, theta).coords) == pytest.approx(q(pt.coords), rel=1e-12)
