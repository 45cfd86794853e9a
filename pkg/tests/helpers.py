"""Random inputs shared by the test modules."""

from __future__ import annotations

from fractions import Fraction

import numpy as np

from hybridphase.observables import HermitianOperator, quadratic_form_from_operator
from hybridphase.polynomial import PolynomialObservable


def random_hermitian(rng: np.random.Generator, N: int, scale: float = 1.0) -> HermitianOperator:
    A = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
    return HermitianOperator(scale * 0.5 * (A + A.conj().T))


def integer_hermitian(rng: np.random.Generator, N: int, high: int = 3) -> HermitianOperator:
    """Hermitian matrix with small Gaussian-integer entries (exact quadratic forms)."""
    A = rng.integers(-high, high + 1, (N, N)) + 1j * rng.integers(-high, high + 1, (N, N))
    return HermitianOperator(A + A.conj().T)


def random_state(rng: np.random.Generator, N: int) -> np.ndarray:
    v = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    return v / np.linalg.norm(v)


def random_fraction(rng: np.random.Generator) -> Fraction:
    return Fraction(int(rng.integers(-6, 7)), int(rng.integers(1, 5)))


def random_polynomial(
    rng: np.random.Generator,
    n: int,
    N: int,
    max_degree: int = 4,
    max_terms: int = 4,
    which: str = "all",
) -> PolynomialObservable:
    """Sparse polynomial with rational coefficients.

    ``which`` restricts the support to ``"cl"`` or ``"qm"`` variables.
    """
    dim = 2 * (n + N)
    lo, hi = {"all": (0, dim), "cl": (0, 2 * n), "qm": (2 * n, dim)}[which]
    terms = {}
    for _ in range(int(rng.integers(1, max_terms + 1))):
        key = [0] * dim
        for _ in range(int(rng.integers(0, max_degree + 1))):
            if hi > lo:
                key[int(rng.integers(lo, hi))] += 1
        terms[tuple(key)] = random_fraction(rng)
    return PolynomialObservable(terms, n, N)


def random_classical_pair(rng: np.random.Generator, n: int, N: int):
    """Two classical polynomials with nonzero canonical bracket."""
    from hybridphase.observables import cl_bracket

    while True:
        a = random_polynomial(rng, n, N, max_degree=2, max_terms=3, which="cl")
        b = random_polynomial(rng, n, N, max_degree=2, max_terms=3, which="cl")
        if not cl_bracket(a, b).is_zero():
            return a, b


def integer_quadratic_form(rng: np.random.Generator, n: int, N: int) -> PolynomialObservable:
    return quadratic_form_from_operator(integer_hermitian(rng, N), n)
