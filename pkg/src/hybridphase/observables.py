"""Observable algebra on hybrid phase space.

Hermitian operators map to real quadratic forms in the quantum coordinates,
the classical, quantum and hybrid Poisson brackets act exactly on
:class:`~hybridphase.polynomial.PolynomialObservable`, and :func:`classify`
sorts polynomials into QM quadratic forms, almost-classical (phase-invariant)
observables, and general classical functions.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property, lru_cache
from math import comb
from numbers import Rational

import numpy as np

from hybridphase.phase import QuantumPhasePoint, StateVector, contract_state
from hybridphase.polynomial import PolynomialObservable

HERMITIAN_TOL = 1e-12
CLASSIFY_TOL = 1e-12


class HermitianOperator:
    """Finite Hermitian matrix.

    Inputs within ``HERMITIAN_TOL`` (relative to the largest entry) of being
    Hermitian are symmetrized to ``(A + A^dagger)/2``; anything further off is
    rejected with ``ValueError``.
    """

    def __init__(self, matrix):
        m = np.array(matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("operator entries must be finite")
        scale = max(1.0, float(np.abs(m).max(initial=0.0)))
        if np.abs(m - m.conj().T).max(initial=0.0) > HERMITIAN_TOL * scale:
            raise ValueError("operator is not Hermitian")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def eigh(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (ascending) and orthonormal eigenvector columns."""
        w, v = np.linalg.eigh(self.matrix)
        return w, v

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eigh[0]

    def expectation(self, psi) -> float:
        v = np.asarray(psi.amplitudes if isinstance(psi, StateVector) else psi, dtype=np.complex128)
        return float(np.vdot(v, self.matrix @ v).real)

    def __add__(self, other: HermitianOperator) -> HermitianOperator:
        return HermitianOperator(self.matrix + other.matrix)

    def __mul__(self, c: float) -> HermitianOperator:
        return HermitianOperator(self.matrix * float(c))

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"HermitianOperator(dim={self.dim})"

    @classmethod
    def identity(cls, N: int) -> HermitianOperator:
        return cls(np.eye(N))

    @classmethod
    def diagonal(cls, values) -> HermitianOperator:
        return cls(np.diag(np.asarray(values, dtype=float)))


def sigma_x() -> HermitianOperator:
    return HermitianOperator([[0, 1], [1, 0]])


def sigma_y() -> HermitianOperator:
    return HermitianOperator([[0, -1j], [1j, 0]])


def sigma_z() -> HermitianOperator:
    return HermitianOperator([[1, 0], [0, -1]])


def _exactish(v: float):
    # integral floats become ints so operators like the Pauli matrices give
    # exact rational quadratic forms
    if float(v).is_integer():
        return int(v)
    return float(v)


def quadratic_form_from_operator(op: HermitianOperator, n: int = 0) -> PolynomialObservable:
    """Expectation value ``<psi|G|psi>`` as a polynomial in ``(X, P)``.

    ``(1/2) sum_ij G_ij (X_i - i P_i)(X_j + i P_j)``, expanded into real
    monomials; ``n`` extra (unused) classical pairs may be prepended.
    """
    if not isinstance(op, HermitianOperator):
        op = HermitianOperator(op)
    N = op.dim
    dim = 2 * (n + N)
    terms: dict[tuple, object] = {}
    half = Fraction(1, 2)

    def add(i1, i2, c):
        key = [0] * dim
        key[i1] += 1
        key[i2] += 1
        key = tuple(key)
        terms[key] = terms.get(key, 0) + c

    for i in range(N):
        Xi, Pi = 2 * n + 2 * i, 2 * n + 2 * i + 1
        for j in range(N):
            Xj, Pj = 2 * n + 2 * j, 2 * n + 2 * j + 1
            a = _exactish(op.matrix[i, j].real)
            b = _exactish(op.matrix[i, j].imag)
            # Re[(a + ib)(X_i X_j + P_i P_j + i(X_i P_j - P_i X_j))] / 2
            if a:
                add(Xi, Xj, a * half)
                add(Pi, Pj, a * half)
            if b:
                add(Xi, Pj, -b * half)
                add(Pi, Xj, b * half)
    return PolynomialObservable(terms, n, N)


def operator_from_quadratic_form(poly: PolynomialObservable) -> HermitianOperator:
    """Inverse of :func:`quadratic_form_from_operator` for QM quadratic forms.

    ``G_ij = d^2 poly / (d zbar_i d z_j)`` with ``z = (X + iP)/sqrt(2)``.
    """
    n, N = poly.n, poly.N
    if poly.depends_on_cl() or (not poly.is_zero() and poly.qm_degrees() != {2}):
        raise ValueError("not a quadratic form in the quantum coordinates")
    H = np.zeros((2 * N, 2 * N))
    for key, c in poly.terms.items():
        a, b = [v - 2 * n for v, e in enumerate(key) for _ in range(e)]
        if a == b:
            H[a, a] += 2 * float(c)
        else:
            H[a, b] += float(c)
            H[b, a] += float(c)
    HXX, HPP = H[0::2, 0::2], H[1::2, 1::2]
    HPX = H[1::2, 0::2]
    G = 0.5 * (HXX + HPP + 1j * (HPX - HPX.T))
    op = HermitianOperator(G)
    if _max_coeff_diff(quadratic_form_from_operator(op, n), poly) > 1e-12 * max(1.0, _max_abs(poly)):
        raise ValueError("quadratic form is not phase invariant; no operator reproduces it")
    return op


def _max_abs(poly: PolynomialObservable) -> float:
    return max((abs(float(c)) for c in poly.terms.values()), default=0.0)


def _max_coeff_diff(a: PolynomialObservable, b: PolynomialObservable) -> float:
    return _max_abs(a.to_float() - b.to_float())


def constraint_polynomial(n: int, N: int) -> PolynomialObservable:
    """Normalization constraint ``C = (1/2) sum_i (X_i^2 + P_i^2)``."""
    return quadratic_form_from_operator(HermitianOperator.identity(N), n) if N else PolynomialObservable.zero(n, N)


# -- brackets ------------------------------------------------------------


def _bracket(A: PolynomialObservable, B: PolynomialObservable, pairs) -> PolynomialObservable:
    if (A.n, A.N) != (B.n, B.N):
        raise ValueError(f"dimension mismatch: (n, N) = {(A.n, A.N)} vs {(B.n, B.N)}")
    out: dict[tuple, object] = {}
    for q, p in pairs:
        dAq, dBp = A.diff(q), B.diff(p)
        dAp, dBq = A.diff(p), B.diff(q)
        for left, right, sign in ((dAq, dBp, 1), (dAp, dBq, -1)):
            if left.is_zero() or right.is_zero():
                continue
            for ka, ca in left.terms.items():
                for kb, cb in right.terms.items():
                    k = tuple(a + b for a, b in zip(ka, kb))
                    out[k] = out.get(k, 0) + sign * ca * cb
    return PolynomialObservable(out, A.n, A.N)


def _cl_pairs(n: int):
    return [(2 * k, 2 * k + 1) for k in range(n)]


def _qm_pairs(n: int, N: int):
    return [(2 * n + 2 * i, 2 * n + 2 * i + 1) for i in range(N)]


def cl_bracket(A: PolynomialObservable, B: PolynomialObservable) -> PolynomialObservable:
    """Classical Poisson bracket over the ``(x_k, p_k)`` pairs."""
    return _bracket(A, B, _cl_pairs(A.n))


def qm_bracket(A: PolynomialObservable, B: PolynomialObservable) -> PolynomialObservable:
    """Poisson bracket over the oscillator pairs ``(X_i, P_i)``."""
    return _bracket(A, B, _qm_pairs(A.n, A.N))


def hybrid_bracket(A: PolynomialObservable, B: PolynomialObservable) -> PolynomialObservable:
    """Sum of the classical and quantum brackets."""
    return _bracket(A, B, _cl_pairs(A.n) + _qm_pairs(A.n, A.N))


def commutator_expectation(F: HermitianOperator, G: HermitianOperator, psi) -> float:
    """``<psi| (1/i)[F, G] |psi>`` with hbar = 1."""
    if F.dim != G.dim:
        raise ValueError("operator dimension mismatch")
    v = np.asarray(psi.amplitudes if isinstance(psi, StateVector) else psi, dtype=np.complex128)
    if v.shape[0] != F.dim:
        raise ValueError("state dimension mismatch")
    comm = F.matrix @ G.matrix - G.matrix @ F.matrix
    return float((np.vdot(v, comm @ v) / 1j).real)


@lru_cache(maxsize=64)
def _cached_form(G: HermitianOperator) -> PolynomialObservable:
    # operators hash by identity, so this caches per instance
    return quadratic_form_from_operator(G)


def infinitesimal_canonical_transform(
    point: QuantumPhasePoint, G: HermitianOperator, dalpha: float
) -> QuantumPhasePoint:
    """``X -> X + dG/dP dalpha``, ``P -> P - dG/dX dalpha`` with ``G = <psi|G|psi>``."""
    if point.N != G.dim:
        raise ValueError("dimension mismatch")
    form = _cached_form(G)
    return QuantumPhasePoint(point.coords + dalpha * form.compiled.field(point.coords))


# -- classification -------------------------------------------------------


class ObservableKind(enum.Enum):
    QM_QUADRATIC = "QM_QUADRATIC"
    ALMOST_CLASSICAL = "ALMOST_CLASSICAL"
    GENERAL_CLASSICAL = "GENERAL_CLASSICAL"


class Sector(enum.Enum):
    BELONGS_CL = "BELONGS_CL"
    BELONGS_QM = "BELONGS_QM"
    HYBRID = "HYBRID"


_RANK = {
    ObservableKind.QM_QUADRATIC: 0,
    ObservableKind.ALMOST_CLASSICAL: 1,
    ObservableKind.GENERAL_CLASSICAL: 2,
}


@dataclass(frozen=True)
class ObservableClass:
    kind: ObservableKind
    sectors: frozenset
    qm_degrees: tuple[int, ...]
    cl_degree: int
    phase_invariant: bool

    def eligible(self, kind: ObservableKind) -> bool:
        """Subset chain: QM quadratic forms are almost-classical, which are classical."""
        return _RANK[self.kind] <= _RANK[kind]

    @property
    def almost_classical(self) -> bool:
        return self.eligible(ObservableKind.ALMOST_CLASSICAL)

    @property
    def qm_observable(self) -> bool:
        """Quadratic form with constant classical coefficients."""
        return self.kind is ObservableKind.QM_QUADRATIC and Sector.BELONGS_QM in self.sectors

    @property
    def qm_degree(self) -> int:
        return max(self.qm_degrees, default=0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "sectors": sorted(s.value for s in self.sectors),
            "qm_degrees": list(self.qm_degrees),
            "cl_degree": self.cl_degree,
            "phase_invariant": self.phase_invariant,
            "qm_observable": self.qm_observable,
        }


def _mode_expansion(a: int, b: int) -> dict[tuple[int, int], tuple[int, int]]:
    """``(z + zbar)^a ((z - zbar)/i)^b`` as ``{(deg z, deg zbar): (re, im)}``.

    The common factor ``2^{-(a+b)/2}`` is left out.
    """
    out: dict[tuple[int, int], list[int]] = {}
    unit = [(1, 0), (0, -1), (-1, 0), (0, 1)][b % 4]  # (-i)^b
    for r in range(a + 1):
        for s in range(b + 1):
            w = comb(a, r) * comb(b, s) * (-1) ** (b - s)
            key = (r + s, a + b - r - s)
            acc = out.setdefault(key, [0, 0])
            acc[0] += w * unit[0]
            acc[1] += w * unit[1]
    return {k: (v[0], v[1]) for k, v in out.items() if v != [0, 0]}


def complex_expansion(poly: PolynomialObservable) -> dict[tuple, tuple]:
    """Rewrite the quantum dependence in ``z_i, zbar_i`` variables.

    Keys are ``(classical exponents, z exponents, zbar exponents)``, values the
    (real, imaginary) coefficient parts. Each term of quantum degree ``d`` is
    missing the positive factor ``2^{-d/2}``; terms sharing a key share ``d``,
    so this never affects which coefficients cancel.
    """
    n, N = poly.n, poly.N
    out: dict[tuple, list] = {}
    for key, c in poly.terms.items():
        cl = key[: 2 * n]
        partial = [((), (), 1, 0)]
        for i in range(N):
            a, b = key[2 * n + 2 * i], key[2 * n + 2 * i + 1]
            nxt = []
            for (dz, dzb), (mr, mi) in _mode_expansion(a, b).items():
                for zs, zbs, re, im in partial:
                    nxt.append((zs + (dz,), zbs + (dzb,), re * mr - im * mi, re * mi + im * mr))
            partial = nxt
        for zs, zbs, re, im in partial:
            acc = out.setdefault((cl, zs, zbs), [0, 0])
            acc[0] += c * re
            acc[1] += c * im
    return {k: (re, im) for k, (re, im) in out.items()}


def classify(obs: PolynomialObservable, tol: float = CLASSIFY_TOL) -> ObservableClass:
    """Sector tags and QM / almost-classical / general-classical class.

    Phase invariance is decided exactly from monomial balance in
    ``(z, zbar)``. Floating-point coefficients at or below
    ``tol * max(1, max |coeff|)`` count as zero.
    """
    n = obs.n
    if obs.is_zero():
        return ObservableClass(
            ObservableKind.QM_QUADRATIC,
            frozenset({Sector.BELONGS_CL, Sector.BELONGS_QM}),
            (),
            0,
            True,
        )
    sectors = set()
    if not obs.depends_on_qm():
        sectors.add(Sector.BELONGS_CL)
    if not obs.depends_on_cl():
        sectors.add(Sector.BELONGS_QM)
    if not sectors:
        sectors.add(Sector.HYBRID)

    thresh = tol * max(1.0, _max_abs(obs))
    qm_degrees = set()
    cl_degree = 0
    for key, c in obs.terms.items():
        if isinstance(c, Rational) or abs(c) > thresh:
            qm_degrees.add(sum(key[2 * n :]))
            cl_degree = max(cl_degree, sum(key[: 2 * n]))

    balanced = True
    for (_, zs, zbs), (re, im) in complex_expansion(obs).items():
        if sum(zs) == sum(zbs):
            continue
        if isinstance(re, Rational) and isinstance(im, Rational):
            if re != 0 or im != 0:
                balanced = False
                break
        elif abs(complex(float(re), float(im))) > thresh:
            balanced = False
            break

    if not balanced:
        kind = ObservableKind.GENERAL_CLASSICAL
    elif qm_degrees == {2}:
        kind = ObservableKind.QM_QUADRATIC
    else:
        kind = ObservableKind.ALMOST_CLASSICAL
    return ObservableClass(kind, frozenset(sectors), tuple(sorted(qm_degrees)), cl_degree, balanced)


def is_phase_invariant(obs: PolynomialObservable, tol: float = CLASSIFY_TOL) -> bool:
    return classify(obs, tol).phase_invariant


def expectation_at(op: HermitianOperator, point: QuantumPhasePoint) -> float:
    return op.expectation(contract_state(point))
