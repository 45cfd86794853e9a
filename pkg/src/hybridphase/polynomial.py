"""Exact multivariate polynomials over hybrid phase space.

Variables are ordered as ``x1, p1, ..., xn, pn, X1, P1, ..., XN, PN``, the same
interleaved layout used for phase-space points. Coefficients are kept exact
(``int``/``Fraction``) as long as the inputs are exact; any ``float`` input
propagates through Python's numeric tower and turns the affected coefficients
into floats.
"""

from __future__ import annotations

import re
from fractions import Fraction
from functools import cached_property
from numbers import Rational, Real
from typing import Iterable, Iterator, Mapping

import numpy as np

Exponents = tuple[int, ...]

_VAR_RE = re.compile(r"^([xpXP])([1-9][0-9]*)$")


def variable_names(n: int, N: int) -> list[str]:
    """Names of the 2(n+N) coordinates in layout order."""
    names = []
    for k in range(1, n + 1):
        names += [f"x{k}", f"p{k}"]
    for i in range(1, N + 1):
        names += [f"X{i}", f"P{i}"]
    return names


def variable_index(name: str, n: int, N: int) -> int:
    """Layout index of a coordinate name such as ``"p2"`` or ``"X1"``."""
    m = _VAR_RE.match(name)
    if m is None:
        raise KeyError(f"unknown variable {name!r}")
    letter, k = m.group(1), int(m.group(2))
    if letter in "xp":
        if k > n:
            raise KeyError(f"variable {name!r} outside classical dimension n={n}")
        return 2 * (k - 1) + (letter == "p")
    if k > N:
        raise KeyError(f"variable {name!r} outside quantum dimension N={N}")
    return 2 * n + 2 * (k - 1) + (letter == "P")


def _normalize(c):
    if isinstance(c, Fraction) and c.denominator == 1:
        return int(c.numerator)
    if isinstance(c, (bool, np.bool_)):
        raise TypeError("boolean coefficient")
    if isinstance(c, np.integer):
        return int(c)
    if isinstance(c, np.floating):
        return float(c)
    return c


class PolynomialObservable:
    """Real polynomial in the hybrid coordinates, stored as ``{exponents: coeff}``.

    Instances are immutable. Terms with an exactly zero coefficient are never
    stored, so two polynomials are equal iff their term maps are equal.
    """

    def __init__(self, terms: Mapping[Exponents, object] | None, n: int, N: int):
        if n < 0 or N < 0:
            raise ValueError("sector dimensions must be non-negative")
        self.n = int(n)
        self.N = int(N)
        dim = 2 * (self.n + self.N)
        clean: dict[Exponents, object] = {}
        for key, c in (terms or {}).items():
            key = tuple(int(e) for e in key)
            if len(key) != dim:
                raise ValueError(f"exponent vector {key} has length {len(key)}, expected {dim}")
            if any(e < 0 for e in key):
                raise ValueError(f"negative exponent in {key}")
            c = _normalize(c)
            if not isinstance(c, Real):
                raise TypeError(f"coefficient {c!r} is not real")
            if c != 0:
                clean[key] = clean.get(key, 0) + c
                if clean[key] == 0:
                    del clean[key]
        self._terms = clean

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, n: int, N: int) -> PolynomialObservable:
        return cls({}, n, N)

    @classmethod
    def constant(cls, c, n: int, N: int) -> PolynomialObservable:
        return cls({(0,) * (2 * (n + N)): c}, n, N)

    @classmethod
    def variable(cls, which: int | str, n: int, N: int) -> PolynomialObservable:
        """Coordinate function, addressed by layout index or by name."""
        idx = variable_index(which, n, N) if isinstance(which, str) else int(which)
        key = [0] * (2 * (n + N))
        key[idx] = 1
        return cls({tuple(key): 1}, n, N)

    @classmethod
    def _raw(cls, terms: dict, n: int, N: int) -> PolynomialObservable:
        # trusted path: terms already canonical
        obj = cls.__new__(cls)
        obj.n, obj.N, obj._terms = n, N, terms
        return obj

    # -- basic accessors ---------------------------------------------

    @property
    def terms(self) -> Mapping[Exponents, object]:
        return dict(self._terms)

    @property
    def dim(self) -> int:
        return 2 * (self.n + self.N)

    def __iter__(self) -> Iterator[tuple[Exponents, object]]:
        return iter(sorted(self._terms.items()))

    def __len__(self) -> int:
        return len(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def degree(self) -> int:
        return max((sum(k) for k in self._terms), default=0)

    def cl_degrees(self) -> set[int]:
        return {sum(k[: 2 * self.n]) for k in self._terms}

    def qm_degrees(self) -> set[int]:
        return {sum(k[2 * self.n :]) for k in self._terms}

    @cached_property
    def is_exact(self) -> bool:
        return all(isinstance(c, Rational) for c in self._terms.values())

    def depends_on_cl(self) -> bool:
        return any(any(k[: 2 * self.n]) for k in self._terms)

    def depends_on_qm(self) -> bool:
        return any(any(k[2 * self.n :]) for k in self._terms)

    def _check(self, other: PolynomialObservable) -> None:
        if (self.n, self.N) != (other.n, other.N):
            raise ValueError(
                f"dimension mismatch: (n, N) = {(self.n, self.N)} vs {(other.n, other.N)}"
            )

    def _coerce(self, other) -> PolynomialObservable:
        if isinstance(other, PolynomialObservable):
            self._check(other)
            return other
        if isinstance(other, (Real, np.number)):
            return PolynomialObservable.constant(other, self.n, self.N)
        return NotImplemented

    # -- ring operations ---------------------------------------------

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for k, c in other._terms.items():
            v = out.get(k, 0) + c
            if v == 0:
                out.pop(k, None)
            else:
                out[k] = _normalize(v)
        return PolynomialObservable._raw(out, self.n, self.N)

    __radd__ = __add__

    def __neg__(self):
        return PolynomialObservable._raw({k: -c for k, c in self._terms.items()}, self.n, self.N)

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (Real, np.number)) and not isinstance(other, PolynomialObservable):
            other = _normalize(other)
            if other == 0:
                return PolynomialObservable.zero(self.n, self.N)
            return PolynomialObservable._raw(
                {k: _normalize(c * other) for k, c in self._terms.items()}, self.n, self.N
            )
        if not isinstance(other, PolynomialObservable):
            return NotImplemented
        self._check(other)
        out: dict[Exponents, object] = {}
        for ka, ca in self._terms.items():
            for kb, cb in other._terms.items():
                k = tuple(a + b for a, b in zip(ka, kb))
                out[k] = out.get(k, 0) + ca * cb
        return PolynomialObservable(out, self.n, self.N)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, PolynomialObservable):
            if other.degree() != 0 or other.is_zero():
                raise ZeroDivisionError("division only by non-zero constants")
            other = other._terms[(0,) * other.dim]
        if isinstance(other, int):
            other = Fraction(other)
        return self * (1 / other)

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("only non-negative integer powers")
        result = PolynomialObservable.constant(1, self.n, self.N)
        base = self
        k = int(k)
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    def __eq__(self, other) -> bool:
        if isinstance(other, (Real, np.number)) and not isinstance(other, PolynomialObservable):
            other = PolynomialObservable.constant(other, self.n, self.N)
        if not isinstance(other, PolynomialObservable):
            return NotImplemented
        return (self.n, self.N) == (other.n, other.N) and self._terms == other._terms

    def __hash__(self) -> int:
        return hash((self.n, self.N, frozenset(self._terms.items())))

    # -- calculus ----------------------------------------------------

    def diff(self, var: int | str) -> PolynomialObservable:
        """Exact partial derivative with respect to one coordinate."""
        v = variable_index(var, self.n, self.N) if isinstance(var, str) else int(var)
        out = {}
        for k, c in self._terms.items():
            e = k[v]
            if e:
                nk = k[:v] + (e - 1,) + k[v + 1 :]
                out[nk] = _normalize(c * e)
        return PolynomialObservable._raw(out, self.n, self.N)

    def gradient(self) -> list[PolynomialObservable]:
        return [self.diff(v) for v in range(self.dim)]

    # -- sector manipulation -----------------------------------------

    def embed(self, n: int, N: int) -> PolynomialObservable:
        """Same polynomial in a larger phase space (extra coordinates unused)."""
        if n < self.n or N < self.N:
            raise ValueError("can only embed into a larger phase space")
        out = {}
        for k, c in self._terms.items():
            cl, qm = k[: 2 * self.n], k[2 * self.n :]
            out[cl + (0,) * (2 * (n - self.n)) + qm + (0,) * (2 * (N - self.N))] = c
        return PolynomialObservable._raw(out, n, N)

    def split_by_cl_monomial(self) -> dict[Exponents, PolynomialObservable]:
        """Group terms as ``sum_m m(x, p) * Q_m(X, P)`` keyed by the classical exponents."""
        groups: dict[Exponents, dict] = {}
        ncl = 2 * self.n
        for k, c in self._terms.items():
            cl = k[:ncl]
            groups.setdefault(cl, {})[(0,) * ncl + k[ncl:]] = c
        return {cl: PolynomialObservable._raw(t, self.n, self.N) for cl, t in groups.items()}

    def homogeneous_qm_part(self, degree: int) -> PolynomialObservable:
        ncl = 2 * self.n
        return PolynomialObservable._raw(
            {k: c for k, c in self._terms.items() if sum(k[ncl:]) == degree}, self.n, self.N
        )

    def chop(self, tol: float = 1e-12) -> PolynomialObservable:
        """Drop floating-point coefficients with magnitude at or below ``tol``."""
        return PolynomialObservable._raw(
            {k: c for k, c in self._terms.items() if isinstance(c, Rational) or abs(c) > tol},
            self.n,
            self.N,
        )

    def to_float(self) -> PolynomialObservable:
        return PolynomialObservable._raw(
            {k: float(c) for k, c in self._terms.items()}, self.n, self.N
        )

    # -- evaluation --------------------------------------------------

    def __call__(self, point) -> float:
        """Evaluate at one flat phase-space point (length ``2(n+N)``)."""
        y = np.asarray(point, dtype=float).reshape(-1)
        if y.shape[0] != self.dim:
            raise ValueError(f"point has {y.shape[0]} coordinates, expected {self.dim}")
        total = 0.0
        for k, c in self._terms.items():
            v = float(c)
            for idx, e in enumerate(k):
                if e:
                    v *= y[idx] ** e
            total += v
        return float(total)

    @cached_property
    def compiled(self):
        from hybridphase.kernels import CompiledPolynomial

        return CompiledPolynomial.from_polynomial(self)

    # -- printing ----------------------------------------------------

    def _monomial_str(self, key: Exponents) -> str:
        names = variable_names(self.n, self.N)
        parts = []
        for name, e in zip(names, key):
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}^{e}")
        return "*".join(parts)

    def __str__(self) -> str:
        if not self._terms:
            return "0"
        out = []
        for key, c in sorted(self._terms.items(), key=lambda kv: (-sum(kv[0]), tuple(-e for e in kv[0]))):
            neg = c < 0
            mag = -c if neg else c
            mono = self._monomial_str(key)
            if isinstance(mag, float):
                cs = repr(mag)
            else:
                mag = Fraction(mag)
                cs = str(mag.numerator) if mag.denominator == 1 else f"{mag.numerator}/{mag.denominator}"
            if mono and cs == "1":
                body = mono
            elif mono:
                body = f"{cs}*{mono}"
            else:
                body = cs
            if not out:
                out.append(f"-{body}" if neg else body)
            else:
                out.append(f" - {body}" if neg else f" + {body}")
        return "".join(out)

    def __repr__(self) -> str:
        return f"PolynomialObservable({str(self)!r}, n={self.n}, N={self.N})"


def sum_polynomials(items: Iterable[PolynomialObservable], n: int, N: int) -> PolynomialObservable:
    out: dict[Exponents, object] = {}
    for p in items:
        if (p.n, p.N) != (n, N):
            raise ValueError("dimension mismatch in sum")
        for k, c in p._terms.items():
            out[k] = out.get(k, 0) + c
    return PolynomialObservable(out, n, N)
