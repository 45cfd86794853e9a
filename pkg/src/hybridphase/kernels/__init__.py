"""Compiled polynomial evaluators and the collocation-step kernel.

The compiled extension ``_core`` is used when it was built; otherwise the
numpy implementation in ``_fallback`` is selected at import. Setting the
environment variable ``HYBRIDPHASE_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from hybridphase.kernels import _fallback

try:
    if os.environ.get("HYBRIDPHASE_BACKEND", "").lower() in ("python", "numpy", "fallback"):
        raise ImportError("compiled backend disabled by HYBRIDPHASE_BACKEND")
    from hybridphase.kernels import _core as _backend

    BACKEND = "cython"
except ImportError:
    _backend = _fallback
    BACKEND = "python"

BACKENDS = {"python": _fallback}
if BACKEND == "cython":
    BACKENDS["cython"] = _backend


def get_backend(name: str | None = None):
    if name is None:
        return _backend
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available (have {sorted(BACKENDS)})") from None


@dataclass(frozen=True)
class SparseTerms:
    """CSR layout of a list of monomials.

    Monomial ``m`` has coefficient ``coef[m]`` times ``scales[group[m]]``, is
    accumulated into output slot ``target[m]``, and its factors are
    ``y[var[f]] ** exp[f]`` for ``f`` in ``ptr[m]:ptr[m+1]``.
    """

    coef: np.ndarray
    target: np.ndarray
    group: np.ndarray
    ptr: np.ndarray
    var: np.ndarray
    exp: np.ndarray

    @classmethod
    def build(cls, rows: Iterable[tuple[float, int, int, dict[int, int]]]) -> SparseTerms:
        coef, target, group, ptr, var, exp = [], [], [], [0], [], []
        for c, t, g, factors in rows:
            coef.append(float(c))
            target.append(t)
            group.append(g)
            for v, e in sorted(factors.items()):
                var.append(v)
                exp.append(e)
            ptr.append(len(var))
        ip = np.intp
        return cls(
            np.asarray(coef, dtype=np.float64),
            np.asarray(target, dtype=ip),
            np.asarray(group, dtype=ip),
            np.asarray(ptr, dtype=ip),
            np.asarray(var, dtype=ip),
            np.asarray(exp, dtype=ip),
        )

    @property
    def arrays(self) -> tuple:
        return (self.coef, self.target, self.group, self.ptr, self.var, self.exp)

    @property
    def ngroups(self) -> int:
        return int(self.group.max()) + 1 if self.group.size else 1


def _as_batch(y, dim: int) -> tuple[np.ndarray, bool]:
    arr = np.ascontiguousarray(y, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr.reshape(1, -1)
    if arr.shape[1] != dim:
        raise ValueError(f"points have {arr.shape[1]} coordinates, expected {dim}")
    return arr, single


def _scales(scales, ngroups: int) -> np.ndarray:
    if scales is None:
        return np.ones(max(ngroups, 1))
    out = np.ascontiguousarray(scales, dtype=np.float64)
    if out.shape[0] < ngroups:
        raise ValueError("not enough group scales")
    return out


class CompiledPolynomial:
    """Fast float evaluator for one or more scaled polynomial groups.

    ``value(y, scales)`` computes ``sum_g scales[g] * poly_g(y)`` and
    ``field(y, scales)`` the Hamiltonian vector field of that sum with the
    interleaved ``(q, p)`` layout: ``dq = dH/dp``, ``dp = -dH/dq``.
    """

    def __init__(self, polys: list, dim: int):
        self.dim = dim
        value_rows = []
        field_rows = []
        for g, poly in enumerate(polys):
            for key, c in poly.terms.items():
                factors = {v: e for v, e in enumerate(key) if e}
                value_rows.append((c, 0, g, factors))
                for v, e in factors.items():
                    dfac = dict(factors)
                    if e == 1:
                        del dfac[v]
                    else:
                        dfac[v] = e - 1
                    # derivative wrt a momentum feeds the paired position and vice versa
                    if v % 2:
                        field_rows.append((float(c) * e, v - 1, g, dfac))
                    else:
                        field_rows.append((-float(c) * e, v + 1, g, dfac))
        self.ngroups = max(len(polys), 1)
        self.values = SparseTerms.build(value_rows)
        self.fields = SparseTerms.build(field_rows)

    @classmethod
    def from_polynomial(cls, poly) -> CompiledPolynomial:
        return cls([poly], poly.dim)

    @classmethod
    def from_groups(cls, polys: list) -> CompiledPolynomial:
        dims = {p.dim for p in polys}
        if len(dims) != 1:
            raise ValueError("all groups must share the phase-space dimension")
        return cls(list(polys), dims.pop())

    def value(self, y, scales=None, backend: str | None = None):
        arr, single = _as_batch(y, self.dim)
        out = get_backend(backend).evaluate(arr, *self.values.arrays, _scales(scales, self.ngroups))
        return float(out[0]) if single else out

    def field(self, y, scales=None, backend: str | None = None):
        arr, single = _as_batch(y, self.dim)
        out = get_backend(backend).vector_field(arr, *self.fields.arrays, _scales(scales, self.ngroups))
        return out[0] if single else out

    def gauss_step(self, y, dt, A, b, scales=None, tol=1e-13, maxit=50, backend: str | None = None):
        """Batched collocation step; see ``_core.gauss_step``."""
        arr, _ = _as_batch(y, self.dim)
        return get_backend(backend).gauss_step(
            arr,
            float(dt),
            np.ascontiguousarray(A, dtype=np.float64),
            np.ascontiguousarray(b, dtype=np.float64),
            *self.fields.arrays,
            _scales(scales, self.ngroups),
            float(tol),
            int(maxit),
        )
