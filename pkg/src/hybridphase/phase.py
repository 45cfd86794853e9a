"""Canonical coordinates for quantum, classical and hybrid states.

Units with hbar = 1. A state vector with amplitudes ``c_i`` maps to real
canonical pairs through ``X_i + i P_i = sqrt(2) c_i``. Coordinates are stored
interleaved, ``(X_1, P_1, ..., X_N, P_N)``; classical points use the same
``(x_1, p_1, ..., x_n, p_n)`` layout and a hybrid point concatenates the
classical block followed by the quantum block. Every polynomial observable
and every integrator in the package relies on this one layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SQRT2 = np.sqrt(2.0)


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", _frozen(self.amplitudes, np.complex128))
        if not np.all(np.isfinite(self.amplitudes)):
            raise ValueError("amplitudes must be finite")

    @property
    def N(self) -> int:
        return self.amplitudes.shape[0]

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> StateVector:
        nrm = np.sqrt(self.norm_squared())
        if nrm == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.amplitudes / nrm)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.amplitudes, dtype=dtype)


@dataclass(frozen=True, eq=False)
class QuantumPhasePoint:
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen(self.coords, np.float64))
        if self.coords.shape[0] % 2:
            raise ValueError("quantum coordinates come in (X, P) pairs")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coordinates must be finite")

    @property
    def N(self) -> int:
        return self.coords.shape[0] // 2

    @property
    def X(self) -> np.ndarray:
        return self.coords[0::2]

    @property
    def P(self) -> np.ndarray:
        return self.coords[1::2]


@dataclass(frozen=True, eq=False)
class ClassicalPhasePoint:
    coords: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coords", _frozen(self.coords, np.float64))
        if self.coords.shape[0] % 2:
            raise ValueError("classical coordinates come in (x, p) pairs")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("coordinates must be finite")

    @property
    def n(self) -> int:
        return self.coords.shape[0] // 2

    @property
    def x(self) -> np.ndarray:
        return self.coords[0::2]

    @property
    def p(self) -> np.ndarray:
        return self.coords[1::2]


@dataclass(frozen=True, eq=False)
class HybridPhasePoint:
    cl: ClassicalPhasePoint
    qm: QuantumPhasePoint

    @property
    def n(self) -> int:
        return self.cl.n

    @property
    def N(self) -> int:
        return self.qm.N

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([self.cl.coords, self.qm.coords])

    @classmethod
    def from_coords(cls, coords, n: int, N: int) -> HybridPhasePoint:
        arr = np.asarray(coords, dtype=np.float64).reshape(-1)
        if arr.shape[0] != 2 * (n + N):
            raise ValueError(f"expected {2 * (n + N)} coordinates, got {arr.shape[0]}")
        return cls(ClassicalPhasePoint(arr[: 2 * n]), QuantumPhasePoint(arr[2 * n :]))


def expand_state(psi: StateVector) -> QuantumPhasePoint:
    """Oscillator coordinates of a state vector: ``X + iP = sqrt(2) * amplitude``."""
    if not isinstance(psi, StateVector):
        psi = StateVector(psi)
    if psi.N == 0:
        raise ValueError("state vector must have at least one amplitude")
    z = SQRT2 * psi.amplitudes
    coords = np.empty(2 * psi.N)
    coords[0::2] = z.real
    coords[1::2] = z.imag
    return QuantumPhasePoint(coords)


def contract_state(point: QuantumPhasePoint) -> StateVector:
    """Inverse of :func:`expand_state`."""
    return StateVector((point.X + 1j * point.P) / SQRT2)


def norm_constraint(point: QuantumPhasePoint) -> float:
    """``C = (1/2) sum_i (X_i^2 + P_i^2)``; equals 1 on normalized states."""
    return 0.5 * float(np.dot(point.coords, point.coords))


def phase_rotate(point: QuantumPhasePoint, theta: float) -> QuantumPhasePoint:
    """Rotate every ``(X_i, P_i)`` pair counter-clockwise by ``theta``.

    Convention: the contracted state is multiplied by ``exp(+i theta)``.
    """
    c, s = np.cos(theta), np.sin(theta)
    X, P = point.X, point.P
    out = np.empty_like(point.coords)
    out[0::2] = c * X - s * P
    out[1::2] = s * X + c * P
    return QuantumPhasePoint(out)


def ray_distance(a, b) -> float:
    """``min_theta || a - exp(i theta) b ||`` for state vectors or quantum points.

    The optimal phase is ``arg <b|a>``, so the minimum is computed directly
    rather than by search.
    """
    va = _amplitudes(a)
    vb = _amplitudes(b)
    if va.shape != vb.shape:
        raise ValueError("dimension mismatch")
    overlap = np.vdot(vb, va)
    phase = overlap / abs(overlap) if abs(overlap) > 0 else 1.0
    return float(np.linalg.norm(va - phase * vb))


def same_ray(a, b, tol: float = 1e-12) -> bool:
    return ray_distance(a, b) <= tol


def _amplitudes(v) -> np.ndarray:
    if isinstance(v, QuantumPhasePoint):
        return np.asarray(contract_state(v).amplitudes)
    if isinstance(v, StateVector):
        return np.asarray(v.amplitudes)
    return np.asarray(v, dtype=np.complex128).reshape(-1)


def pack_amplitudes(z: np.ndarray) -> np.ndarray:
    """Batched ``expand_state``: complex array ``(..., N)`` to coords ``(..., 2N)``."""
    z = np.asarray(z, dtype=np.complex128)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = SQRT2 * z.real
    out[..., 1::2] = SQRT2 * z.imag
    return out


def unpack_amplitudes(coords: np.ndarray) -> np.ndarray:
    """Batched ``contract_state``: coords ``(..., 2N)`` to amplitudes ``(..., N)``."""
    coords = np.asarray(coords, dtype=np.float64)
    return (coords[..., 0::2] + 1j * coords[..., 1::2]) / SQRT2
