"""Hamiltonian flow on hybrid phase space and a Schrodinger reference propagator.

The hybrid Hamiltonian is ``H(t) = h_cl + <h_qm> + g(t) * interaction`` with a
piecewise-constant coupling schedule ``g``. Its flow is integrated with
Gauss-Legendre collocation (implicit midpoint is the one-stage member) or with
an exact-subflow Strang splitting. The collocation methods are symplectic and
conserve every quadratic invariant, in particular the normalization constraint,
up to the fixed-point tolerance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from hybridphase.io import write_csv
from hybridphase.kernels import CompiledPolynomial
from hybridphase.observables import (
    HermitianOperator,
    classify,
    constraint_polynomial,
    operator_from_quadratic_form,
    quadratic_form_from_operator,
)
from hybridphase.phase import (
    HybridPhasePoint,
    StateVector,
    pack_amplitudes,
    unpack_amplitudes,
)
from hybridphase.polynomial import PolynomialObservable, variable_names


class ConvergenceError(RuntimeError):
    """Fixed-point stage iteration failed for one or more particles."""

    def __init__(self, message: str, *, time: float, indices: Sequence[int], residual: float):
        super().__init__(message)
        self.time = time
        self.indices = list(indices)
        self.residual = residual


@dataclass(frozen=True)
class PiecewiseConstant:
    """``g(t) = values[k]`` on ``[breaks[k], breaks[k+1])`` and ``outside`` elsewhere."""

    breaks: tuple[float, ...]
    values: tuple[float, ...]
    outside: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "breaks", tuple(float(b) for b in self.breaks))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.breaks) != len(self.values) + 1:
            raise ValueError("need exactly one more break than values")
        if any(b1 <= b0 for b0, b1 in zip(self.breaks, self.breaks[1:])):
            raise ValueError("breaks must be strictly increasing")

    @classmethod
    def pulse(cls, amplitude: float, start: float, stop: float) -> PiecewiseConstant:
        return cls((start, stop), (amplitude,))

    def __call__(self, t: float) -> float:
        if t < self.breaks[0] or t >= self.breaks[-1]:
            return self.outside
        k = int(np.searchsorted(self.breaks, t, side="right")) - 1
        return self.values[k]

    def integral(self, t0: float, t1: float) -> float:
        total = 0.0
        edges = [t0] + [b for b in self.breaks if t0 < b < t1] + [t1]
        for a, b in zip(edges, edges[1:]):
            total += self(0.5 * (a + b)) * (b - a)
        return total


class HybridHamiltonian:
    """``H = h_cl(x, p) + <psi|h_qm|psi> + g(t) * interaction(x, p; X, P)``."""

    def __init__(
        self,
        n: int,
        N: int,
        h_cl: PolynomialObservable | None = None,
        h_qm: HermitianOperator | None = None,
        interaction: PolynomialObservable | None = None,
        schedule: PiecewiseConstant | None = None,
    ):
        self.n, self.N = n, N
        self.h_cl = h_cl if h_cl is not None else PolynomialObservable.zero(n, N)
        self.h_qm = h_qm
        self.interaction = interaction if interaction is not None else PolynomialObservable.zero(n, N)
        self.schedule = schedule
        for name, poly in (("h_cl", self.h_cl), ("interaction", self.interaction)):
            if (poly.n, poly.N) != (n, N):
                raise ValueError(f"{name} has (n, N) = {(poly.n, poly.N)}, expected {(n, N)}")
        if self.h_cl.depends_on_qm():
            raise ValueError("h_cl must not depend on the quantum coordinates")
        if h_qm is not None and h_qm.dim != N:
            raise ValueError(f"h_qm has dimension {h_qm.dim}, expected N={N}")
        if not classify(self.interaction).almost_classical:
            raise ValueError("interaction must be phase invariant (almost-classical) in (X, P)")

    @property
    def dim(self) -> int:
        return 2 * (self.n + self.N)

    @cached_property
    def qm_form(self) -> PolynomialObservable:
        if self.h_qm is None:
            return PolynomialObservable.zero(self.n, self.N)
        return quadratic_form_from_operator(self.h_qm, self.n)

    @cached_property
    def static(self) -> PolynomialObservable:
        return self.h_cl + self.qm_form

    def coupling(self, t: float) -> float:
        return 1.0 if self.schedule is None else self.schedule(t)

    def total(self, t: float = 0.0) -> PolynomialObservable:
        if self.schedule is None:
            return self.static + self.interaction  # keeps exact coefficients exact
        return self.static + self.coupling(t) * self.interaction

    @property
    def time_dependent(self) -> bool:
        return self.schedule is not None

    @cached_property
    def compiled(self) -> CompiledPolynomial:
        return CompiledPolynomial.from_groups([self.static, self.interaction])

    @cached_property
    def constraint(self) -> CompiledPolynomial:
        return CompiledPolynomial.from_polynomial(constraint_polynomial(self.n, self.N))

    def scales(self, g: float) -> np.ndarray:
        return np.array([1.0, g])

    def energy(self, y, t: float = 0.0, g: float | None = None):
        return self.compiled.value(y, self.scales(self.coupling(t) if g is None else g))

    @cached_property
    def split_plan(self) -> _SplitPlan:
        return _SplitPlan(self)


class Scheme(enum.Enum):
    IMPLICIT_MIDPOINT = "IMPLICIT_MIDPOINT"
    GAUSS4 = "GAUSS4"
    GAUSS6 = "GAUSS6"
    LEAPFROG_SPLIT = "LEAPFROG_SPLIT"


_S3 = math.sqrt(3.0)
_S15 = math.sqrt(15.0)

TABLEAUX = {
    Scheme.IMPLICIT_MIDPOINT: (np.array([[0.5]]), np.array([1.0])),
    Scheme.GAUSS4: (
        np.array([[0.25, 0.25 - _S3 / 6], [0.25 + _S3 / 6, 0.25]]),
        np.array([0.5, 0.5]),
    ),
    Scheme.GAUSS6: (
        np.array(
            [
                [5 / 36, 2 / 9 - _S15 / 15, 5 / 36 - _S15 / 30],
                [5 / 36 + _S15 / 24, 2 / 9, 5 / 36 - _S15 / 24],
                [5 / 36 + _S15 / 30, 2 / 9 + _S15 / 15, 5 / 36],
            ]
        ),
        np.array([5 / 18, 4 / 9, 5 / 18]),
    ),
}


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    scheme: Scheme = Scheme.IMPLICIT_MIDPOINT
    fixed_point_tol: float = 1e-13
    max_fixed_point_iters: int = 50
    backend: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.fixed_point_tol > 0:
            raise ValueError("fixed_point_tol must be positive")
        if self.max_fixed_point_iters < 1:
            raise ValueError("max_fixed_point_iters must be at least 1")


# -- exact splitting ------------------------------------------------------


class _SplitPlan:
    """Decomposition of ``H`` into pieces with closed-form flows.

    Supported pieces: classical terms in ``x`` only (kicks) or ``p`` only
    (drifts), quantum quadratic forms (unitary rotations), and interaction
    terms ``c * v * <G>`` with ``v`` a single classical coordinate. Along the
    flow of ``v * <G>`` both ``v`` and ``<G>`` are constant, which makes it
    exactly solvable.
    """

    def __init__(self, H: HybridHamiltonian):
        self.n, self.N = H.n, H.N
        self.pieces: list[tuple] = []
        for group, poly in ((0, H.h_cl), (1, H.interaction)):
            self._add_polynomial(poly, group)
        if H.h_qm is not None:
            self._add_rotation(H.h_qm, None, 0)
        # kicks first, drifts last: Strang order kick/rotations/drift/.../kick
        order = {"kick": 0, "rot": 1, "drift": 2}
        self.pieces.sort(key=lambda p: order[p[0]])

    def _add_polynomial(self, poly: PolynomialObservable, group: int) -> None:
        if poly.is_zero():
            return
        n = self.n
        kick, drift = {}, {}
        for cl_key, qpart in poly.split_by_cl_monomial().items():
            if qpart.qm_degrees() == {0}:
                c = qpart.terms[(0,) * poly.dim]
                key = cl_key + (0,) * (2 * self.N)
                xs = any(cl_key[0::2])
                ps = any(cl_key[1::2])
                if xs and ps:
                    raise ValueError(
                        "LEAPFROG_SPLIT needs classical terms depending on x only or p only"
                    )
                (drift if ps else kick)[key] = c
                continue
            deg = sum(cl_key)
            op = operator_from_quadratic_form(qpart)
            if deg == 0:
                self._add_rotation(op, None, group)
            elif deg == 1:
                self._add_rotation(op, cl_key.index(1), group)
            else:
                raise ValueError(
                    "LEAPFROG_SPLIT needs interaction terms at most linear in the classical coordinates"
                )
        for kind, terms in (("kick", kick), ("drift", drift)):
            if terms:
                comp = CompiledPolynomial.from_polynomial(PolynomialObservable(terms, n, self.N))
                self.pieces.append((kind, group, comp))

    def _add_rotation(self, op: HermitianOperator, var: int | None, group: int) -> None:
        w, U = op.eigh
        self.pieces.append(("rot", group, (w, U, op.matrix, var)))

    def _apply(self, piece, Y: np.ndarray, tau: float, g: float) -> None:
        kind, group, data = piece
        s = 1.0 if group == 0 else g
        if s == 0.0:
            return
        ncl = 2 * self.n
        if kind in ("kick", "drift"):
            # field of a pure-x (pure-p) Hamiltonian only moves p (x)
            Y += (s * tau) * data.field(Y)
            return
        w, U, G, var = data
        z = unpack_amplitudes(Y[:, ncl:])
        q = np.einsum("bi,ij,bj->b", z.conj(), G, z).real
        if var is None:
            theta = np.full(Y.shape[0], s * tau)
        else:
            theta = s * tau * Y[:, var]
            # v * <G>: the conjugate of v moves by +-<G>, v itself is constant
            if var % 2:
                Y[:, var - 1] += s * tau * q
            else:
                Y[:, var + 1] -= s * tau * q
        W = (z @ U.conj()) * np.exp(-1j * np.outer(theta, w))
        Y[:, ncl:] = pack_amplitudes(W @ U.T)

    def step(self, Y: np.ndarray, h: float, g: float) -> np.ndarray:
        Y = np.array(Y, dtype=np.float64, copy=True)
        m = len(self.pieces)
        if m == 0:
            return Y
        for piece in self.pieces[:-1]:
            self._apply(piece, Y, 0.5 * h, g)
        self._apply(self.pieces[-1], Y, h, g)
        for piece in reversed(self.pieces[:-1]):
            self._apply(piece, Y, 0.5 * h, g)
        return Y


# -- stepping ------------------------------------------------------------


def advance(Y: np.ndarray, H: HybridHamiltonian, t: float, h: float, cfg: IntegratorConfig) -> np.ndarray:
    """One step of size ``h`` for a batch of flat points ``Y`` of shape ``(B, D)``."""
    g = H.coupling(t + 0.5 * h)
    if cfg.scheme is Scheme.LEAPFROG_SPLIT:
        return H.split_plan.step(Y, h, g)
    A, b = TABLEAUX[cfg.scheme]
    ynew, iters, resid = H.compiled.gauss_step(
        Y,
        h,
        A,
        b,
        H.scales(g),
        cfg.fixed_point_tol,
        cfg.max_fixed_point_iters,
        backend=cfg.backend,
    )
    bad = np.flatnonzero(iters < 0)
    if bad.size:
        raise ConvergenceError(
            f"fixed-point iteration did not converge at t={t!r} for {bad.size} point(s);"
            f" max residual {float(resid[bad].max())!r} > tol {cfg.fixed_point_tol!r}",
            time=t,
            indices=bad.tolist(),
            residual=float(resid[bad].max()),
        )
    return ynew


def flow_step(point: HybridPhasePoint, H: HybridHamiltonian, t: float, cfg: IntegratorConfig) -> HybridPhasePoint:
    """Advance one point by one step of ``cfg.dt``."""
    _check_point(point, H)
    y = advance(point.coords.reshape(1, -1), H, t, cfg.dt, cfg)
    return HybridPhasePoint.from_coords(y[0], H.n, H.N)


def _check_point(point: HybridPhasePoint, H: HybridHamiltonian) -> None:
    if (point.n, point.N) != (H.n, H.N):
        raise ValueError(f"point has (n, N) = {(point.n, point.N)}, Hamiltonian {(H.n, H.N)}")


def step_grid(t0: float, t1: float, dt: float) -> tuple[int, float]:
    """Number of equal steps covering ``[t0, t1]`` with size at most ``dt``."""
    if not t1 > t0:
        raise ValueError("t1 must be greater than t0")
    nsteps = max(1, math.ceil((t1 - t0) / dt - 1e-9))
    return nsteps, (t1 - t0) / nsteps


def check_schedule_alignment(H: HybridHamiltonian, t0: float, h: float, nsteps: int) -> None:
    if H.schedule is None:
        return
    for b in H.schedule.breaks:
        k = (b - t0) / h
        if 0 < k < nsteps and abs(k - round(k)) > 1e-9 * max(1.0, abs(k)):
            raise ValueError(f"schedule break at t={b!r} falls inside a step; align dt with the schedule")


@dataclass
class Trajectory:
    """Recorded states with per-sample energy and constraint values.

    Energies use the coupling that was active during the step leading to each
    sample, so a piecewise-constant pulse does not show up as spurious drift
    at its own switch-off time.
    """

    n: int
    N: int
    times: np.ndarray
    coords: np.ndarray
    energy: np.ndarray
    constraint: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if len(self.times) != len(self.coords):
            raise ValueError("one point per timestamp")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def points(self) -> list[HybridPhasePoint]:
        return [HybridPhasePoint.from_coords(c, self.n, self.N) for c in self.coords]

    def point(self, k: int) -> HybridPhasePoint:
        return HybridPhasePoint.from_coords(self.coords[k], self.n, self.N)

    @property
    def final(self) -> HybridPhasePoint:
        return self.point(-1)

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))

    @property
    def constraint_drift(self) -> float:
        return float(np.max(np.abs(self.constraint - self.constraint[0])))

    def column_names(self) -> list[str]:
        names = variable_names(self.n, self.N)
        grouped = names[0 : 2 * self.n : 2] + names[1 : 2 * self.n : 2]
        grouped += names[2 * self.n :: 2] + names[2 * self.n + 1 :: 2]
        return ["t"] + grouped + ["energy", "constraint"]

    def grouped_coords(self) -> np.ndarray:
        """Coordinates reordered as ``x..., p..., X..., P...``."""
        n2 = 2 * self.n
        c = self.coords
        return np.hstack([c[:, 0:n2:2], c[:, 1:n2:2], c[:, n2::2], c[:, n2 + 1 :: 2]])

    def to_csv(self, path: str | Path) -> Path:
        rows = np.column_stack([self.times, self.grouped_coords(), self.energy, self.constraint])
        return write_csv(path, self.column_names(), rows)


def propagate(
    point: HybridPhasePoint,
    H: HybridHamiltonian,
    t0: float,
    t1: float,
    cfg: IntegratorConfig,
    record_every: int = 1,
) -> Trajectory:
    """Integrate from ``t0`` to ``t1`` in equal steps no larger than ``cfg.dt``.

    Every ``record_every``-th state is stored, plus the final one.
    """
    _check_point(point, H)
    nsteps, h = step_grid(t0, t1, cfg.dt)
    check_schedule_alignment(H, t0, h, nsteps)
    y = point.coords.reshape(1, -1).copy()
    times, coords, gs = [t0], [y[0].copy()], [H.coupling(t0 + 0.5 * h)]
    for k in range(nsteps):
        t = t0 + k * h
        y = advance(y, H, t, h, cfg)
        if (k + 1) % record_every == 0 or k + 1 == nsteps:
            times.append(t0 + (k + 1) * h if k + 1 < nsteps else t1)
            coords.append(y[0].copy())
            gs.append(H.coupling(t + 0.5 * h))
    coords = np.array(coords)
    energy = np.array(
        [H.compiled.value(c, H.scales(g), backend=cfg.backend) for c, g in zip(coords, gs)]
    )
    constraint = H.constraint.value(coords, backend=cfg.backend) if H.N else np.zeros(len(coords))
    return Trajectory(
        H.n,
        H.N,
        np.array(times),
        coords,
        np.asarray(energy),
        np.asarray(constraint),
        {"scheme": cfg.scheme.value, "steps": nsteps, "h": h},
    )


def schrodinger_oracle(psi: StateVector, Hq: HermitianOperator, t: float) -> StateVector:
    """``exp(-i Hq t) psi`` by eigendecomposition, independent of the integrators."""
    if not isinstance(psi, StateVector):
        psi = StateVector(psi)
    if psi.N != Hq.dim:
        raise ValueError("dimension mismatch")
    w, V = np.linalg.eigh(Hq.matrix)
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("eigendecomposition failed")
    coeffs = V.conj().T @ np.asarray(psi.amplitudes)
    return StateVector(V @ (np.exp(-1j * w * t) * coeffs))


def ehrenfest_means(traj: Trajectory, ops: Sequence[HermitianOperator]) -> np.ndarray:
    """Expectation values ``<op>`` along a trajectory, shape ``(len(traj), len(ops))``."""
    out = np.empty((len(traj), len(ops)))
    for j, op in enumerate(ops):
        if op.dim != traj.N:
            raise ValueError(f"operator {j} has dimension {op.dim}, expected N={traj.N}")
        form = quadratic_form_from_operator(op, traj.n)
        out[:, j] = form.compiled.value(traj.coords)
    return out
