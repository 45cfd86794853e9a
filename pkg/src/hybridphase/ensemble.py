"""Hybrid ensembles as weighted particles transported along Hamiltonian characteristics."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from hybridphase.dynamics import (
    ConvergenceError,
    HybridHamiltonian,
    IntegratorConfig,
    advance,
    check_schedule_alignment,
    step_grid,
)
from hybridphase.io import write_csv, write_json
from hybridphase.phase import HybridPhasePoint, StateVector, pack_amplitudes
from hybridphase.polynomial import PolynomialObservable, variable_index, variable_names

# documented default for every seeded run
DEFAULT_SEED = 271828

ORTHO_TOL = 1e-12


class DensityOperator:
    """``rho = sum_j w_j |j><j|`` given by weights and orthonormal eigenstates."""

    def __init__(self, weights, eigenstates):
        w = np.asarray(weights, dtype=float).reshape(-1)
        V = np.array(
            [np.asarray(s.amplitudes if isinstance(s, StateVector) else s, dtype=complex) for s in eigenstates]
        )
        if V.ndim != 2 or V.shape[0] != w.shape[0]:
            raise ValueError("need one eigenstate per weight")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {w.sum()!r}, not 1")
        gram = V.conj() @ V.T
        if np.abs(gram - np.eye(len(w))).max(initial=0.0) > ORTHO_TOL:
            raise ValueError("eigenstates are not orthonormal")
        self.weights = w
        self.states = V  # rows

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return (self.states.T * self.weights) @ self.states.conj()

    @classmethod
    def diagonal(cls, weights) -> DensityOperator:
        """Mixture of computational basis states."""
        w = np.asarray(weights, dtype=float)
        return cls(w, np.eye(len(w)))

    @classmethod
    def pure(cls, psi) -> DensityOperator:
        v = np.asarray(psi.amplitudes if isinstance(psi, StateVector) else psi, dtype=complex)
        return cls([1.0], [v / np.linalg.norm(v)])

    @classmethod
    def from_matrix(cls, rho, cutoff: float = 0.0) -> DensityOperator:
        rho = np.asarray(rho, dtype=complex)
        if np.abs(rho - rho.conj().T).max() > 1e-12:
            raise ValueError("density matrix is not Hermitian")
        w, V = np.linalg.eigh(rho)
        if w.min() < -1e-12:
            raise ValueError("density matrix is not positive semi-definite")
        keep = w > cutoff
        w = np.clip(w[keep], 0.0, None)
        return cls(w / w.sum(), V[:, keep].T)


@dataclass(frozen=True)
class ClassicalDistribution:
    """Initial classical density: ``gaussian``, ``delta`` or ``uniform`` over ``(x, p)``.

    Parameters are given in the interleaved ``(x_1, p_1, ...)`` layout.
    """

    kind: str
    mean: np.ndarray | None = None
    cov: np.ndarray | None = None
    low: np.ndarray | None = None
    high: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "gaussian":
            mean = np.asarray(self.mean, dtype=float).reshape(-1)
            cov = np.asarray(self.cov, dtype=float).reshape(mean.size, mean.size)
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-14):
                raise ValueError("covariance must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("covariance must be positive definite") from None
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "cov", cov)
        elif self.kind == "delta":
            object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        elif self.kind == "uniform":
            low = np.asarray(self.low, dtype=float).reshape(-1)
            high = np.asarray(self.high, dtype=float).reshape(-1)
            if low.shape != high.shape or np.any(high <= low):
                raise ValueError("uniform box needs low < high componentwise")
            object.__setattr__(self, "low", low)
            object.__setattr__(self, "high", high)
        else:
            raise ValueError(f"unknown distribution kind {self.kind!r}")

    @classmethod
    def gaussian(cls, mean, cov) -> ClassicalDistribution:
        return cls("gaussian", mean=mean, cov=cov)

    @classmethod
    def delta(cls, point) -> ClassicalDistribution:
        return cls("delta", mean=point)

    @classmethod
    def uniform(cls, low, high) -> ClassicalDistribution:
        return cls("uniform", low=low, high=high)

    @property
    def dim(self) -> int:
        return (self.low if self.kind == "uniform" else self.mean).shape[0]

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        d = self.dim
        if self.kind == "gaussian":
            L = np.linalg.cholesky(self.cov)
            return self.mean + rng.standard_normal((count, d)) @ L.T
        if self.kind == "delta":
            return np.tile(self.mean, (count, 1))
        return self.low + (self.high - self.low) * rng.random((count, d))


@dataclass
class HybridEnsemble:
    """Particles ``coords[k]`` (flat hybrid layout) with weights summing to one."""

    n: int
    N: int
    coords: np.ndarray
    weights: np.ndarray
    labels: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.coords.shape[0]

    def particle(self, k: int) -> tuple[HybridPhasePoint, float]:
        return HybridPhasePoint.from_coords(self.coords[k], self.n, self.N), float(self.weights[k])

    @property
    def particles(self) -> list[tuple[HybridPhasePoint, float]]:
        return [self.particle(k) for k in range(len(self))]

    def constraint_values(self) -> np.ndarray:
        q = self.coords[:, 2 * self.n :]
        return 0.5 * np.einsum("bi,bi->b", q, q)

    def with_coords(self, coords: np.ndarray, **meta) -> HybridEnsemble:
        return HybridEnsemble(self.n, self.N, coords, self.weights, self.labels, {**self.meta, **meta})

    def subset(self, index) -> HybridEnsemble:
        """Particles ``index`` with renormalized weights."""
        w = self.weights[index]
        return HybridEnsemble(
            self.n, self.N, self.coords[index].copy(), w / w.sum(), self.labels[index], dict(self.meta)
        )

    def column_names(self) -> list[str]:
        names = variable_names(self.n, self.N)
        n2 = 2 * self.n
        return names[0:n2:2] + names[1:n2:2] + names[n2::2] + names[n2 + 1 :: 2]

    def grouped_coords(self) -> np.ndarray:
        n2 = 2 * self.n
        c = self.coords
        return np.hstack([c[:, 0:n2:2], c[:, 1:n2:2], c[:, n2::2], c[:, n2 + 1 :: 2]])

    def to_csv(self, path: str | Path) -> Path:
        """One row per particle: weight, then ``x..., p..., X..., P...``."""
        rows = np.column_stack([self.weights, self.grouped_coords()])
        return write_csv(path, ["weight"] + self.column_names(), rows)


def sample_factorized(
    cl_dist: ClassicalDistribution,
    rho_qm: DensityOperator,
    count: int,
    seed: int,
    phase_seed: int | None = None,
) -> HybridEnsemble:
    """Draw ``count`` particles from ``rho_cl(x, p) * rho_qm``.

    The classical draw, the eigenstate selection and the random global phase
    use three independent streams spawned from ``seed``. Within each stream
    particle ``k`` consumes the ``k``-th draw, so a particle's values depend
    only on ``(seed, k)``. ``phase_seed`` re-randomizes the global phases alone.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if cl_dist.dim % 2:
        raise ValueError("classical distribution must cover (x, p) pairs")
    n, N = cl_dist.dim // 2, rho_qm.dim
    cl_ss, branch_ss, phase_ss = np.random.SeedSequence(seed).spawn(3)
    if phase_seed is not None:
        phase_ss = np.random.SeedSequence([phase_seed, 0x9E3779B9])
    cl = cl_dist.sample(np.random.default_rng(cl_ss), count)
    u = np.random.default_rng(branch_ss).random(count)
    cdf = np.cumsum(rho_qm.weights)
    labels = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1)
    theta = 2 * np.pi * np.random.default_rng(phase_ss).random(count)
    z = np.exp(1j * theta)[:, None] * rho_qm.states[labels]
    coords = np.hstack([cl, pack_amplitudes(z)])
    weights = np.full(count, 1.0 / count)
    meta = {"seed": int(seed), "phase_seed": phase_seed, "count": int(count), "n": n, "N": N}
    return HybridEnsemble(n, N, coords, weights, labels.astype(np.intp), meta)


def liouville_propagate(
    ens: HybridEnsemble,
    H: HybridHamiltonian,
    t0: float,
    t1: float,
    cfg: IntegratorConfig,
    chunk_size: int | None = None,
) -> HybridEnsemble:
    """Advect every particle along the flow of ``H``; weights are untouched.

    Particles are independent, so results do not depend on ``chunk_size``.
    """
    if (ens.n, ens.N) != (H.n, H.N):
        raise ValueError(f"ensemble has (n, N) = {(ens.n, ens.N)}, Hamiltonian {(H.n, H.N)}")
    nsteps, h = step_grid(t0, t1, cfg.dt)
    check_schedule_alignment(H, t0, h, nsteps)
    out = np.empty_like(ens.coords)
    B = len(ens)
    size = B if chunk_size is None else max(1, int(chunk_size))
    for start in range(0, B, size):
        Y = ens.coords[start : start + size].copy()
        for k in range(nsteps):
            try:
                Y = advance(Y, H, t0 + k * h, h, cfg)
            except ConvergenceError as exc:
                exc.indices = [start + i for i in exc.indices]
                raise
        out[start : start + size] = Y
    return ens.with_coords(out, t=t1)


@dataclass(frozen=True)
class Marginal:
    axis: str
    edges: np.ndarray
    masses: np.ndarray
    below: float
    above: float

    @property
    def out_of_range(self) -> float:
        return self.below + self.above

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    def to_csv(self, path: str | Path) -> Path:
        rows = np.column_stack([self.edges[:-1], self.edges[1:], self.masses])
        return write_csv(path, ["bin_left", "bin_right", "mass"], rows)


def _axis_index(ens: HybridEnsemble, axis) -> tuple[int, str]:
    if isinstance(axis, str):
        return variable_index(axis, ens.n, ens.N), axis
    idx = int(axis)
    return idx, variable_names(ens.n, ens.N)[idx]


def marginal(ens: HybridEnsemble, axis, bins) -> Marginal:
    """Weighted histogram of one coordinate; mass outside the bins is reported."""
    if len(ens) == 0:
        raise ValueError("empty ensemble")
    edges = np.asarray(bins, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing")
    idx, name = _axis_index(ens, axis)
    v = ens.coords[:, idx]
    masses, _ = np.histogram(v, bins=edges, weights=ens.weights)
    below = float(ens.weights[v < edges[0]].sum())
    above = float(ens.weights[v > edges[-1]].sum())
    return Marginal(name, edges, masses, below, above)


def ensemble_expectation(ens: HybridEnsemble, obs: PolynomialObservable) -> float:
    if (obs.n, obs.N) != (ens.n, ens.N):
        raise ValueError("observable and ensemble dimensions differ")
    return float(np.dot(ens.weights, obs.compiled.value(ens.coords)))


def summary(ens: HybridEnsemble, branch_labels: Sequence[int] | None = None) -> dict:
    """Moments per coordinate and mass per branch label."""
    w = ens.weights
    mean = w @ ens.coords
    var = w @ (ens.coords - mean) ** 2
    names = variable_names(ens.n, ens.N)
    labels = ens.labels if branch_labels is None else np.asarray(branch_labels)
    branches = {int(b): float(w[labels == b].sum()) for b in np.unique(labels)}
    return {
        "count": len(ens),
        "total_weight": float(w.sum()),
        "mean": dict(zip(names, mean.tolist())),
        "variance": dict(zip(names, var.tolist())),
        "branch_masses": branches,
        "constraint_max_dev": float(np.abs(ens.constraint_values() - 1.0).max()) if ens.N else 0.0,
        "meta": ens.meta,
    }


def write_summary(path: str | Path, ens: HybridEnsemble, branch_labels=None) -> Path:
    return write_json(path, summary(ens, branch_labels))
