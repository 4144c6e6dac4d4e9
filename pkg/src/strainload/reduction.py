"""POD bases and snapshot priors built from pressure snapshot sets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .artifacts import array_digest
from .pressure import PressureField, SnapshotSet


class ReductionError(ValueError):
    pass


def _matrix(snaps) -> np.ndarray:
    P = snaps.matrix if isinstance(snaps, SnapshotSet) else np.asarray(snaps, dtype=float)
    if P.ndim != 2:
        raise ReductionError("snapshot matrix must be 2-D (n_p x N)")
    if P.shape[1] < 2:
        raise ReductionError(f"at least two snapshots are required, got {P.shape[1]}")
    return P


def _values(p) -> np.ndarray:
    return p.values if isinstance(p, PressureField) else np.asarray(p, dtype=float)


@dataclass(frozen=True)
class PodBasis:
    mean: np.ndarray              # (n_p,)
    modes: np.ndarray             # (n_p, r), orthonormal columns
    singular_values: np.ndarray   # (min(n_p, N),), nonincreasing

    @property
    def r(self) -> int:
        return self.modes.shape[1]

    @property
    def n_p(self) -> int:
        return self.mean.shape[0]

    def energy(self) -> np.ndarray:
        """Cumulative energy fraction after each retained count 1..len(sigma)."""
        return cumulative_energy(self.singular_values)

    def digest(self) -> str:
        return array_digest(self.mean, self.modes, self.singular_values)

    def truncate(self, r: int) -> "PodBasis":
        if not 0 <= r <= self.r:
            raise ReductionError(f"cannot truncate a rank-{self.r} basis to r = {r}")
        return PodBasis(self.mean, self.modes[:, :r], self.singular_values)


def cumulative_energy(sigma) -> np.ndarray:
    e = np.cumsum(np.asarray(sigma, dtype=float) ** 2)
    if e.size == 0 or e[-1] == 0:
        return np.zeros_like(e)
    return e / e[-1]


def select_rank(sigma, *, r: int | None = None, energy: float | None = None) -> int:
    """Retained count: a fixed ``r`` or the smallest r reaching ``energy``."""
    sigma = np.asarray(sigma, dtype=float)
    if (r is None) == (energy is None):
        raise ReductionError("give exactly one of r or energy")
    if r is not None:
        if not 0 <= r <= sigma.size:
            raise ReductionError(f"r = {r} outside [0, {sigma.size}]")
        return int(r)
    if not 0 < energy <= 1:
        raise ReductionError(f"energy threshold must lie in (0, 1], got {energy}")
    total = np.sum(sigma**2)
    if total == 0:
        return 0
    cum = np.cumsum(sigma**2) / total
    # Guard against the final entry landing a few ulps under 1.
    return int(min(np.searchsorted(cum, energy * (1 - 1e-14)) + 1, sigma.size))


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive."""
    if V.shape[1] == 0:
        return V
    idx = np.argmax(np.abs(V), axis=0)
    s = np.sign(V[idx, np.arange(V.shape[1])])
    s[s == 0] = 1.0
    return V * s


def compute_pod(snaps, *, r: int | None = None, energy: float | None = None) -> PodBasis:
    """Thin SVD of the centred snapshot matrix, truncated by ``r`` or ``energy``."""
    P = _matrix(snaps)
    mean = P.mean(axis=1)
    U, sigma, _ = np.linalg.svd(P - mean[:, None], full_matrices=False)
    keep = select_rank(sigma, r=r, energy=energy)
    return PodBasis(mean, _fix_signs(U[:, :keep]), sigma)


def reconstruct_pressure(basis: PodBasis, c) -> np.ndarray:
    """p = mean + V c. ``c`` may be (r,) or (m, r); rows give fields."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != basis.r:
        raise ReductionError(f"expected {basis.r} coefficients, got {c.shape[-1]}")
    return basis.mean + c @ basis.modes.T


def project_coeffs(basis: PodBasis, p) -> np.ndarray:
    """c = V^T (p - mean). ``p`` may be (n_p,) or (m, n_p)."""
    p = _values(p)
    if p.shape[-1] != basis.n_p:
        raise ReductionError(f"field length {p.shape[-1]} != n_p {basis.n_p}")
    return (p - basis.mean) @ basis.modes


@dataclass(frozen=True)
class PriorModel:
    """Gaussian snapshot prior with covariance factor(s): Gamma = S S^T."""

    mean: np.ndarray     # (n_q,)
    factor: np.ndarray   # (n_q, N)

    @property
    def n_q(self) -> int:
        return self.mean.shape[0]

    @property
    def N(self) -> int:
        return self.factor.shape[1]

    @property
    def rank_bound(self) -> int:
        return self.N - 1

    def apply(self, w) -> np.ndarray:
        """Gamma w without forming Gamma."""
        return self.factor @ (self.factor.T @ np.asarray(w, dtype=float))

    def dense(self) -> np.ndarray:
        return self.factor @ self.factor.T

    def digest(self) -> str:
        return array_digest(self.mean, self.factor)


def compute_prior(snaps) -> PriorModel:
    P = _matrix(snaps)
    mean = P.mean(axis=1)
    return PriorModel(mean, (P - mean[:, None]) / np.sqrt(P.shape[1] - 1))
