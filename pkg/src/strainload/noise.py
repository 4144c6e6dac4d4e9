"""Gaussian sensor noise: calibration, reproducible sampling and whitening.

Random streams
--------------
Every draw comes from a PCG64 generator seeded with
``SeedSequence(seed, spawn_key=(condition, replicate))``, so each
(condition, replicate) pair owns an independent stream that does not depend
on the order in which replicates are evaluated or on the worker count.

Standard normals are produced by inversion: each raw 64-bit output ``k`` is
reduced to its top 53 bits and mapped to ``u = (k + 1/2) 2^-53`` in (0, 1),
then ``z = ndtri(u)``. This avoids the version-dependent ziggurat tables of
``Generator.standard_normal``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtri

from .artifacts import array_digest

GENERATOR_INFO = {
    "bit_generator": "PCG64",
    "stream": "SeedSequence(seed, spawn_key=(condition, replicate))",
    "gaussian": "inverse-cdf: ndtri(((raw >> 11) + 0.5) * 2**-53)",
}


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Covariance L L^T; ``L`` defaults to sigma * I."""

    sigma: float
    n_d: int
    chol: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise NoiseError(f"sigma must be positive, got {self.sigma}")
        if self.n_d < 1:
            raise NoiseError("n_d must be positive")
        if self.chol is not None:
            L = np.asarray(self.chol, dtype=float)
            if L.shape != (self.n_d, self.n_d) or np.any(np.triu(L, 1) != 0):
                raise NoiseError("chol must be an n_d x n_d lower-triangular matrix")
            if np.any(np.diag(L) <= 0):
                raise NoiseError("chol must have a positive diagonal (singular or invalid factor)")

    @property
    def is_diagonal(self) -> bool:
        return self.chol is None

    @property
    def L(self) -> np.ndarray:
        return self.sigma * np.eye(self.n_d) if self.chol is None else np.asarray(self.chol)

    @property
    def delta(self) -> float:
        """Expected noise norm used by the discrepancy criterion."""
        return self.sigma * np.sqrt(self.n_d)

    def covariance(self) -> np.ndarray:
        L = self.L
        return L @ L.T

    def color(self, z) -> np.ndarray:
        """L z along the first axis."""
        z = np.asarray(z, dtype=float)
        return self.sigma * z if self.chol is None else self.L @ z

    def whiten(self, v) -> np.ndarray:
        """L^-1 v along the first axis."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n_d:
            raise NoiseError(f"vector length {v.shape[0]} != n_d {self.n_d}")
        if self.chol is None:
            return v / self.sigma
        return solve_triangular(self.L, v, lower=True)

    def inverse_factor(self) -> np.ndarray:
        """L^-1 as a dense matrix."""
        return self.whiten(np.eye(self.n_d))

    def digest(self) -> str:
        return array_digest(np.array([self.sigma, self.n_d], dtype=float), self.L)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "n_d": self.n_d, "diagonal": self.is_diagonal,
                "generator": GENERATOR_INFO}


def whiten(model: NoiseModel, v) -> np.ndarray:
    return model.whiten(v)


def calibrate_sigma(strains, fraction: float) -> float:
    """sigma = fraction * median |y| over every sensor and condition."""
    if not fraction > 0:
        raise NoiseError(f"fraction must be positive, got {fraction}")
    y = np.abs(np.concatenate([np.ravel(s) for s in strains]) if isinstance(strains, list)
               else np.ravel(np.asarray(strains, dtype=float)))
    if y.size == 0:
        raise NoiseError("empty strain database")
    sigma = fraction * float(np.median(y))
    if sigma <= 0:
        raise NoiseError("median strain magnitude is zero; sigma would vanish")
    return sigma


def stream(seed: int, condition: int = 0, replicate: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(int(condition), int(replicate)))
    return np.random.Generator(np.random.PCG64(ss))


def standard_normal(rng: np.random.Generator, size) -> np.ndarray:
    n = int(np.prod(size))
    raw = rng.bit_generator.random_raw(n)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u).reshape(size)


def sample_noise(model: NoiseModel, seed: int, condition: int = 0, replicate: int = 0,
                 count: int | None = None) -> np.ndarray:
    """eta = L z. Returns (n_d,) or, with ``count``, (count, n_d) rows."""
    rng = stream(seed, condition, replicate)
    if count is None:
        return model.color(standard_normal(rng, model.n_d))
    z = standard_normal(rng, (count, model.n_d))
    return model.color(z.T).T
