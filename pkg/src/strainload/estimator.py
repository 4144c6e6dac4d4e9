"""Precomputed linear inverse maps q_hat = T d + k and their diagnostics.

Case 1 (n_q <= n_d, no regularization)
    Minimise ||L^-1 (Z q + d0 - d)||. With the whitened thin QR
    L^-1 Z = Q R this gives T = R^-1 Q^T L^-1, k = -T d0 and posterior
    covariance (Z^T Gn^-1 Z)^-1 = R^-1 R^-T. ``d0`` is the data produced by
    the fixed part of the parameterization (for POD coefficients, the strain
    of the mean pressure); it is zero for a purely linear parameterization.

Case 2 (prior-regularized full field)
    Minimise ||L^-1 (Z q - d)||^2 + gamma ||q - q_bar||^2_{Gpr}. The Hessian
    is H = Z^T Gn^-1 Z + gamma Gpr^-1. With Gpr = S S^T, U_w = L^-1 Z S and
    M_w = gamma I + U_w U_w^T (so that gamma Gn + Z Gpr Z^T = L M_w L^T) the
    Woodbury identity gives

        H^-1 = (1/gamma) S (I - U_w^T M_w^-1 U_w) S^T
        T    = H^-1 Z^T Gn^-1 = S U_w^T M_w^-1 L^-1.

    The minimiser is q_hat = H^-1 (Z^T Gn^-1 d + gamma Gpr^-1 q_bar). Since
    gamma H^-1 Gpr^-1 = H^-1 (H - Z^T Gn^-1 Z) = I - T Z, the shift is

        k = gamma H^-1 Gpr^-1 q_bar = q_bar - T Z q_bar,

    which never needs Gpr^-1 and so remains defined for a singular prior.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr, solve_triangular, svd

from .noise import NoiseModel
from .reduction import PriorModel

RANK_TOL = 1e-12
SPD_TOL = 1e-12
EIG_CUT = 1e-14


class EstimatorError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class PosteriorCovariance:
    """Either a dense matrix or the factored form S @ core @ S^T."""

    dense_matrix: np.ndarray | None = None
    factor: np.ndarray | None = None
    core: np.ndarray | None = None

    @property
    def n(self) -> int:
        return (self.dense_matrix if self.dense_matrix is not None else self.factor).shape[0]

    def apply(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.dense_matrix is not None:
            return self.dense_matrix @ v
        return self.factor @ (self.core @ (self.factor.T @ v))

    def diagonal(self) -> np.ndarray:
        if self.dense_matrix is not None:
            return np.diag(self.dense_matrix).copy()
        return np.einsum("ij,jk,ik->i", self.factor, self.core, self.factor)

    def dense(self) -> np.ndarray:
        if self.dense_matrix is not None:
            return self.dense_matrix
        return self.factor @ self.core @ self.factor.T


@dataclass(frozen=True)
class InverseMap:
    T: np.ndarray                 # (n_q, n_d), C-contiguous for the query path
    k: np.ndarray                 # (n_q,)
    gamma: float
    case: str                     # "case1" | "case2"
    covariance: PosteriorCovariance
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.T)) and np.all(np.isfinite(self.k))):
            raise EstimatorError("inverse map has non-finite entries")

    @property
    def n_q(self) -> int:
        return self.T.shape[0]

    @property
    def n_d(self) -> int:
        return self.T.shape[1]


def estimate(imap: InverseMap, d, timings: list | None = None) -> np.ndarray:
    """q_hat = T d + k. ``d`` may be (n_d,) or (m, n_d) rows.

    When ``timings`` is given, the wall-clock time of the query in
    nanoseconds is appended to it.
    """
    d = np.asarray(d, dtype=float)
    if d.shape[-1] != imap.n_d:
        raise ValueError(f"measurement length {d.shape[-1]} != n_d {imap.n_d}")
    t0 = time.perf_counter_ns()
    q = imap.T @ d + imap.k if d.ndim == 1 else d @ imap.T.T + imap.k
    if timings is not None:
        timings.append(time.perf_counter_ns() - t0)
    return q


def posterior_covariance(imap: InverseMap) -> PosteriorCovariance:
    return imap.covariance


def build_case1(Z, noise: NoiseModel, offset=None, provenance=None) -> InverseMap:
    """Unregularized weighted least squares through a whitened thin QR."""
    Z = np.asarray(Z, dtype=float)
    n_d, n_q = Z.shape
    if n_d != noise.n_d:
        raise ValueError(f"Z has {n_d} rows but the noise model has n_d = {noise.n_d}")
    if n_q > n_d:
        raise EstimatorError(f"case 1 needs n_q <= n_d, got n_q = {n_q} > n_d = {n_d}")
    Q, R = qr(noise.whiten(Z), mode="economic")
    _, s, vt = svd(R)
    if s[-1] <= RANK_TOL * s[0]:
        direction = np.array2string(vt[-1], precision=3, max_line_width=200)
        raise EstimatorError(
            f"Z is rank deficient (sigma_min/sigma_max = {s[-1] / s[0]:.3e}); "
            f"unobservable direction {direction}")
    T = solve_triangular(R, Q.T) @ noise.inverse_factor()
    Rinv = solve_triangular(R, np.eye(n_q))
    k = np.zeros(n_q) if offset is None else -T @ np.asarray(offset, dtype=float)
    return InverseMap(np.ascontiguousarray(T), k, 0.0, "case1",
                      PosteriorCovariance(dense_matrix=Rinv @ Rinv.T), dict(provenance or {}))


@dataclass(frozen=True)
class _Woodbury:
    """Full SVD U_w = P diag(s) W^T, the only factorization Case 2 needs."""

    Uw: np.ndarray       # L^-1 Z S  (n_d, N)
    P: np.ndarray        # (n_d, n_d) left singular vectors
    s: np.ndarray        # (min(n_d, N),) singular values, nonincreasing
    W: np.ndarray        # (N, N) right singular vectors

    @property
    def evecs(self) -> np.ndarray:
        """Eigenvectors of U_w U_w^T."""
        return self.P

    @property
    def evals(self) -> np.ndarray:
        """Eigenvalues of U_w U_w^T (length n_d, zero-padded)."""
        lam = np.zeros(self.P.shape[0])
        lam[:self.s.size] = self.s**2
        return lam

    def right_evals(self) -> np.ndarray:
        """Eigenvalues of U_w^T U_w (length N, zero-padded)."""
        lam = np.zeros(self.W.shape[0])
        lam[:self.s.size] = self.s**2
        return lam


def _woodbury_parts(Z, noise: NoiseModel, prior: PriorModel) -> _Woodbury:
    Z = np.asarray(Z, dtype=float)
    if Z.shape[1] != prior.n_q:
        raise ValueError(f"Z has {Z.shape[1]} columns but the prior has n_q = {prior.n_q}")
    if Z.shape[0] != noise.n_d:
        raise ValueError(f"Z has {Z.shape[0]} rows but the noise model has n_d = {noise.n_d}")
    Uw = noise.whiten(Z @ prior.factor)
    try:
        P, s, Wt = svd(Uw, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise EstimatorError(f"SVD of the whitened prior-to-data map failed: {exc}") from exc
    return _Woodbury(Uw, P, s, Wt.T)


def build_case2(Z, noise: NoiseModel, prior: PriorModel, gamma: float,
                provenance=None, _parts: _Woodbury | None = None) -> InverseMap:
    """Prior-regularized full-field map via the Woodbury identity.

    Everything is expressed through the SVD of U_w, so that
    I - U_w^T M_w^-1 U_w = gamma W diag(1 / (s^2 + gamma)) W^T is formed without
    cancellation even when gamma is many decades below the leading s^2.
    """
    if not (np.isfinite(gamma) and gamma > 0):
        raise EstimatorError(f"gamma must be positive, got {gamma}")
    parts = _parts or _woodbury_parts(Z, noise, prior)
    m_eigs = gamma + parts.evals
    if m_eigs.min() < SPD_TOL * m_eigs.max():
        raise EstimatorError(
            f"gamma*Gn + Z Gpr Z^T is numerically singular "
            f"(eigenvalue ratio {m_eigs.min() / m_eigs.max():.3e} < {SPD_TOL})")
    m = parts.s.size
    Wm, Pm = parts.W[:, :m], parts.P[:, :m]
    G = (Wm * (parts.s / (parts.s**2 + gamma))) @ Pm.T       # U_w^T M_w^-1, (N, n_d)
    T = prior.factor @ (G @ noise.inverse_factor())
    k = prior.mean - T @ (np.asarray(Z, dtype=float) @ prior.mean)
    core = (parts.W / (parts.right_evals() + gamma)) @ parts.W.T
    core = 0.5 * (core + core.T)
    cov = PosteriorCovariance(factor=prior.factor, core=core)
    return InverseMap(np.ascontiguousarray(T), k, float(gamma), "case2", cov,
                      dict(provenance or {}))


def hessian_inverse_dense(Z, noise: NoiseModel, prior_cov, gamma) -> np.ndarray:
    """(Z^T Gn^-1 Z + gamma Gpr^-1)^-1 for an invertible prior (reference form)."""
    Zw = noise.whiten(np.asarray(Z, dtype=float))
    return np.linalg.inv(Zw.T @ Zw + gamma * np.linalg.inv(prior_cov))


# --------------------------------------------------------------------------
# Conditioning


@dataclass(frozen=True)
class ConditionReport:
    K: float
    kappa: float
    nu: float
    cos_theta: float


def relative_condition_number(Z, q, d) -> ConditionReport:
    """K = kappa / (nu cos(theta)) for the least-squares problem Z q ~ d."""
    Z = np.asarray(Z, dtype=float)
    q = np.asarray(q, dtype=float)
    d = np.asarray(d, dtype=float)
    nq, nd = np.linalg.norm(q), np.linalg.norm(d)
    if nq == 0 or nd == 0:
        raise ValueError("q and d must be nonzero")
    nzq = np.linalg.norm(Z @ q)
    if nzq == 0:
        raise ValueError("Z q vanishes")
    s = svd(Z, compute_uv=False)
    if s[-1] == 0:
        raise EstimatorError("Z is rank deficient; condition number is infinite")
    kappa = s[0] / s[-1]
    nu = s[0] * nq / nzq
    cos_theta = nzq / nd
    return ConditionReport(kappa / (nu * cos_theta), kappa, nu, cos_theta)


def preset_condition_number(Z, data_scale: float = 100.0) -> ConditionReport:
    """K with ||d|| = data_scale * sqrt(n_d) and ||q|| = 1.

    Under this normalization K = ||d|| / (sigma_min ||q||) for every unit q,
    so the leading right singular vector is used as a representative q and
    d is scaled along Z q.
    """
    Z = np.asarray(Z, dtype=float)
    _, _, vt = svd(Z, full_matrices=False)
    q = vt[0]
    zq = Z @ q
    d = zq / np.linalg.norm(zq) * data_scale * np.sqrt(Z.shape[0])
    return relative_condition_number(Z, q, d)


# --------------------------------------------------------------------------
# Prior-preconditioned data-misfit Hessian


@dataclass(frozen=True)
class HessianSpectrum:
    eigenvalues: np.ndarray    # (m,), nonincreasing
    vectors: np.ndarray        # (n_q, m), b_k = S w_k
    mean: np.ndarray           # prior mean, re-added by mode projection

    @property
    def count(self) -> int:
        return self.eigenvalues.shape[0]


def preconditioned_hessian_eigs(Z, noise: NoiseModel, prior: PriorModel,
                                cut: float = EIG_CUT) -> HessianSpectrum:
    """Eigenpairs of Gpr H_misfit through the symmetric S^T H_misfit S."""
    Uw = noise.whiten(np.asarray(Z, dtype=float) @ prior.factor)
    try:
        _, s, wt = svd(Uw, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise EstimatorError(f"eigensolver failed: {exc}") from exc
    lam = s**2
    if lam.size == 0 or lam[0] == 0:
        return HessianSpectrum(np.zeros(0), np.zeros((prior.n_q, 0)), prior.mean)
    keep = lam > cut * lam[0]
    return HessianSpectrum(lam[keep], prior.factor @ wt[keep].T, prior.mean)


def project_onto_modes(p, spectrum: HessianSpectrum, r: int) -> np.ndarray:
    """Least-squares fit of p - mean in span{b_1..b_r}, mean re-added."""
    if not 0 <= r <= spectrum.count:
        raise ValueError(f"r = {r} outside [0, {spectrum.count}]")
    p = np.asarray(getattr(p, "values", p), dtype=float)
    centred = p - spectrum.mean
    if r == 0:
        return spectrum.mean.copy()
    Q, _ = qr(spectrum.vectors[:, :r], mode="economic")
    return spectrum.mean + Q @ (Q.T @ centred)


# --------------------------------------------------------------------------
# Discrepancy-principle selection of gamma


@dataclass(frozen=True)
class MorozovResult:
    gamma: float
    misfit: float
    delta: float
    iterations: int
    history: tuple      # ((gamma, median misfit), ...) in evaluation order


class MisfitCurve:
    """Unwhitened data misfits ||Z q_hat(gamma) - d|| for a set of measurements.

    For the Case 2 estimate the residual has the closed form
    Z q_hat - d = -gamma L M_w^-1 L^-1 (d - Z q_bar), evaluated here in the
    eigenbasis of U_w U_w^T so each gamma costs O(n_d * m).
    """

    def __init__(self, Z, noise: NoiseModel, prior: PriorModel, measurements):
        D = np.atleast_2d(np.asarray(measurements, dtype=float))
        self.noise = noise
        self.parts = _woodbury_parts(Z, noise, prior)
        resid0 = noise.whiten((D - np.asarray(Z, dtype=float) @ prior.mean).T)
        self.coords = self.parts.evecs.T @ resid0              # (n_d, m)

    def misfits(self, gamma: float) -> np.ndarray:
        scaled = self.coords * (gamma / (gamma + self.parts.evals))[:, None]
        r = self.noise.color(self.parts.evecs @ scaled)
        return np.linalg.norm(r, axis=0)

    def median(self, gamma: float) -> float:
        return float(np.median(self.misfits(gamma)))


def select_gamma_morozov(Z, noise: NoiseModel, prior: PriorModel, measurements, *,
                         bracket=(1e-8, 1e4), scale: float | None = None,
                         rtol: float = 0.01, max_iter: int = 200) -> MorozovResult:
    """Bisect on log10(gamma) until the median misfit is within rtol of delta.

    ``bracket`` is relative to ``scale``, which defaults to the largest
    eigenvalue of the prior-preconditioned misfit Hessian.
    """
    curve = MisfitCurve(Z, noise, prior, measurements)
    if scale is None:
        scale = float(curve.parts.evals.max())
    if scale <= 0:
        raise EstimatorError("data carry no information through the prior (lambda_1 = 0)")
    delta = noise.delta
    lo, hi = np.log10(bracket[0] * scale), np.log10(bracket[1] * scale)
    history = []

    def evaluate(lg):
        g = 10.0**lg
        m = curve.median(g)
        history.append((g, m))
        ordered = sorted(history)
        vals = np.array([v for _, v in ordered])
        if np.any(np.diff(vals) < -1e-9 * max(vals.max(), delta)):
            raise EstimatorError("data misfit is not monotone in gamma")
        return m

    f_lo, f_hi = evaluate(lo), evaluate(hi)
    if not f_lo <= delta <= f_hi:
        raise EstimatorError(
            f"gamma bracket [{10**lo:.3e}, {10**hi:.3e}] does not straddle delta = {delta:.4e}: "
            f"median misfit {f_lo:.4e} at the lower end, {f_hi:.4e} at the upper end")
    for it in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        f = evaluate(mid)
        if abs(f - delta) <= rtol * delta:
            return MorozovResult(10.0**mid, f, delta, it, tuple(history))
        if f < delta:
            lo = mid
        else:
            hi = mid
    raise EstimatorError(f"bisection did not reach the target band in {max_iter} steps")
