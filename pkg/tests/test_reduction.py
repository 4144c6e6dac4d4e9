import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from strainload.pressure import PressureField
from strainload.reduction import (ReductionError, compute_pod, compute_prior,
                                  cumulative_energy, project_coeffs, reconstruct_pressure,
                                  select_rank)

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestRankSelection:
    def test_energy_threshold(self):
        s = np.array([3.0, 2.0, 1.0, 0.5])
        e = cumulative_energy(s)
        assert np.allclose(e, np.cumsum(s**2) / np.sum(s**2))
        assert select_rank(s, energy=e[1]) == 2
        assert select_rank(s, energy=e[1] + 1e-9) == 3
        assert select_rank(s, energy=1.0) == 4

    def test_fixed_rank(self):
        assert select_rank(np.ones(4), r=2) == 2
        assert select_rank(np.ones(4), r=0) == 0

    def test_all_zero_spectrum(self):
        assert select_rank(np.zeros(3), energy=0.9) == 0
        assert np.array_equal(cumulative_energy(np.zeros(3)), np.zeros(3))

    @pytest.mark.parametrize("kw", [dict(), dict(r=1, energy=0.5), dict(r=5), dict(r=-1),
                                    dict(energy=0.0), dict(energy=1.1)])
    def test_invalid(self, kw):
        with pytest.raises(ReductionError):
            select_rank(np.ones(4), **kw)


class TestPod:
    def test_rank_one_data(self):
        v = np.array([1.0, 2.0, 2.0]) / 3
        P = 5.0 + np.outer(v, [-1.0, 0.0, 1.0])
        b = compute_pod(P, energy=0.999)
        assert b.r == 1
        assert np.allclose(b.mean, 5.0)
        assert np.allclose(b.modes[:, 0], v)
        assert b.singular_values[0] == pytest.approx(np.sqrt(2))

    def test_matches_snapshot_eigenproblem(self, coarse):
        # Method of snapshots: eigenvectors of the N x N Gram matrix map to the same modes.
        P = coarse.P1.matrix
        X = P - P.mean(axis=1, keepdims=True)
        w, Q = np.linalg.eigh(X.T @ X)
        w, Q = w[::-1], Q[:, ::-1]
        b = compute_pod(coarse.P1, r=5)
        assert np.allclose(b.singular_values[:5] ** 2, w[:5], rtol=1e-9)
        U = X @ Q[:, :5] / np.sqrt(w[:5])
        assert np.allclose(np.abs(np.sum(U * b.modes, axis=0)), 1.0, atol=1e-8)

    def test_sign_convention(self, coarse):
        V = coarse.pod.modes
        idx = np.argmax(np.abs(V), axis=0)
        assert np.all(V[idx, np.arange(V.shape[1])] > 0)

    def test_default_energy_selects_five(self, coarse):
        assert coarse.pod.r == 5

    def test_too_few_snapshots(self):
        with pytest.raises(ReductionError):
            compute_pod(np.ones((4, 1)), r=1)
        with pytest.raises(ReductionError):
            compute_pod(np.ones(4), r=1)

    def test_project_and_reconstruct(self, coarse):
        b = coarse.pod
        c = project_coeffs(b, coarse.P1.matrix[:, 3])
        p = reconstruct_pressure(b, c)
        assert np.allclose(project_coeffs(b, p), c)
        batch = project_coeffs(b, coarse.P1.matrix[:, :4].T)
        assert batch.shape == (4, 5) and np.allclose(batch[3], c)
        assert np.allclose(project_coeffs(b, PressureField(p)), c)

    def test_length_checks(self, coarse):
        with pytest.raises(ReductionError):
            reconstruct_pressure(coarse.pod, np.zeros(4))
        with pytest.raises(ReductionError):
            project_coeffs(coarse.pod, np.zeros(3))

    def test_truncate(self, coarse):
        b3 = coarse.pod.truncate(3)
        assert b3.r == 3 and np.array_equal(b3.modes, coarse.pod.modes[:, :3])
        assert b3.digest() != coarse.pod.digest()
        with pytest.raises(ReductionError):
            coarse.pod.truncate(6)


class TestPrior:
    def test_factor_and_covariance(self):
        P = np.array([[1.0, 3.0, 5.0], [2.0, 2.0, 2.0]])
        prior = compute_prior(P)
        assert np.allclose(prior.mean, [3.0, 2.0])
        assert np.allclose(prior.dense(), np.cov(P))
        assert prior.N == 3 and prior.rank_bound == 2 and prior.n_q == 2
        w = np.array([0.3, -1.0])
        assert np.allclose(prior.apply(w), np.cov(P) @ w)

    def test_rank_is_at_most_n_minus_one(self, coarse):
        s = np.linalg.svd(coarse.prior.factor, compute_uv=False)
        assert np.sum(s > 1e-10 * s[0]) <= coarse.prior.rank_bound

    def test_needs_two_snapshots(self):
        with pytest.raises(ReductionError):
            compute_prior(np.ones((3, 1)))


snapshot_mats = arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(2, 8)),
                       elements=finite)


@settings(max_examples=60, deadline=None)
@given(P=snapshot_mats)
def test_pod_modes_orthonormal_and_centred(P):
    b = compute_pod(P, energy=1.0)
    assert np.allclose(b.modes.T @ b.modes, np.eye(b.r), atol=1e-10)
    assert np.allclose(b.mean, P.mean(axis=1))
    assert np.all(np.diff(b.singular_values) <= 1e-9 * (1 + b.singular_values[0]))


@settings(max_examples=60, deadline=None)
@given(P=snapshot_mats)
def test_reconstruction_error_nonincreasing_in_rank(P):
    full = compute_pod(P, r=min(P.shape))
    errs = []
    for r in range(full.r + 1):
        b = full.truncate(r)
        R = reconstruct_pressure(b, project_coeffs(b, P.T)) - P.T
        errs.append(np.linalg.norm(R))
    scale = 1 + np.linalg.norm(P)
    assert all(b <= a + 1e-9 * scale for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 1e-9 * scale


@settings(max_examples=60, deadline=None)
@given(P=snapshot_mats, w=arrays(np.float64, 12, elements=finite))
def test_prior_covariance_psd(P, w):
    prior = compute_prior(P)
    v = w[:prior.n_q]
    assert v @ prior.apply(v) >= -1e-9 * (1 + np.linalg.norm(prior.factor) ** 2 * (v @ v))
    assert np.allclose(prior.factor.sum(axis=1), 0.0, atol=1e-9 * (1 + np.abs(P).max()))


@settings(max_examples=40, deadline=None)
@given(P=snapshot_mats, energy=st.floats(0.05, 1.0))
def test_energy_rank_is_minimal(P, energy):
    s = np.linalg.svd(P - P.mean(axis=1, keepdims=True), compute_uv=False)
    r = select_rank(s, energy=energy)
    e = cumulative_energy(s)
    if e[-1] == 0:
        assert r == 0
        return
    assert e[r - 1] >= energy * (1 - 1e-12)
    assert r == 1 or e[r - 2] < energy
