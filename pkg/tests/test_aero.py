import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from strainload.aero import (COEFF_NAMES, AeroCoefficients, MetricError, ReferenceQuantities,
                             coefficient_error, coefficient_map, coefficient_ranges,
                             coefficient_tolerances, compute_coefficients, pod_error,
                             precompute_coeff_from_pod, reconstruction_error)
from strainload.geometry import EXTERIOR
from strainload.pressure import FlightCondition, freestream, synth_pressure
from strainload.reduction import reconstruct_pressure

UNIT = ReferenceQuantities(1.0, 1.0, 1.0, (0.0, 0.0, 0.0))


def midpoint_rule_loads(mesh, pressure_fn, ref):
    """Force and moment of -p n dA, integrated per triangle with the edge-midpoint rule."""
    tris = mesh.tris_with_tag(EXTERIOR)
    a, b, c = (mesh.nodes[tris[:, k]] for k in range(3))
    nA = 0.5 * np.cross(b - a, c - a)
    force = np.zeros(3)
    moment = np.zeros(3)
    for m in (0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)):
        df = -(pressure_fn(m)[:, None] * nA) / 3.0
        force += df.sum(axis=0)
        moment += np.cross(m - ref, df).sum(axis=0)
    return force, moment


class TestReferenceQuantities:
    def test_for_body(self, coarse):
        cond = FlightCondition(6.0, 0.0, 0.0)
        refs = ReferenceQuantities.for_body(coarse.params, cond)
        assert refs.q_ref == freestream(cond)[1]
        assert refs.S_ref == pytest.approx(math.pi * coarse.params.outer_radius**2)
        assert refs.L_ref == coarse.params.total_length
        assert refs.ref_point == (0.5 * coarse.params.total_length, 0.0, 0.0)
        assert ReferenceQuantities.for_body(coarse.params, q_ref=2.0).q_ref == 2.0

    def test_invalid(self, coarse):
        with pytest.raises(ValueError):
            ReferenceQuantities(0.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            ReferenceQuantities(1.0, 1.0, 1.0, (0.0, 0.0))
        with pytest.raises(ValueError):
            ReferenceQuantities.for_body(coarse.params)


class TestCoefficientMap:
    def test_single_node_forces(self):
        refs = ReferenceQuantities(2.0, 0.5, 4.0, (2.0, 0.0, 0.0))
        G = coefficient_map(np.array([[0.0, 0.0, 0.0]]), refs)
        # Upward unit force at the nose, 2 m ahead of the reference point.
        c = G @ np.array([0.0, 0.0, 1.0])
        assert np.allclose(c, [0.0, 1.0, 0.0, 2.0 / 4.0, 0.0])
        # Side force at the nose yaws the nose toward -y: negative z-moment.
        c = G @ np.array([0.0, 1.0, 0.0])
        assert np.allclose(c, [0.0, 0.0, 1.0, 0.0, -0.5])
        c = G @ np.array([1.0, 0.0, 0.0])
        assert np.allclose(c, [1.0, 0.0, 0.0, 0.0, 0.0])

    def test_offset_axial_force_gives_moments(self):
        G = coefficient_map(np.array([[0.0, 1.0, 2.0]]), UNIT)
        assert np.allclose(G @ [1.0, 0.0, 0.0], [1, 0, 0, 2.0, -1.0])

    def test_shape(self, coarse):
        G = coefficient_map(coarse.mesh, UNIT)
        assert G.shape == (5, coarse.mesh.n_dofs)

    def test_matches_quadrature_for_linear_pressure(self, coarse):
        mesh = coarse.mesh
        ref = np.array([1.5, 0.1, -0.05])
        coef = np.array([2e4, 3e3, -1e3, 4e3])
        fn = lambda x: coef[0] + x @ coef[1:]
        p = fn(mesh.nodes[mesh.exterior_nodes])
        c = compute_coefficients(coefficient_map(mesh, ReferenceQuantities(1.0, 1.0, 1.0, tuple(ref))),
                                 coarse.ops.C_map, p)
        force, moment = midpoint_rule_loads(mesh, fn, ref)
        expected = np.array([force[0], force[2], force[1], moment[1], moment[2]])
        assert np.allclose(c, expected, rtol=1e-10, atol=1e-10 * np.abs(expected).max())

    def test_zero_incidence_has_only_axial_force(self, coarse):
        cond = FlightCondition(6.0, 0.0, 0.0)
        G = coefficient_map(coarse.mesh, ReferenceQuantities.for_body(coarse.params, cond))
        c = compute_coefficients(G, coarse.ops.C_map, synth_pressure(coarse.mesh, cond))
        assert c[0] > 0
        assert np.all(np.abs(c[1:]) <= 1e-12 * c[0])

    def test_sign_conventions_under_incidence(self, coarse):
        refs = ReferenceQuantities.for_body(coarse.params, q_ref=1.0)
        G = coefficient_map(coarse.mesh, refs)
        pitch = compute_coefficients(G, coarse.ops.C_map,
                                     synth_pressure(coarse.mesh, FlightCondition(6.0, 8.0, 0.0)))
        side = compute_coefficients(G, coarse.ops.C_map,
                                    synth_pressure(coarse.mesh, FlightCondition(6.0, 0.0, 8.0)))
        assert pitch[1] > 0 and pitch[3] > 0          # lift and nose-up pitch
        assert side[2] > 0 and side[4] < 0            # side force, nose yawed to -y
        assert abs(pitch[2]) < 0.01 * pitch[1]
        assert abs(side[1]) < 0.01 * side[2]

    def test_batch(self, coarse):
        G = coefficient_map(coarse.mesh, UNIT)
        P = coarse.P1.matrix[:, :3].T
        batch = compute_coefficients(G, coarse.ops.C_map, P)
        assert batch.shape == (3, 5)
        assert np.allclose(batch[1], compute_coefficients(G, coarse.ops.C_map, P[1]))
        with pytest.raises(ValueError):
            compute_coefficients(G, coarse.ops.C_map, np.ones(4))

    def test_pod_affine_map(self, coarse, rng):
        G = coefficient_map(coarse.mesh, UNIT)
        fast = precompute_coeff_from_pod(G, coarse.ops.C_map, coarse.pod)
        c = rng.standard_normal((4, coarse.pod.r)) * 1e4
        full = compute_coefficients(G, coarse.ops.C_map, reconstruct_pressure(coarse.pod, c))
        assert np.allclose(fast(c), full, rtol=1e-10, atol=1e-10 * np.abs(full).max())
        assert fast.matrix.shape == (5, coarse.pod.r)

    def test_coefficients_record(self):
        v = np.arange(5.0)
        rec = AeroCoefficients.from_array(v)
        assert rec.M_P == 3.0 and np.array_equal(rec.as_array(), v)
        assert COEFF_NAMES == ("C_A", "C_N", "C_Y", "M_P", "M_Y")


class TestMetrics:
    def test_pod_error(self):
        assert np.allclose(pod_error([1.0, 2.0], [0.0, 4.0], [2.0, 4.0]), [0.5, -0.5])
        with pytest.raises(MetricError):
            pod_error([1.0], [0.0], [0.0])

    def test_reconstruction_error(self):
        assert reconstruction_error([3.0, 4.0], [3.0, 0.0]) == pytest.approx(4 / 3)
        assert np.allclose(reconstruction_error(np.ones((2, 2)), np.array([[1.0, 1.0], [2.0, 0.0]])),
                           [0.0, np.sqrt(2) / 2])
        with pytest.raises(MetricError):
            reconstruction_error([1.0], [0.0])

    def test_coefficient_error_uses_larger_denominator(self):
        e = coefficient_error([1.1, 0.05], [1.0, 0.0], [0.5, 0.5])
        assert np.allclose(e, [0.1, 0.1])
        with pytest.raises(MetricError):
            coefficient_error([1.0], [0.0], [0.0])

    def test_ranges_and_tolerances(self):
        C = np.array([[1.0, -2.0], [3.0, 1.0]])
        assert np.array_equal(coefficient_ranges(C), [2.0, 3.0])
        assert np.allclose(coefficient_tolerances(C), [0.3, 0.2])
        assert np.allclose(coefficient_tolerances(C, 0.5), [1.5, 1.0])


@settings(max_examples=40, deadline=None)
@given(nodes=arrays(np.float64, (4, 3), elements=st.floats(-3, 3)),
       forces=arrays(np.float64, (4, 3), elements=st.floats(-10, 10)),
       shift=arrays(np.float64, 3, elements=st.floats(-2, 2)))
def test_moment_transfer_rule(nodes, forces, shift):
    # Moving the reference point by s changes the moment by -s x F.
    ref0 = ReferenceQuantities(1.0, 1.0, 1.0, (0.0, 0.0, 0.0))
    ref1 = ReferenceQuantities(1.0, 1.0, 1.0, tuple(shift))
    f = forces.ravel()
    c0 = coefficient_map(nodes, ref0) @ f
    c1 = coefficient_map(nodes, ref1) @ f
    F = forces.sum(axis=0)
    dm = -np.cross(shift, F)
    assert np.allclose(c1[:3], c0[:3])
    assert np.allclose(c1[3:] - c0[3:], dm[1:], atol=1e-9 * (1 + np.abs(c0).max()))
