"""Force and moment coefficients from nodal forces, and estimation error metrics.

Body frame: x points aft along the axis (nose at x = 0), z up, y completing a
right-handed triad. Coefficients, in order:

    C_A  x-force / (q S)                   axial
    C_N  z-force / (q S)                   normal
    C_Y  y-force / (q S)                   side
    M_P  y-moment / (q S L)                pitch, positive nose-up
    M_Y  z-moment / (q S L)                yaw

Moments are taken about the configured reference point. Because the nose
lies toward -x, an upward force ahead of the reference point produces a
positive y-moment, i.e. nose-up pitch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import GeometryParams, Mesh
from .pressure import FlightCondition, freestream

COEFF_NAMES = ("C_A", "C_N", "C_Y", "M_P", "M_Y")


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceQuantities:
    q_ref: float
    S_ref: float
    L_ref: float
    ref_point: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not (self.q_ref > 0 and self.S_ref > 0 and self.L_ref > 0):
            raise ValueError("reference dynamic pressure, area and length must be positive")
        if len(self.ref_point) != 3:
            raise ValueError("reference point must be 3-D")

    @classmethod
    def for_body(cls, params: GeometryParams, cond: FlightCondition | None = None,
                 q_ref: float | None = None):
        """pi R^2, total length, mid-body point on the axis; q from the atmosphere."""
        if q_ref is None:
            if cond is None:
                raise ValueError("need a flight condition or an explicit q_ref")
            q_ref = freestream(cond)[1]
        return cls(float(q_ref), math.pi * params.outer_radius**2, params.total_length,
                   (0.5 * params.total_length, 0.0, 0.0))


@dataclass(frozen=True)
class AeroCoefficients:
    C_A: float
    C_N: float
    C_Y: float
    M_P: float
    M_Y: float

    @classmethod
    def from_array(cls, v):
        return cls(*(float(x) for x in v))

    def as_array(self) -> np.ndarray:
        return np.array([self.C_A, self.C_N, self.C_Y, self.M_P, self.M_Y])


def coefficient_map(nodes, refs: ReferenceQuantities) -> np.ndarray:
    """5 x n_s matrix G acting on node-major (x, y, z) nodal forces."""
    nodes = nodes.nodes if isinstance(nodes, Mesh) else np.asarray(nodes, dtype=float)
    n = len(nodes)
    dx, dy, dz = (nodes - np.asarray(refs.ref_point, dtype=float)).T
    G = np.zeros((5, n, 3))
    G[0, :, 0] = 1.0
    G[1, :, 2] = 1.0
    G[2, :, 1] = 1.0
    G[3, :, 0], G[3, :, 2] = dz, -dx          # (r x f)_y = dz fx - dx fz
    G[4, :, 0], G[4, :, 1] = -dy, dx          # (r x f)_z = dx fy - dy fx
    qs = refs.q_ref * refs.S_ref
    G[:3] /= qs
    G[3:] /= qs * refs.L_ref
    return G.reshape(5, 3 * n)


def compute_coefficients(G, C_map, p) -> np.ndarray:
    """G C_map p; ``p`` may be (n_p,) or (m, n_p), giving (5,) or (m, 5)."""
    p = np.asarray(getattr(p, "values", p), dtype=float)
    if p.shape[-1] != C_map.shape[1]:
        raise ValueError(f"pressure length {p.shape[-1]} != n_p {C_map.shape[1]}")
    if p.ndim == 1:
        return G @ (C_map @ p)
    return (G @ (C_map @ p.T)).T


@dataclass(frozen=True)
class CoefficientMap:
    """Affine map c -> M c + offset from POD coefficients to aero coefficients."""

    matrix: np.ndarray     # (5, r)
    offset: np.ndarray     # (5,)

    def __call__(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        return c @ self.matrix.T + self.offset


def precompute_coeff_from_pod(G, C_map, basis) -> CoefficientMap:
    GC = np.asarray((C_map.T @ G.T).T)
    return CoefficientMap(GC @ basis.modes, GC @ basis.mean)


# --------------------------------------------------------------------------
# Error metrics


def coefficient_ranges(coeffs) -> np.ndarray:
    """Per-coefficient range (max - min) over a reference set of rows."""
    c = np.atleast_2d(np.asarray(coeffs, dtype=float))
    return c.max(axis=0) - c.min(axis=0)


def coefficient_tolerances(coeffs, fraction: float = 0.1) -> np.ndarray:
    """epsilon_k = fraction * max |C_k| over a reference set of rows."""
    return fraction * np.abs(np.atleast_2d(np.asarray(coeffs, dtype=float))).max(axis=0)


def pod_error(q_hat, q, ranges) -> np.ndarray:
    ranges = np.asarray(ranges, dtype=float)
    if np.any(ranges <= 0):
        raise MetricError("POD coefficient ranges must be positive")
    return (np.asarray(q_hat, dtype=float) - np.asarray(q, dtype=float)) / ranges


def reconstruction_error(p_hat, p) -> float | np.ndarray:
    """||p_hat - p|| / ||p|| along the last axis."""
    p = np.asarray(p, dtype=float)
    norm = np.linalg.norm(p, axis=-1)
    if np.any(norm == 0):
        raise MetricError("reference pressure has zero norm")
    return np.linalg.norm(np.asarray(p_hat, dtype=float) - p, axis=-1) / norm


def coefficient_error(C_hat, C, eps) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    denom = np.maximum(np.asarray(eps, dtype=float), np.abs(C))
    if np.any(denom <= 0):
        raise MetricError("coefficient tolerance and value are both zero")
    return (np.asarray(C_hat, dtype=float) - C) / denom
