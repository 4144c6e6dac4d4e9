"""Analytic surface-pressure generator and snapshot databasing.

Stands in for an Euler CFD database. The pressure at an exterior node is

    p = p_inf(H) + q_inf(M, H) * Cp + band

where ``Cp = Cp_max * max(0, -V.n)**2`` is the modified-Newtonian law (``V``
the freestream direction, ``n`` the analytic outward normal of the node's
surface patch) and ``band`` is a leeward high-pressure strip with hard
azimuthal edges on the cylindrical body.

Freestream direction in the body frame (x aft, z up):

    V = (cos(alpha) cos(beta), sin(beta), sin(alpha) cos(beta))

so the flow tilts toward +z with angle of attack and toward +y with sideslip.
The windward side faces -V's crossflow component; the leeward meridian sits
at azimuth ``atan2(V_z, V_y)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .artifacts import ContainerError, atomic_write
from .geometry import Mesh

GAMMA_AIR = 1.4
RHO_SEA_LEVEL = 1.225
SCALE_HEIGHT = 7500.0
# (base altitude [m], speed of sound [m/s]); piecewise constant above each base.
SOUND_SPEED_TABLE = ((0.0, 340.3), (11000.0, 295.1), (20000.0, 301.7),
                     (32000.0, 318.0), (47000.0, 329.8))

SNAPSHOT_FORMAT = "strainload-snapshots"
SNAPSHOT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class FlightCondition:
    mach: float
    alpha: float      # degrees
    beta: float       # degrees
    altitude: float = 20000.0

    def __post_init__(self):
        if not self.mach > 1:
            raise ValueError(f"supersonic Mach number required, got {self.mach}")
        if abs(self.alpha) > 15 or abs(self.beta) > 15:
            raise ValueError("|alpha| and |beta| must not exceed 15 degrees")
        if self.altitude < 0:
            raise ValueError("altitude must be non-negative")

    @property
    def total_angle(self) -> float:
        """Total angle of attack in degrees."""
        a, b = math.radians(self.alpha), math.radians(self.beta)
        return math.degrees(math.acos(min(1.0, math.cos(a) * math.cos(b))))

    def freestream_direction(self):
        a, b = math.radians(self.alpha), math.radians(self.beta)
        return np.array([math.cos(a) * math.cos(b), math.sin(b), math.sin(a) * math.cos(b)])


def atmosphere(altitude):
    """Density, speed of sound and static pressure of the exponential model."""
    rho = RHO_SEA_LEVEL * math.exp(-altitude / SCALE_HEIGHT)
    a = SOUND_SPEED_TABLE[0][1]
    for base, speed in SOUND_SPEED_TABLE:
        if altitude >= base:
            a = speed
    return rho, a, rho * a * a / GAMMA_AIR


def freestream(cond: FlightCondition):
    """Static and dynamic pressure (Pa)."""
    rho, a, p = atmosphere(cond.altitude)
    return p, 0.5 * rho * (cond.mach * a) ** 2


@dataclass(frozen=True)
class GeneratorParams:
    cp_max: float = 2.0
    # Band amplitude = band_coefficient * q_inf * sin(total angle).
    band_coefficient: float = 0.05
    band_half_width_deg: float = 30.0


@dataclass
class PressureField:
    values: np.ndarray
    condition: FlightCondition | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("pressure field has non-finite values")
        if np.any(self.values < 0):
            raise ValueError("absolute pressure must be non-negative")


def _surface_normals(mesh: Mesh):
    """Analytic outward normals at exterior nodes and a patch label.

    Patches: 0 front face, 1 cone, 2 cylinder. Nodes on the nose/body junction
    belong to the cone, rim nodes of the front face to the front face.
    """
    params = mesh.params
    if params is None or len(mesh.exterior_nodes) == 0:
        raise ValueError("pressure synthesis needs a tagged mesh")
    xyz = mesh.nodes[mesh.exterior_nodes]
    x, y, z = xyz.T
    tol = 1e-9 * params.total_length
    phi = np.arctan2(z, y)
    th = params.cone_half_angle
    patch = np.where(x <= tol, 0, np.where(x <= params.nose_length + tol, 1, 2))
    n = np.zeros_like(xyz)
    n[patch == 0] = (-1.0, 0.0, 0.0)
    cone = patch == 1
    n[cone, 0] = -math.sin(th)
    n[cone, 1] = math.cos(th) * np.cos(phi[cone])
    n[cone, 2] = math.cos(th) * np.sin(phi[cone])
    cyl = patch == 2
    n[cyl, 1] = np.cos(phi[cyl])
    n[cyl, 2] = np.sin(phi[cyl])
    return n, patch, phi


def synth_pressure(mesh: Mesh, cond: FlightCondition, gen: GeneratorParams = GeneratorParams()):
    normals, patch, phi = _surface_normals(mesh)
    v = cond.freestream_direction()
    p_inf, q_inf = freestream(cond)
    impinge = np.maximum(0.0, -(normals @ v))
    p = p_inf + q_inf * gen.cp_max * impinge**2

    alpha_t = math.radians(cond.total_angle)
    if alpha_t > 0:
        lee = math.atan2(v[2], v[1])
        dphi = np.abs(np.angle(np.exp(1j * (phi - lee))))
        in_band = (patch == 2) & (dphi <= math.radians(gen.band_half_width_deg))
        p = p + np.where(in_band, gen.band_coefficient * q_inf * math.sin(alpha_t), 0.0)
    return PressureField(p, cond)


@dataclass
class SnapshotSet:
    matrix: np.ndarray                  # (n_p, N), one column per snapshot
    conditions: list = field(default_factory=list)
    generator: GeneratorParams | None = None

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.matrix.ndim != 2:
            raise ValueError("snapshot matrix must be 2-D (n_p x N)")
        if self.conditions and len(self.conditions) != self.matrix.shape[1]:
            raise ValueError("one flight condition per snapshot column required")

    @classmethod
    def from_fields(cls, fields):
        vals = [f.values if isinstance(f, PressureField) else np.asarray(f, float) for f in fields]
        if len({len(v) for v in vals}) > 1:
            raise ValueError("snapshots must share n_p")
        conds = [f.condition for f in fields if isinstance(f, PressureField)]
        conds = conds if conds and all(c is not None for c in conds) else []
        return cls(np.column_stack(vals), conds)

    @property
    def n_p(self) -> int:
        return self.matrix.shape[0]

    @property
    def N(self) -> int:
        return self.matrix.shape[1]

    @property
    def fields(self):
        conds = self.conditions or [None] * self.N
        return [PressureField(self.matrix[:, j], c) for j, c in enumerate(conds)]

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.matrix.T, dtype="<f8").tobytes()).hexdigest()


def condition_grid(machs, alphas, betas, altitude=20000.0):
    """Cartesian product in lexicographic (M, alpha, beta) order."""
    return [FlightCondition(float(m), float(a), float(b), float(altitude))
            for m, a, b in itertools.product(machs, alphas, betas)]


def database_snapshots(mesh, machs, alphas, betas, altitude=20000.0,
                       gen: GeneratorParams = GeneratorParams()) -> SnapshotSet:
    conds = condition_grid(machs, alphas, betas, altitude)
    if not conds:
        raise ValueError("empty condition grid")
    cols = [synth_pressure(mesh, c, gen).values for c in conds]
    return SnapshotSet(np.column_stack(cols), conds, gen)


def save_snapshots(directory, snaps: SnapshotSet):
    """JSON manifest plus a column-major little-endian float64 matrix."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(snaps.matrix.T, dtype="<f8").tobytes()
    manifest = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_FORMAT_VERSION,
        "n_p": snaps.n_p,
        "N": snaps.N,
        "layout": "column-major float64 little-endian, n_p x N",
        "ordering": "lexicographic (mach, alpha, beta)",
        "generator": asdict(snaps.generator) if snaps.generator else None,
        "conditions": [asdict(c) for c in snaps.conditions],
        "data_file": "snapshots.bin",
        "sha256": hashlib.sha256(data).hexdigest(),
    }
    atomic_write(directory / "snapshots.bin", data)
    atomic_write(directory / "manifest.json",
                 (json.dumps(manifest, indent=1, sort_keys=True) + "\n").encode())


def load_snapshots(directory) -> SnapshotSet:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != SNAPSHOT_FORMAT or manifest.get("version") != SNAPSHOT_FORMAT_VERSION:
        raise ValueError(f"{directory}: unsupported snapshot format")
    data = (directory / manifest["data_file"]).read_bytes()
    if hashlib.sha256(data).hexdigest() != manifest["sha256"]:
        raise ContainerError(f"{directory}: snapshot data checksum mismatch")
    mat = np.frombuffer(data, dtype="<f8").reshape(manifest["N"], manifest["n_p"]).T.copy()
    gen = GeneratorParams(**manifest["generator"]) if manifest["generator"] else None
    return SnapshotSet(mat, [FlightCondition(**c) for c in manifest["conditions"]], gen)
