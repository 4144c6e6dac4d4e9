"""Hollow shell geometry, structured tetrahedral meshing, boundary tags and
strain-sensor placement.

The body is a closed, thin-walled shell of revolution about the x axis:

* a blunted conical nose running from the flat front face at ``x = 0`` to the
  nose/body junction at ``x = nose_length``,
* a cylindrical body from the junction to the aft face at
  ``x = nose_length + body_length``,
* front and aft bulkheads of thickness ``wall_thickness`` that close the
  internal cavity.

The aft face is the clamped (Dirichlet) surface. Cross-sections are meshed once
in a reference disk (an annular wall band around a ring-triangulated core) and
extruded along x into prisms, each split into three tetrahedra with the
minimum-global-index diagonal rule so that shared faces always conform.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .artifacts import atomic_write

EXTERIOR, INTERIOR, AFT = 0, 1, 2
TAG_NAMES = ("exterior", "interior", "aft")

MESH_FORMAT = "strainload-mesh"
MESH_FORMAT_VERSION = 1


class GeometryError(ValueError):
    """Invalid geometry parameters or a mesh that fails a structural check."""


class SensorConfig(enum.Enum):
    CONFIG1 = "config1"
    CONFIG2 = "config2"


@dataclass(frozen=True)
class GeometryParams:
    body_length: float = 3.0
    nose_length: float = 1.0
    outer_radius: float = 0.25
    wall_thickness: float = 0.02
    target_edge_length: float = 0.03
    # Radius of the flat front face of the blunted cone.
    nose_radius: float = 0.06
    min_dihedral_deg: float = 10.0

    def __post_init__(self):
        for name in ("body_length", "nose_length", "outer_radius",
                     "wall_thickness", "target_edge_length", "nose_radius"):
            if not getattr(self, name) > 0:
                raise GeometryError(f"{name} must be positive, got {getattr(self, name)}")
        if self.wall_thickness >= self.outer_radius:
            raise GeometryError("wall_thickness must be smaller than outer_radius")
        if self.nose_radius >= self.outer_radius:
            raise GeometryError("nose_radius must be smaller than outer_radius")
        if 2 * self.wall_thickness >= self.body_length:
            raise GeometryError("body_length too short for the aft bulkhead")
        if self.wall_thickness >= self.nose_length:
            raise GeometryError("nose_length too short for the front bulkhead")
        if self.cavity_radius(self.wall_thickness) <= 0:
            raise GeometryError("nose too slender: cavity closes before the front bulkhead")

    @property
    def total_length(self) -> float:
        return self.nose_length + self.body_length

    @property
    def cone_half_angle(self) -> float:
        return math.atan2(self.outer_radius - self.nose_radius, self.nose_length)

    def outer_profile(self, x):
        """Outer radius of the body at axial station(s) ``x``."""
        x = np.asarray(x, dtype=float)
        slope = (self.outer_radius - self.nose_radius) / self.nose_length
        return np.where(x < self.nose_length, self.nose_radius + slope * x, self.outer_radius)

    def cavity_radius(self, x):
        """Radius of the internal cavity (outer radius minus the radial wall)."""
        return self.outer_profile(x) - self.wall_thickness

    def core_radius(self, x):
        """Radius of the meshed core disk; equals the cavity radius where hollow."""
        x = np.asarray(x, dtype=float)
        t = self.wall_thickness
        ratio = float(self.cavity_radius(t) / self.outer_profile(t))
        return np.where(x < t, ratio * self.outer_profile(x), self.cavity_radius(x))

    def analytic_volume(self) -> float:
        """Exact volume of the solid (outer solid of revolution minus cavity)."""
        t, ln, length = self.wall_thickness, self.nose_length, self.total_length
        r0, r1 = self.nose_radius, self.outer_radius
        outer = _frustum(ln, r0, r1) + math.pi * r1**2 * (length - ln)
        rc0 = float(self.cavity_radius(t))
        cavity = _frustum(ln - t, rc0, r1 - t) + math.pi * (r1 - t) ** 2 * (length - t - ln)
        return outer - cavity


def _frustum(h, r0, r1):
    return math.pi * h * (r0 * r0 + r0 * r1 + r1 * r1) / 3.0


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray          # (n, 3) float, meters
    tets: np.ndarray           # (m, 4) int, positively oriented
    surface_tris: np.ndarray   # (k, 3) int, outward oriented
    tri_tags: np.ndarray       # (k,) int in {EXTERIOR, INTERIOR, AFT}
    tri_owner: np.ndarray      # (k,) int, tet owning each boundary face
    exterior_nodes: np.ndarray  # (n_p,) sorted node indices carrying pressure DOFs
    params: GeometryParams | None = None

    def __post_init__(self):
        for name in ("nodes", "tets", "surface_tris", "tri_tags", "tri_owner", "exterior_nodes"):
            getattr(self, name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dofs(self) -> int:
        return 3 * len(self.nodes)

    @property
    def n_pressure(self) -> int:
        return len(self.exterior_nodes)

    def tris_with_tag(self, *tags) -> np.ndarray:
        mask = np.isin(self.tri_tags, [_tag_code(t) for t in tags])
        return self.surface_tris[mask]

    def tagged_nodes(self, tag) -> np.ndarray:
        return np.unique(self.tris_with_tag(tag))

    def tet_volumes(self) -> np.ndarray:
        return tet_volumes(self.nodes, self.tets)


def _tag_code(tag) -> int:
    if isinstance(tag, str):
        return TAG_NAMES.index(tag)
    return int(tag)


def tet_volumes(nodes, tets):
    p = nodes[tets]
    e1, e2, e3 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", e1, np.cross(e2, e3)) / 6.0


def min_dihedral_angles(nodes, tets):
    """Smallest interior dihedral angle (radians) of every tetrahedron."""
    p = nodes[tets]
    normals = []
    for k in range(4):
        a, b, c = (i for i in range(4) if i != k)
        n = np.cross(p[:, b] - p[:, a], p[:, c] - p[:, a])
        # Point away from the opposite vertex.
        sign = np.sign(np.einsum("ij,ij->i", n, p[:, k] - p[:, a]))
        n = -sign[:, None] * n
        normals.append(n / np.linalg.norm(n, axis=1, keepdims=True))
    worst = np.full(len(tets), np.pi)
    for i in range(4):
        for j in range(i + 1, 4):
            cos = np.einsum("ij,ij->i", normals[i], normals[j])
            worst = np.minimum(worst, np.pi - np.arccos(np.clip(cos, -1.0, 1.0)))
    return worst


# Cross-section reference mesh ================================================

@dataclass
class _Section:
    rho: np.ndarray       # normalized radius in the core (<= 1) or wall fraction
    phi: np.ndarray       # angle
    is_wall: np.ndarray   # node lies in the wall band (rho = wall fraction)
    tris: np.ndarray      # (k, 3) reference triangles, CCW in (y, z)
    wall_tri: np.ndarray  # triangle belongs to the wall band


def _ring_count(n_phi, frac):
    return max(4, 4 * int(round(n_phi * frac / 4)))


def _zipper(inner, outer, n_in, n_out):
    """Triangulate the band between two concentric rings that start at angle 0."""
    tris = []
    i = j = 0
    while i < n_in or j < n_out:
        ang_i = (i + 1) / n_in if i < n_in else np.inf
        ang_j = (j + 1) / n_out if j < n_out else np.inf
        if ang_i <= ang_j:
            tris.append((inner[i % n_in], inner[(i + 1) % n_in], outer[j % n_out]))
            i += 1
        else:
            tris.append((inner[i % n_in], outer[(j + 1) % n_out], outer[j % n_out]))
            j += 1
    return tris


def _reference_section(params: GeometryParams) -> _Section:
    h = params.target_edge_length
    r, t = params.outer_radius, params.wall_thickness
    n_phi = _n_phi(params)
    n_layers = max(1, int(round(t / h)))
    n_core = max(1, int(round((r - t) / h)))

    rho, phi, is_wall = [0.0], [0.0], [False]
    rings = []
    for m in range(1, n_core):
        count = _ring_count(n_phi, m / n_core)
        start = len(rho)
        for j in range(count):
            rho.append(m / n_core)
            phi.append(2 * math.pi * j / count)
            is_wall.append(False)
        rings.append((list(range(start, start + count)), count))
    wall_rings = []
    for k in range(n_layers + 1):
        start = len(rho)
        for j in range(n_phi):
            rho.append(k / n_layers)
            phi.append(2 * math.pi * j / n_phi)
            is_wall.append(True)
        wall_rings.append((list(range(start, start + n_phi)), n_phi))

    tris, wall_flags = [], []
    first, first_count = rings[0] if rings else wall_rings[0]
    for j in range(first_count):
        tris.append((0, first[j], first[(j + 1) % first_count]))
        wall_flags.append(False)
    core_rings = rings + [wall_rings[0]]
    for (a, na), (b, nb) in zip(core_rings[:-1], core_rings[1:]):
        band = _zipper(a, b, na, nb)
        tris.extend(band)
        wall_flags.extend([False] * len(band))
    for (a, na), (b, nb) in zip(wall_rings[:-1], wall_rings[1:]):
        band = _zipper(a, b, na, nb)
        tris.extend(band)
        wall_flags.extend([True] * len(band))

    sec = _Section(np.array(rho), np.array(phi), np.array(is_wall, dtype=bool),
                   np.array(tris, dtype=np.int64), np.array(wall_flags, dtype=bool))
    # Orient every reference triangle counter-clockwise in the unit disk.
    ref = _section_coords(sec, 1.0, 2.0)
    a, b, c = ref[sec.tris[:, 0]], ref[sec.tris[:, 1]], ref[sec.tris[:, 2]]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flip = area < 0
    sec.tris[flip] = sec.tris[flip][:, [0, 2, 1]]
    return sec


def _section_coords(sec: _Section, core_r, outer_r):
    radius = np.where(sec.is_wall, core_r + sec.rho * (outer_r - core_r), sec.rho * core_r)
    return np.column_stack([radius * np.cos(sec.phi), radius * np.sin(sec.phi)])


def _n_phi(params: GeometryParams) -> int:
    h = params.target_edge_length
    return max(8, 4 * int(round(2 * math.pi * params.outer_radius / (4 * h))))


def _graded(params: GeometryParams, lo, hi, n_phi, aspect):
    """Stations with axial steps capped at ``aspect`` times the local
    circumferential spacing of the core ring, so tets near the blunt tip stay
    well shaped."""
    h = params.target_edge_length
    xs = [lo]
    while xs[-1] < hi:
        x = xs[-1]
        step = min(h, aspect * 2 * math.pi * float(params.core_radius(x)) / n_phi)
        xs.append(x + step)
    n = len(xs) - 1
    xs = np.array(xs)
    # Stretch the marched stations so the last lands exactly on ``hi``.
    return lo + (xs[1:] - lo) * (hi - lo) / (xs[-1] - lo) if n > 0 else np.array([hi])


def _stations(params: GeometryParams, aspect: float = 1.5):
    h, t = params.target_edge_length, params.wall_thickness
    ln, length = params.nose_length, params.total_length
    n_phi = _n_phi(params)
    breaks = [0.0, t, ln, length - t, length]
    xs, solid = [0.0], []
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        if hi <= ln:
            seg = _graded(params, lo, hi, n_phi, aspect)
        else:
            n = max(1, int(round((hi - lo) / h)))
            seg = lo + (hi - lo) * np.arange(1, n + 1) / n
        xs.extend(seg)
        is_plate = lo == 0.0 or hi == length
        solid.extend([is_plate] * len(seg))
    xs = np.array(xs)
    xs[-1] = length
    return xs, np.array(solid, dtype=bool)


# Prism split with the minimum-index rule; local vertex 0 holds the minimum.
def _split_prism(bottom, top):
    """Split prisms (bottom[i], top[i]) into 3 tets each.

    Global numbering is station-major, so the minimum vertex of a prism is
    always on its bottom triangle.
    """
    order = np.argsort(bottom, axis=1)
    # Rotate so the minimum bottom vertex comes first while keeping the cycle.
    first = order[:, 0]
    idx = (first[:, None] + np.arange(3)[None, :]) % 3
    b = np.take_along_axis(bottom, idx, axis=1)
    tp = np.take_along_axis(top, idx, axis=1)
    v0, v1, v2 = b.T
    v3, v4, v5 = tp.T
    case = v1 < v2
    tets = np.empty((len(b), 3, 4), dtype=np.int64)
    tets[case, 0] = np.column_stack([v0, v1, v2, v5])[case]
    tets[case, 1] = np.column_stack([v0, v1, v5, v4])[case]
    tets[~case, 0] = np.column_stack([v0, v1, v2, v4])[~case]
    tets[~case, 1] = np.column_stack([v0, v4, v2, v5])[~case]
    tets[:, 2] = np.column_stack([v0, v4, v5, v3])
    return tets.reshape(-1, 4)


def build_shell_mesh(params: GeometryParams) -> Mesh:
    """Mesh the hollow shell, extract and tag its boundary, and check quality."""
    if not isinstance(params, GeometryParams):
        raise GeometryError("params must be GeometryParams")
    sec = _reference_section(params)
    xs, solid = _stations(params)
    n_ref = len(sec.rho)

    # Which reference nodes exist at each station.
    need = np.zeros((len(xs), n_ref), dtype=bool)
    wall_nodes = np.unique(sec.tris[sec.wall_tri])
    for i, plate in enumerate(solid):
        used = np.unique(sec.tris) if plate else wall_nodes
        need[i, used] = True
        need[i + 1, used] = True
    gid = np.full(need.shape, -1, dtype=np.int64)
    gid[need] = np.arange(need.sum())

    coords = []
    for i, x in enumerate(xs):
        yz = _section_coords(sec, float(params.core_radius(x)), float(params.outer_profile(x)))
        sel = need[i]
        coords.append(np.column_stack([np.full(sel.sum(), x), yz[sel]]))
    nodes = np.vstack(coords)

    tets = []
    for i, plate in enumerate(solid):
        tris = sec.tris if plate else sec.tris[sec.wall_tri]
        tets.append(_split_prism(gid[i][tris], gid[i + 1][tris]))
    tets = np.vstack(tets)

    vol = tet_volumes(nodes, tets)
    if np.any(vol == 0):
        raise GeometryError("degenerate tetrahedron generated")
    neg = vol < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]

    mesh = Mesh(nodes=nodes, tets=tets, surface_tris=np.empty((0, 3), np.int64),
                tri_tags=np.empty(0, np.int64), tri_owner=np.empty(0, np.int64),
                exterior_nodes=np.empty(0, np.int64), params=params)
    mesh = tag_boundaries(mesh, params)

    worst = np.degrees(min_dihedral_angles(mesh.nodes, mesh.tets).min())
    if worst < params.min_dihedral_deg:
        raise GeometryError(
            f"minimum dihedral angle {worst:.2f} deg below floor {params.min_dihedral_deg}")
    return mesh


def boundary_faces(tets):
    """Faces used by exactly one tet, oriented outward, with their owner."""
    local = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])
    faces = tets[:, local].reshape(-1, 3)
    owner = np.repeat(np.arange(len(tets)), 4)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    once = counts[inverse.ravel()] == 1
    return faces[once], owner[once]


def _segment_distance(px, pr, a, b):
    """Distance from meridional points (px, pr) to the segment a-b in (x, r)."""
    ax, ar = a
    bx, br = b
    dx, dr = bx - ax, br - ar
    s = np.clip(((px - ax) * dx + (pr - ar) * dr) / (dx * dx + dr * dr), 0.0, 1.0)
    return np.hypot(px - ax - s * dx, pr - ar - s * dr)


def _polyline_distance(px, pr, pts):
    d = np.full(np.shape(px), np.inf)
    for a, b in zip(pts[:-1], pts[1:]):
        d = np.minimum(d, _segment_distance(px, pr, a, b))
    return d


def tag_boundaries(mesh: Mesh, params: GeometryParams) -> Mesh:
    """Extract boundary triangles and tag them by distance to the analytic surfaces."""
    tris, owner = boundary_faces(mesh.tets)
    # Deterministic order independent of np.unique internals.
    order = np.lexsort(np.sort(tris, axis=1).T[::-1])
    tris, owner = tris[order], owner[order]

    t, ln, length = params.wall_thickness, params.nose_length, params.total_length
    r1 = params.outer_radius
    exterior = [(0.0, 0.0), (0.0, params.nose_radius), (ln, r1), (length, r1)]
    aft = [(length, r1), (length, 0.0)]
    rc0 = float(params.cavity_radius(t))
    interior = [(t, 0.0), (t, rc0), (ln, r1 - t), (length - t, r1 - t), (length - t, 0.0)]
    surfaces = (exterior, interior, aft)

    # Vertices lie on the analytic surfaces; a triangle belongs to the surface
    # holding all three of its vertices. Centroids are unreliable on coarse
    # meshes where the facet sag approaches half the wall thickness.
    px, pr = mesh.nodes[:, 0], np.hypot(mesh.nodes[:, 1], mesh.nodes[:, 2])
    node_dist = np.column_stack([_polyline_distance(px, pr, s) for s in surfaces])
    worst = node_dist[tris].max(axis=1)                      # (n_tris, 3 surfaces)
    c = mesh.nodes[tris].mean(axis=1)
    cx, cr = c[:, 0], np.hypot(c[:, 1], c[:, 2])
    centroid = np.column_stack([_polyline_distance(cx, cr, s) for s in surfaces])
    tol = 1e-6 * length
    candidates = worst <= tol
    if not np.all(candidates.any(axis=1)):
        i = int(np.flatnonzero(~candidates.any(axis=1))[0])
        raise GeometryError(f"boundary triangle {i} at centroid {c[i]} matches no surface")
    tags = np.argmin(np.where(candidates, centroid, np.inf), axis=1)
    ext_nodes = np.unique(tris[tags == EXTERIOR])
    return Mesh(nodes=np.array(mesh.nodes), tets=np.array(mesh.tets), surface_tris=tris,
                tri_tags=tags.astype(np.int64), tri_owner=owner, exterior_nodes=ext_nodes,
                params=params)


# Sensors ======================================================================

@dataclass(frozen=True)
class SensorSpec:
    position: tuple
    direction: tuple
    kind: str  # "axial" | "circumferential"
    element: int

    def __post_init__(self):
        if self.kind not in ("axial", "circumferential"):
            raise GeometryError(f"unknown sensor kind {self.kind!r}")
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise GeometryError("sensor direction must be a unit vector")


def _closest_point_on_triangle(p, a, b, c):
    # Ericson, Real-Time Collision Detection, 5.1.5.
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + d1 / (d1 - d3) * ab
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + d2 / (d2 - d6) * ac
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b)
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)


def sensor_stations(params: GeometryParams, count: int = 9):
    """Nine evenly spaced axial stations over the cylindrical body."""
    lb = params.body_length
    return params.nose_length + lb * np.arange(1, count + 1) / (count + 1)


def _ideal_layout(params: GeometryParams, config: SensorConfig):
    rc = params.outer_radius - params.wall_thickness
    layout = []
    for x in sensor_stations(params):
        layout.append(((x, 0.0, rc), "axial"))
        layout.append(((x, 0.0, rc), "circumferential"))
    for x in sensor_stations(params):
        layout.append(((x, rc, 0.0), "axial"))
    if config is SensorConfig.CONFIG2:
        mirrored = []
        for (x, y, z), kind in layout:
            # xz-plane rows reflect across the xy-plane; xy-plane rows across xz.
            mirrored.append(((x, y, -z) if y == 0.0 else (x, -y, z), kind))
        layout += mirrored
    return layout


def place_sensors(mesh: Mesh, config) -> list:
    """Place Config1 (27) or Config2 (54) gauges on the interior surface."""
    config = SensorConfig(config) if not isinstance(config, SensorConfig) else config
    params = mesh.params
    if params is None or len(mesh.surface_tris) == 0:
        raise GeometryError("mesh must be tagged before placing sensors")
    mask = mesh.tri_tags == INTERIOR
    tris, owners = mesh.surface_tris[mask], mesh.tri_owner[mask]
    centroids = mesh.nodes[tris].mean(axis=1)
    tol = 0.5 * params.target_edge_length

    sensors = []
    for ideal, kind in _ideal_layout(params, config):
        p = np.array(ideal)
        near = np.argsort(np.linalg.norm(centroids - p, axis=1), kind="stable")[:24]
        best, best_d, best_q = -1, np.inf, None
        for k in near:
            a, b, c = mesh.nodes[tris[k]]
            q = _closest_point_on_triangle(p, a, b, c)
            d = np.linalg.norm(q - p)
            if d < best_d - 1e-15:
                best, best_d, best_q = k, d, q
        if best < 0 or best_d > tol:
            raise GeometryError(f"no interior element within {tol} m of sensor at {ideal}")
        if kind == "axial":
            direction = (1.0, 0.0, 0.0)
        else:
            y, z = best_q[1], best_q[2]
            rr = math.hypot(y, z)
            direction = (0.0, -z / rr, y / rr)
        sensors.append(SensorSpec(tuple(float(v) for v in best_q), direction, kind,
                                  int(owners[best])))
    return sensors


def save_sensors(path, sensors):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "x", "y", "z", "dx", "dy", "dz", "kind", "element"])
    for i, s in enumerate(sensors):
        w.writerow([i, *(repr(float(v)) for v in s.position),
                    *(repr(float(v)) for v in s.direction), s.kind, s.element])
    atomic_write(path, buf.getvalue().encode())


def load_sensors(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [SensorSpec((float(r["x"]), float(r["y"]), float(r["z"])),
                       (float(r["dx"]), float(r["dy"]), float(r["dz"])),
                       r["kind"], int(r["element"])) for r in rows]


# Plain-text mesh format ======================================================

def save_mesh(path, mesh: Mesh):
    """Write the versioned plain-text mesh format."""
    lines = [f"{MESH_FORMAT} {MESH_FORMAT_VERSION} {mesh.n_nodes} {len(mesh.tets)} "
             f"{len(mesh.surface_tris)}"]
    if mesh.params is not None:
        p = mesh.params
        lines.append("params " + " ".join(
            f"{k}={getattr(p, k)!r}" for k in p.__dataclass_fields__))
    else:
        lines.append("params")
    lines.append("nodes")
    lines += [f"{i} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.nodes.tolist())]
    lines.append("tets")
    lines += [f"{i} {a} {b} {c} {d}" for i, (a, b, c, d) in enumerate(mesh.tets.tolist())]
    lines.append("triangles")
    lines += [f"{i} {a} {b} {c} {TAG_NAMES[g]} {o}" for i, ((a, b, c), g, o) in enumerate(
        zip(mesh.surface_tris.tolist(), mesh.tri_tags.tolist(), mesh.tri_owner.tolist()))]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def load_mesh(path) -> Mesh:
    text = Path(path).read_text().splitlines()
    head = text[0].split()
    if head[0] != MESH_FORMAT:
        raise GeometryError(f"{path}: not a mesh file")
    if int(head[1]) != MESH_FORMAT_VERSION:
        raise GeometryError(f"{path}: unsupported mesh format version {head[1]}")
    n_nodes, n_tets, n_tris = map(int, head[2:5])
    params = None
    kv = text[1].split()[1:]
    if kv:
        params = GeometryParams(**{k: float(v) for k, v in (s.split("=") for s in kv)})
    pos = 3
    nodes = np.array([[float(v) for v in ln.split()[1:]] for ln in text[pos:pos + n_nodes]])
    pos += n_nodes + 1
    tets = np.array([[int(v) for v in ln.split()[1:]] for ln in text[pos:pos + n_tets]],
                    dtype=np.int64).reshape(-1, 4)
    pos += n_tets + 1
    rows = [ln.split() for ln in text[pos:pos + n_tris]]
    tris = np.array([[int(v) for v in r[1:4]] for r in rows], dtype=np.int64).reshape(-1, 3)
    tags = np.array([TAG_NAMES.index(r[4]) for r in rows], dtype=np.int64)
    owner = np.array([int(r[5]) for r in rows], dtype=np.int64)
    return Mesh(nodes=nodes, tets=tets, surface_tris=tris, tri_tags=tags, tri_owner=owner,
                exterior_nodes=np.unique(tris[tags == EXTERIOR]), params=params)
