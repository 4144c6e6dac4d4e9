import itertools
from pathlib import Path
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pytest
import scipy.sparse as sp

from strainload.cli import main
from strainload.fem import Material, StructuralOperators, assemble_p2o, assemble_strain_observer, build_operators
from strainload.geometry import GeometryParams, SensorConfig, build_shell_mesh, place_sensors
from strainload.noise import NoiseModel, calibrate_sigma
from strainload.pressure import database_snapshots
from strainload.reduction import compute_pod, compute_prior

P1_GRID = ([5.0, 5.5, 6.0, 6.5, 7.0], [0.0, 2.0, 4.0, 6.0, 8.0, 10.0], [0.0, 5.0, 10.0])
P2_GRID = ([5.0, 6.0, 7.0], list(np.arange(-8.0, 9.0, 2.0)), list(np.arange(-8.0, 9.0, 2.0)))
DESK_EDGE = 0.03
CONFIGS = Path(__file__).resolve().parents[1] / "configs"
COARSE_EDGE = 0.08


def box_mesh(nx, ny, nz, size=(1.0, 1.0, 1.0)):
    """Structured box split into six tets per cell (Kuhn triangulation).

    Returns nodes (n, 3) and positively oriented tets (m, 4).
    """
    xs = [np.linspace(0, s, n + 1) for s, n in zip(size, (nx, ny, nz))]
    nodes = np.array(list(itertools.product(*xs)))
    idx = np.arange(len(nodes)).reshape(nx + 1, ny + 1, nz + 1)
    tets = []
    for i, j, k in itertools.product(range(nx), range(ny), range(nz)):
        for perm in itertools.permutations(range(3)):
            path = [np.array([i, j, k])]
            for axis in perm:
                step = path[-1].copy()
                step[axis] += 1
                path.append(step)
            tets.append([idx[tuple(p)] for p in path])
    tets = np.array(tets)
    a, b, c, d = (nodes[tets[:, m]] for m in range(4))
    vol = np.einsum("ij,ij->i", np.cross(b - a, c - a), d - a)
    tets[vol < 0] = tets[vol < 0][:, [1, 0, 2, 3]]
    return nodes, tets


@dataclass
class Model:
    """A mesh with both sensor layouts, operators and snapshot-derived objects."""

    edge: float

    @cached_property
    def params(self):
        return GeometryParams(target_edge_length=self.edge)

    @cached_property
    def mesh(self):
        return build_shell_mesh(self.params)

    @cached_property
    def material(self):
        return Material()

    @cached_property
    def sensors(self):
        return place_sensors(self.mesh, SensorConfig.CONFIG2)

    @cached_property
    def sensors1(self):
        return place_sensors(self.mesh, SensorConfig.CONFIG1)

    @cached_property
    def ops(self) -> StructuralOperators:
        return build_operators(self.mesh, self.material, self.sensors)

    @cached_property
    def ops1(self) -> StructuralOperators:
        ops = StructuralOperators(self.ops.A, assemble_strain_observer(self.mesh, self.sensors1),
                                  self.ops.C_map, self.ops.fixed_dofs)
        ops.__dict__["factor"] = self.ops.factor     # same stiffness, reuse its factorization
        return ops

    @cached_property
    def Z(self):
        return assemble_p2o(self.ops, self.ops.C_map)

    @cached_property
    def Z1(self):
        return assemble_p2o(self.ops1, self.ops1.C_map)

    @cached_property
    def P1(self):
        return database_snapshots(self.mesh, *P1_GRID)

    @cached_property
    def P2(self):
        return database_snapshots(self.mesh, *P2_GRID)

    @cached_property
    def pod(self):
        return compute_pod(self.P1, energy=0.999)

    @cached_property
    def prior(self):
        return compute_prior(self.P2)

    @cached_property
    def sigma(self):
        return calibrate_sigma(self.Z @ self.P1.matrix, 0.01)

    @cached_property
    def noise(self):
        return NoiseModel(self.sigma, self.ops.n_d)


@pytest.fixture(scope="session")
def coarse():
    return Model(COARSE_EDGE)


@pytest.fixture(scope="session")
def desk():
    return Model(DESK_EDGE)


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    """Output directory of a complete desk pipeline run (latency study skipped)."""
    out = tmp_path_factory.mktemp("desk") / "run"
    assert main(["run", "--config", str(CONFIGS / "desk.yaml"), "--out", str(out),
                 "--skip-latency"]) == 0
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def identity_operators(n):
    I = sp.identity(n, format="csr")
    return StructuralOperators(A=I, B=I, C_map=I, fixed_dofs=np.zeros(0, dtype=np.int64))
