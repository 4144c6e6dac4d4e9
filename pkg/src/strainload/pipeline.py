"""Stage-by-stage batch pipeline with digest-chained manifests.

Every stage writes its outputs under the run directory and a manifest
``manifests/<stage>.json`` recording

* the sha256 of each output file,
* the digest of the configuration sections the stage reads,
* the sha256 of each upstream manifest it consumed.

Before a stage runs, the whole upstream chain is verified: a missing
manifest, an edited or corrupted output, a changed configuration section or
an upstream stage rebuilt since its consumers ran all raise
``StaleArtifactError``. Manifests carry no timestamps so reruns are
byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .artifacts import atomic_write, file_digest, load_container, save_container
from .config import PipelineConfig
from .estimator import (HessianSpectrum, InverseMap, MisfitCurve, PosteriorCovariance,
                        build_case1, build_case2, preconditioned_hessian_eigs,
                        preset_condition_number, select_gamma_morozov)
from .fem import StructuralOperators, assemble_p2o, build_operators
from .geometry import (SensorConfig, build_shell_mesh, load_mesh, load_sensors, place_sensors,
                       save_mesh, save_sensors)
from .noise import NoiseModel, calibrate_sigma, sample_noise
from .pressure import database_snapshots, load_snapshots, save_snapshots
from .reduction import PodBasis, PriorModel, compute_pod, compute_prior

MANIFEST_FORMAT = "strainload-manifest"
MANIFEST_VERSION = 1

# Independent noise-stream families; the run seed is combined with one of these.
STREAM_CASE1 = 1
STREAM_CASE2 = 2
STREAM_MOROZOV = 3
STREAM_VALIDATION = 4
STREAM_LATENCY = 5


class StaleArtifactError(RuntimeError):
    pass


@dataclass(frozen=True)
class Stage:
    deps: tuple
    sections: tuple


STAGES = {
    "mesh": Stage((), ("geometry", "sensors")),
    "assemble": Stage(("mesh",), ("material",)),
    "snapshot": Stage(("mesh",), ("generator", "snapshots")),
    "pod": Stage(("snapshot",), ("pod",)),
    "prior": Stage(("snapshot",), ()),
    "build": Stage(("assemble", "snapshot", "pod"), ("noise",)),
    "eigs": Stage(("build", "prior"), ()),
    "morozov": Stage(("build", "prior", "eigs", "snapshot"), ("gamma", "seed")),
}
STAGE_ORDER = tuple(STAGES)


def seed_for(cfg: PipelineConfig, family: int):
    return [int(cfg.seed), family]


# --------------------------------------------------------------------------
# Serialization of numerical objects


def save_pod(path, basis: PodBasis, meta=None):
    return save_container(path, {"mean": basis.mean, "modes": basis.modes,
                                 "singular_values": basis.singular_values}, meta)


def load_pod(path) -> PodBasis:
    a, _ = load_container(path)
    return PodBasis(a["mean"], a["modes"], a["singular_values"])


def save_prior(path, prior: PriorModel, meta=None):
    return save_container(path, {"mean": prior.mean, "factor": prior.factor}, meta)


def load_prior(path) -> PriorModel:
    a, _ = load_container(path)
    return PriorModel(a["mean"], a["factor"])


def save_map(path, imap: InverseMap, meta=None):
    arrays = {"T": imap.T, "k": imap.k}
    cov = imap.covariance
    if cov.dense_matrix is not None:
        arrays["cov"] = cov.dense_matrix
    else:
        arrays["cov_factor"], arrays["cov_core"] = cov.factor, cov.core
    meta = dict(meta or {}, case=imap.case, gamma=imap.gamma, provenance=imap.provenance)
    return save_container(path, arrays, meta)


def load_map(path) -> InverseMap:
    a, meta = load_container(path)
    if "cov" in a:
        cov = PosteriorCovariance(dense_matrix=a["cov"])
    else:
        cov = PosteriorCovariance(factor=a["cov_factor"], core=a["cov_core"])
    return InverseMap(np.ascontiguousarray(a["T"]), a["k"], float(meta["gamma"]), meta["case"],
                      cov, meta.get("provenance", {}))


def save_spectrum(path, spec: HessianSpectrum, meta=None):
    return save_container(path, {"eigenvalues": spec.eigenvalues, "vectors": spec.vectors,
                                 "mean": spec.mean}, meta)


def load_spectrum(path) -> HessianSpectrum:
    a, _ = load_container(path)
    return HessianSpectrum(a["eigenvalues"], a["vectors"], a["mean"])


def csv_bytes(header, rows) -> bytes:
    """CSV with floats written by repr so values round-trip exactly."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue().encode()


def write_json(path, obj):
    atomic_write(path, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode())


# --------------------------------------------------------------------------
# Run directory


class Workspace:
    """A run directory bound to a configuration."""

    def __init__(self, cfg: PipelineConfig, out=None):
        self.cfg = cfg
        self.root = Path(out if out is not None else cfg.output_dir)
        self._verified: set = set()

    # paths -----------------------------------------------------------------
    def path(self, name) -> Path:
        return self.root / name

    def manifest_path(self, stage) -> Path:
        return self.root / "manifests" / f"{stage}.json"

    def report_path(self, name) -> Path:
        return self.root / "reports" / name

    # provenance --------------------------------------------------------------
    def _read_manifest(self, stage) -> dict:
        mp = self.manifest_path(stage)
        if not mp.exists():
            raise StaleArtifactError(
                f"missing artifact for stage '{stage}' in {self.root}; run `strainload {stage}`")
        return json.loads(mp.read_text())

    def verify(self, stage):
        """Check the manifest of ``stage`` and, recursively, its upstream chain."""
        if stage in self._verified:
            return
        spec = STAGES[stage]
        man = self._read_manifest(stage)
        if man.get("format") != MANIFEST_FORMAT or man.get("version") != MANIFEST_VERSION:
            raise StaleArtifactError(f"stage '{stage}': unsupported manifest schema")
        if man["config_digest"] != self.cfg.section_digest(*spec.sections):
            raise StaleArtifactError(
                f"stage '{stage}' was built with a different configuration "
                f"({', '.join(spec.sections) or 'no sections'}); rerun `strainload {stage}`")
        for rel, digest in man["outputs"].items():
            p = self.root / rel
            if not p.exists() or file_digest(p) != digest:
                raise StaleArtifactError(
                    f"stage '{stage}': output {rel} is missing or modified since it was built")
        for dep in spec.deps:
            self.verify(dep)
            if man["inputs"].get(dep) != file_digest(self.manifest_path(dep)):
                raise StaleArtifactError(
                    f"stage '{stage}' was built from a different '{dep}' artifact "
                    f"(mixed provenance); rerun `strainload {stage}`")
        self._verified.add(stage)

    def verify_inputs(self, deps):
        for dep in deps:
            self.verify(dep)
        return {dep: file_digest(self.manifest_path(dep)) for dep in deps}

    def record(self, stage, outputs, inputs, info=None, sections=None):
        sections = STAGES[stage].sections if sections is None else sections
        man = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "stage": stage,
            "config_digest": self.cfg.section_digest(*sections),
            "config_sections": list(sections),
            "inputs": inputs,
            "outputs": {rel: file_digest(self.root / rel) for rel in outputs},
            "info": info or {},
        }
        self.manifest_path(stage).parent.mkdir(parents=True, exist_ok=True)
        write_json(self.manifest_path(stage), man)
        self._verified.discard(stage)
        return man

    def info(self, stage) -> dict:
        return self._read_manifest(stage)["info"]

    # loaders ---------------------------------------------------------------
    @cached_property
    def mesh(self):
        return load_mesh(self.path("mesh.txt"))

    @cached_property
    def sensors(self):
        return load_sensors(self.path("sensors.csv"))

    @cached_property
    def operators(self) -> StructuralOperators:
        a, _ = load_container(self.path("operators.bin"))
        return StructuralOperators(A=a["A"], B=a["B"], C_map=a["C_map"], fixed_dofs=a["fixed_dofs"])

    @cached_property
    def pod_snapshots(self):
        return load_snapshots(self.path("snapshots/pod"))

    @cached_property
    def prior_snapshots(self):
        return load_snapshots(self.path("snapshots/prior"))

    @cached_property
    def pod(self) -> PodBasis:
        return load_pod(self.path("pod.bin"))

    @cached_property
    def prior(self) -> PriorModel:
        return load_prior(self.path("prior.bin"))

    @cached_property
    def p2o(self) -> dict:
        return load_container(self.path("p2o.bin"))[0]

    @cached_property
    def noise(self) -> NoiseModel:
        d = json.loads(self.path("noise.json").read_text())
        return NoiseModel(d["sigma"], d["n_d"])

    @cached_property
    def case1_map(self) -> InverseMap:
        return load_map(self.path("map_case1.bin"))

    @cached_property
    def case2_map(self) -> InverseMap:
        return load_map(self.path("map_case2.bin"))

    @cached_property
    def spectrum(self) -> HessianSpectrum:
        return load_spectrum(self.path("spectrum.bin"))


# --------------------------------------------------------------------------
# Stages


def cmd_mesh(ws: Workspace):
    cfg = ws.cfg
    ws.root.mkdir(parents=True, exist_ok=True)
    mesh = build_shell_mesh(cfg.geometry)
    sensors = place_sensors(mesh, SensorConfig(cfg.sensors))
    save_mesh(ws.path("mesh.txt"), mesh)
    save_sensors(ws.path("sensors.csv"), sensors)
    return ws.record("mesh", ["mesh.txt", "sensors.csv"], {},
                     {"n_nodes": mesh.n_nodes, "n_tets": len(mesh.tets), "n_dofs": mesh.n_dofs,
                      "n_p": mesh.n_pressure, "n_d": len(sensors)})


def cmd_assemble(ws: Workspace):
    inputs = ws.verify_inputs(STAGES["assemble"].deps)
    ops = build_operators(ws.mesh, ws.cfg.material, ws.sensors)
    ops.factor  # fail here, not downstream, if the stiffness matrix is not SPD
    save_container(ws.path("operators.bin"),
                   {"A": ops.A, "B": ops.B, "C_map": ops.C_map, "fixed_dofs": ops.fixed_dofs},
                   {"kind": "structural-operators", "n_s": ops.n_s, "n_d": ops.n_d, "n_p": ops.n_p,
                    "dof_order": "node-major (x, y, z)"})
    return ws.record("assemble", ["operators.bin"], inputs,
                     {"n_s": ops.n_s, "n_d": ops.n_d, "n_p": ops.n_p, "nnz_A": int(ops.A.nnz)})


def cmd_snapshot(ws: Workspace):
    inputs = ws.verify_inputs(STAGES["snapshot"].deps)
    cfg, outputs, info = ws.cfg, [], {}
    for name in ("pod", "prior"):
        grid = getattr(cfg.snapshots, name)
        snaps = database_snapshots(ws.mesh, grid.machs, grid.alphas, grid.betas, grid.altitude,
                                   cfg.generator)
        save_snapshots(ws.path(f"snapshots/{name}"), snaps)
        outputs += [f"snapshots/{name}/manifest.json", f"snapshots/{name}/snapshots.bin"]
        info[f"{name}_count"] = snaps.N
    return ws.record("snapshot", outputs, inputs, info)


def cmd_pod(ws: Workspace):
    inputs = ws.verify_inputs(STAGES["pod"].deps)
    snaps = ws.pod_snapshots
    basis = compute_pod(snaps, r=ws.cfg.pod.rank, energy=ws.cfg.pod.energy)
    energy = basis.energy()
    save_pod(ws.path("pod.bin"), basis, {"kind": "pod-basis", "r": basis.r,
                                         "source_snapshots": snaps.digest()})
    ws.path("reports").mkdir(exist_ok=True)
    atomic_write(ws.report_path("pod_energy.csv"),
                 csv_bytes(["mode", "singular_value", "cumulative_energy"],
                           [(i + 1, s, e) for i, (s, e) in enumerate(zip(basis.singular_values,
                                                                         energy))]))
    return ws.record("pod", ["pod.bin", "reports/pod_energy.csv"], inputs,
                     {"r": basis.r, "energy_retained": float(energy[basis.r - 1]) if basis.r else 0.0})


def cmd_prior(ws: Workspace):
    inputs = ws.verify_inputs(STAGES["prior"].deps)
    snaps = ws.prior_snapshots
    prior = compute_prior(snaps)
    save_prior(ws.path("prior.bin"), prior, {"kind": "snapshot-prior",
                                             "source_snapshots": snaps.digest()})
    return ws.record("prior", ["prior.bin"], inputs, {"N": prior.N, "n_q": prior.n_q})


def cmd_build(ws: Workspace):
    inputs = ws.verify_inputs(STAGES["build"].deps)
    ops, basis = ws.operators, ws.pod
    Z = assemble_p2o(ops, ops.C_map)
    Z_pod = Z @ basis.modes
    offset = Z @ basis.mean
    sigma = calibrate_sigma(Z @ ws.pod_snapshots.matrix, ws.cfg.noise.fraction)
    noise = NoiseModel(sigma, ops.n_d)
    save_container(ws.path("p2o.bin"), {"Z": Z, "Z_pod": Z_pod, "offset": offset},
                   {"kind": "parameter-to-observable", "route": "adjoint" if ops.n_d < ops.n_p
                    else "forward"})
    write_json(ws.path("noise.json"), {**noise.to_dict(), "fraction": ws.cfg.noise.fraction})
    imap = build_case1(Z_pod, noise, offset=offset,
                       provenance={"Z": file_digest(ws.path("p2o.bin")),
                                   "noise": noise.digest(), "pod": file_digest(ws.path("pod.bin"))})
    save_map(ws.path("map_case1.bin"), imap, {"sigma": sigma})
    cond = preset_condition_number(Z_pod)
    return ws.record("build", ["p2o.bin", "noise.json", "map_case1.bin"], inputs,
                     {"sigma": sigma, "n_d": ops.n_d, "n_q_case1": basis.r,
                      "relative_condition_number": cond.K, "kappa": cond.kappa})


def cmd_eigs(ws: Workspace):
    inputs = ws.verify_inputs(STAGES["eigs"].deps)
    spec = preconditioned_hessian_eigs(ws.p2o["Z"], ws.noise, ws.prior)
    save_spectrum(ws.path("spectrum.bin"), spec, {"kind": "hessian-spectrum"})
    ws.path("reports").mkdir(exist_ok=True)
    lam = spec.eigenvalues
    atomic_write(ws.report_path("eigenvalues.csv"),
                 csv_bytes(["k", "eigenvalue", "relative"],
                           [(i + 1, v, v / lam[0]) for i, v in enumerate(lam)]))
    return ws.record("eigs", ["spectrum.bin", "reports/eigenvalues.csv"], inputs,
                     {"count": spec.count,
                      "decay_orders": float(np.log10(lam[0] / lam[-1])) if spec.count else 0.0})


def noisy_measurements(ws: Workspace, family: int, count: int):
    """Strains of the POD-set conditions, cycled, each with its own noise stream."""
    Z, snaps, noise = ws.p2o["Z"], ws.pod_snapshots, ws.noise
    clean = Z @ snaps.matrix
    seed = seed_for(ws.cfg, family)
    return np.array([clean[:, i % snaps.N] + sample_noise(noise, seed, i % snaps.N, i)
                     for i in range(count)])


def cmd_morozov(ws: Workspace):
    inputs = ws.verify_inputs(STAGES["morozov"].deps)
    g = ws.cfg.gamma
    Z, noise, prior = ws.p2o["Z"], ws.noise, ws.prior
    lam1 = float(ws.spectrum.eigenvalues[0])
    info = {"policy": g.policy, "lambda_1": lam1, "delta": noise.delta}
    if g.policy == "fixed":
        gamma = float(g.value)
    else:
        calib = noisy_measurements(ws, STREAM_MOROZOV, g.calibration_size)
        res = select_gamma_morozov(Z, noise, prior, calib, bracket=g.bracket, scale=lam1,
                                   rtol=g.rtol)
        gamma = res.gamma
        info.update(iterations=res.iterations, calibration_misfit=res.misfit,
                    history=[list(h) for h in res.history])
    valid = noisy_measurements(ws, STREAM_VALIDATION, g.validation_size)
    info["validation_misfit_ratio"] = MisfitCurve(Z, noise, prior, valid).median(gamma) / noise.delta
    info["gamma"] = gamma
    write_json(ws.path("gamma.json"), info)
    imap = build_case2(Z, noise, prior, gamma,
                       provenance={"Z": file_digest(ws.path("p2o.bin")), "noise": noise.digest(),
                                   "prior": file_digest(ws.path("prior.bin"))})
    save_map(ws.path("map_case2.bin"), imap, {"sigma": noise.sigma})
    return ws.record("morozov", ["gamma.json", "map_case2.bin"], inputs,
                     {"gamma": gamma, "validation_misfit_ratio": info["validation_misfit_ratio"]})


STAGE_COMMANDS = {
    "mesh": cmd_mesh, "assemble": cmd_assemble, "snapshot": cmd_snapshot, "pod": cmd_pod,
    "prior": cmd_prior, "build": cmd_build, "eigs": cmd_eigs, "morozov": cmd_morozov,
}


def run_stage(ws: Workspace, stage: str):
    return STAGE_COMMANDS[stage](ws)

