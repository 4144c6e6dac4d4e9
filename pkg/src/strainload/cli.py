"""Command-line entry point: ``strainload <command> --config run.yaml``.

Exit codes: 0 success, 2 configuration or input error, 3 missing, stale or
corrupted artifact, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .aero import COEFF_NAMES, ReferenceQuantities, coefficient_map, compute_coefficients
from .artifacts import ContainerError
from .config import ConfigError, PipelineConfig, load_config, override
from .estimator import EstimatorError, estimate
from .experiments import STUDIES, UnknownStudyError, run_study
from .fem import AssemblyError, FactorizationError
from .geometry import GeometryError
from .pipeline import STAGE_ORDER, StaleArtifactError, Workspace, load_map, run_stage
from .pressure import FlightCondition, freestream
from .reduction import ReductionError, reconstruct_pressure

EXIT_OK, EXIT_CONFIG, EXIT_STALE, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("strainload")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration (defaults if omitted)")
    common.add_argument("--out", type=Path, help="run directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="strainload",
                                description="Strain-to-pressure inverse mapping pipeline.")
    sub = p.add_subparsers(dest="command", required=True)
    for stage in STAGE_ORDER:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")

    exp = sub.add_parser("experiment", parents=[common], help="run Monte Carlo studies")
    exp.add_argument("--study", action="append", choices=[*STUDIES, "all"], required=True)
    exp.add_argument("--replicates", type=int, help="replicates per condition")

    est = sub.add_parser("estimate", parents=[common], help="estimate loads from measurements")
    est.add_argument("measurements", type=Path,
                     help="text file, one measurement per line ('-' reads stdin)")
    est.add_argument("--case", choices=["case1", "case2"], default="case1")
    est.add_argument("--map", type=Path, help="inverse-map container (default: from the run)")
    est.add_argument("--results", type=Path, help="JSON-lines output (default: stdout)")

    run = sub.add_parser("run", parents=[common], help="all stages, then all studies")
    run.add_argument("--replicates", type=int, help="replicates per condition")
    run.add_argument("--skip-latency", action="store_true",
                     help="omit the timing study (its numbers are machine dependent)")
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = override(cfg, seed=args.seed)
    if args.out is not None:
        cfg = override(cfg, output_dir=str(args.out))
    return cfg


def _studies(selected):
    return list(STUDIES) if "all" in selected else list(dict.fromkeys(selected))


def _read_measurements(path: Path):
    fh = sys.stdin if str(path) == "-" else path.open()
    try:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                yield np.array([float(v) for v in line.replace(",", " ").split()])
    finally:
        if fh is not sys.stdin:
            fh.close()


def cmd_estimate(ws: Workspace, measurements: Path, case: str, map_path=None, results=None):
    """Stream q_hat, aero coefficients and (case 1) posterior std per measurement."""
    if map_path is None:
        ws.verify("build" if case == "case1" else "morozov")
        map_path = ws.path(f"map_{case}.bin")
    imap = load_map(map_path)
    cfg = ws.cfg
    cond = FlightCondition(cfg.reference_mach, 0.0, 0.0, cfg.snapshots.pod.altitude)
    G = coefficient_map(ws.mesh.nodes, ReferenceQuantities.for_body(cfg.geometry, cond))
    C_map = ws.operators.C_map
    std = np.sqrt(imap.covariance.diagonal()) if imap.case == "case1" else None
    out = results.open("w") if results else sys.stdout
    try:
        for i, d in enumerate(_read_measurements(measurements)):
            if d.shape[0] != imap.n_d:
                raise ValueError(f"measurement {i} has {d.shape[0]} values; the map expects "
                                 f"n_d = {imap.n_d}")
            q = estimate(imap, d)
            p = reconstruct_pressure(ws.pod, q) if imap.case == "case1" else q
            coeffs = compute_coefficients(G, C_map, p)
            rec = {"index": i, "case": imap.case, "n_q": imap.n_q,
                   "q_hat_sha256": hashlib.sha256(q.astype("<f8").tobytes()).hexdigest(),
                   "coefficients": dict(zip(COEFF_NAMES, map(float, coeffs)))}
            if imap.n_q <= 64:
                rec["q_hat"] = [float(v) for v in q]
            if std is not None:
                rec["posterior_std"] = [float(v) for v in std]
            out.write(json.dumps(rec) + "\n")
    finally:
        if results:
            out.close()


def dispatch(args) -> int:
    cfg = _config(args)
    ws = Workspace(cfg)
    if args.command in STAGE_ORDER:
        man = run_stage(ws, args.command)
        log.info("%s: %s", args.command, json.dumps(man["info"], sort_keys=True)[:400])
    elif args.command == "experiment":
        for study in _studies(args.study):
            for path in run_study(ws, study, args.replicates).values():
                log.info("wrote %s", path)
    elif args.command == "estimate":
        cmd_estimate(ws, args.measurements, args.case, args.map, args.results)
    elif args.command == "run":
        for stage in STAGE_ORDER:
            run_stage(ws, stage)
            log.info("stage %s done", stage)
        for study in STUDIES:
            if study == "latency" and args.skip_latency:
                continue
            run_study(ws, study, args.replicates)
            log.info("study %s done", study)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return dispatch(args)
    except (StaleArtifactError, ContainerError, FileNotFoundError) as exc:
        print(f"strainload: artifact error: {exc}", file=sys.stderr)
        return EXIT_STALE
    except (EstimatorError, FactorizationError, np.linalg.LinAlgError, AssemblyError,
            GeometryError, ReductionError) as exc:
        print(f"strainload: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, UnknownStudyError, ValueError) as exc:
        print(f"strainload: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
