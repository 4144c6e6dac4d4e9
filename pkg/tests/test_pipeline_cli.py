import csv
import hashlib
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
import yaml

from strainload.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, EXIT_STALE, main
from strainload.config import load_config
from strainload.estimator import build_case1
from strainload.experiments import STUDIES
from strainload.fem import assemble_p2o, build_operators
from strainload.geometry import SensorConfig, build_shell_mesh, place_sensors
from strainload.noise import NoiseModel, calibrate_sigma
from strainload.pipeline import STAGE_ORDER, StaleArtifactError, Workspace, load_map, seed_for
from strainload.pressure import database_snapshots
from strainload.reduction import compute_pod

CI = Path(__file__).resolve().parents[1] / "configs" / "ci.yaml"


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_config(path, **changes):
    data = yaml.safe_load(CI.read_text())
    for key, value in changes.items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    path.write_text(yaml.safe_dump(data))
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ci") / "run"
    assert main(["run", "--config", str(CI), "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture
def scratch(run_dir, tmp_path):
    out = tmp_path / "run"
    shutil.copytree(run_dir, out)
    return out


def test_all_stages_and_studies_recorded(run_dir):
    for stage in STAGE_ORDER:
        man = json.loads((run_dir / "manifests" / f"{stage}.json").read_text())
        assert man["stage"] == stage and man["outputs"]
    for study in STUDIES:
        assert (run_dir / "manifests" / f"experiment_{study}.json").exists()
    ws = Workspace(load_config(CI), run_dir)
    for stage in STAGE_ORDER:
        ws.verify(stage)


def test_report_row_counts(run_dir):
    cfg = load_config(CI)
    n_pod = len(cfg.snapshots.pod.conditions())
    r = json.loads((run_dir / "manifests" / "pod.json").read_text())["info"]["r"]
    case1 = rows(run_dir / "reports" / "case1_errors.csv")
    assert len(case1) - 1 == n_pod * cfg.experiments.case1_replicates
    assert case1[0][:5] == ["condition", "mach", "alpha", "beta", "replicate"]
    assert len(rows(run_dir / "reports" / "case1_summary.csv")) - 1 == r + 1
    assert len(rows(run_dir / "reports" / "coeff_errors.csv")) - 1 == n_pod * cfg.experiments.case1_replicates
    assert len(rows(run_dir / "reports" / "coeff_summary.csv")) - 1 == 5
    assert len(rows(run_dir / "reports" / "case2_replicates.csv")) - 1 == cfg.experiments.case2_replicates
    n_p = json.loads((run_dir / "manifests" / "mesh.json").read_text())["info"]["n_p"]
    assert len(rows(run_dir / "reports" / "case2_nodes.csv")) - 1 == n_p
    lat = rows(run_dir / "reports" / "latency.csv")
    assert [row[0] for row in lat[1:]] == ["case1", "case2", "synthetic", "pod_coefficients"]


def test_persisted_case1_map_matches_in_memory_build(run_dir):
    cfg = load_config(CI)
    mesh = build_shell_mesh(cfg.geometry)
    ops = build_operators(mesh, cfg.material, place_sensors(mesh, SensorConfig(cfg.sensors)))
    g = cfg.snapshots.pod
    snaps = database_snapshots(mesh, g.machs, g.alphas, g.betas, g.altitude, cfg.generator)
    basis = compute_pod(snaps, energy=cfg.pod.energy)
    Z = assemble_p2o(ops, ops.C_map)
    noise = NoiseModel(calibrate_sigma(Z @ snaps.matrix, cfg.noise.fraction), ops.n_d)
    ref = build_case1(Z @ basis.modes, noise, offset=Z @ basis.mean)
    disk = load_map(run_dir / "map_case1.bin")
    assert np.allclose(disk.T, ref.T, rtol=1e-10, atol=1e-12 * np.abs(ref.T).max())
    assert np.allclose(disk.k, ref.k, rtol=1e-10, atol=1e-12 * np.abs(ref.k).max())
    assert np.allclose(disk.covariance.dense(), ref.covariance.dense(), rtol=1e-10)


def test_rerun_is_byte_identical(run_dir, tmp_path):
    again = tmp_path / "again"
    assert main(["run", "--config", str(CI), "--out", str(again), "--skip-latency"]) == EXIT_OK
    timing = {"reports/latency.csv", "manifests/experiment_latency.json"}
    for f in sorted(p for p in again.rglob("*") if p.is_file()):
        rel = f.relative_to(again).as_posix()
        if rel not in timing:
            assert f.read_bytes() == (run_dir / rel).read_bytes(), rel


def test_rerunning_a_stage_keeps_downstream_valid(scratch):
    before = (scratch / "manifests" / "mesh.json").read_bytes()
    assert main(["mesh", "--config", str(CI), "--out", str(scratch)]) == EXIT_OK
    assert (scratch / "manifests" / "mesh.json").read_bytes() == before
    assert main(["experiment", "--study", "case1_errors", "--config", str(CI),
                 "--out", str(scratch)]) == EXIT_OK


def test_estimate_zero_measurement_returns_offset(scratch, tmp_path):
    n_d = json.loads((scratch / "noise.json").read_text())["n_d"]
    meas = tmp_path / "m.txt"
    meas.write_text("# two measurements\n" + " ".join(["0"] * n_d) + "\n" + ",".join(["1e-6"] * n_d) + "\n")
    res = tmp_path / "out.jsonl"
    for case in ("case1", "case2"):
        assert main(["estimate", str(meas), "--case", case, "--config", str(CI), "--out", str(scratch),
                     "--results", str(res)]) == EXIT_OK
        recs = [json.loads(line) for line in res.read_text().splitlines()]
        assert [r["index"] for r in recs] == [0, 1]
        imap = load_map(scratch / f"map_{case}.bin")
        assert set(recs[0]["coefficients"]) == {"C_A", "C_N", "C_Y", "M_P", "M_Y"}
        if case == "case1":
            assert np.allclose(recs[0]["q_hat"], imap.k, rtol=1e-15, atol=0)
            assert len(recs[0]["posterior_std"]) == imap.n_q
        else:
            # Large maps report a digest of q_hat rather than the vector itself.
            assert "q_hat" not in recs[0] and "posterior_std" not in recs[0]
            digest = hashlib.sha256(imap.k.astype("<f8").tobytes()).hexdigest()
            assert recs[0]["q_hat_sha256"] == digest


def test_estimate_rejects_wrong_length(scratch, tmp_path):
    meas = tmp_path / "m.txt"
    meas.write_text("1 2 3\n")
    assert main(["estimate", str(meas), "--config", str(CI), "--out", str(scratch),
                 "--results", str(tmp_path / "r.jsonl")]) == EXIT_CONFIG


def test_seed_change_makes_case2_stale(scratch, capsys):
    code = main(["experiment", "--study", "case2_recovery", "--config", str(CI),
                 "--out", str(scratch), "--seed", "8"])
    assert code == EXIT_STALE
    assert "morozov" in capsys.readouterr().err


def test_corrupted_artifact_detected(scratch, capsys):
    blob = bytearray((scratch / "pod.bin").read_bytes())
    blob[100] ^= 1
    (scratch / "pod.bin").write_bytes(bytes(blob))
    assert main(["build", "--config", str(CI), "--out", str(scratch)]) == EXIT_STALE
    assert "pod.bin" in capsys.readouterr().err


def test_mixed_provenance_detected(scratch, tmp_path):
    cfg = write_config(tmp_path / "rank.yaml", **{"pod.energy": None, "pod.rank": 3})
    assert main(["pod", "--config", str(cfg), "--out", str(scratch)]) == EXIT_OK
    # build still records the old pod manifest; anything downstream must refuse to run.
    assert main(["eigs", "--config", str(cfg), "--out", str(scratch)]) == EXIT_STALE


def test_missing_upstream(tmp_path, capsys):
    assert main(["build", "--config", str(CI), "--out", str(tmp_path / "empty")]) == EXIT_STALE
    assert "missing artifact" in capsys.readouterr().err


def test_unknown_config_key(tmp_path):
    cfg = write_config(tmp_path / "bad.yaml", **{"geometry.colour": "red"})
    assert main(["mesh", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_invalid_study_rejected_by_parser():
    with pytest.raises(SystemExit) as exc:
        main(["experiment", "--study", "nonsense"])
    assert exc.value.code == 2


def test_numerical_failure_exit_code(scratch, tmp_path, capsys):
    cfg = write_config(tmp_path / "tiny.yaml", **{"gamma.policy": "fixed", "gamma.value": 1e-300})
    assert main(["morozov", "--config", str(cfg), "--out", str(scratch)]) == EXIT_NUMERICAL
    assert "singular" in capsys.readouterr().err


def test_workspace_verification_errors(scratch):
    cfg = load_config(CI)
    ws = Workspace(cfg, scratch)
    (scratch / "sensors.csv").write_text("tampered\n")
    with pytest.raises(StaleArtifactError, match="sensors.csv"):
        ws.verify("assemble")


def test_seed_families_are_distinct():
    cfg = load_config(CI)
    assert len({tuple(seed_for(cfg, f)) if isinstance(seed_for(cfg, f), (list, tuple))
                else seed_for(cfg, f) for f in range(1, 6)}) == 5
