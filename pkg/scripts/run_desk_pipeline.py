"""Run the full desk-scale pipeline and print a summary of its reports.

    python scripts/run_desk_pipeline.py [--config configs/desk.yaml] [--out runs/desk]
"""
import argparse
import csv
import json
import sys
import time
from pathlib import Path

from strainload.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summarize(out: Path):
    info = lambda stage: json.loads((out / "manifests" / f"{stage}.json").read_text())["info"]
    mesh, build, pod, eigs = info("mesh"), info("build"), info("pod"), info("eigs")
    gamma = json.loads((out / "gamma.json").read_text())
    print(f"mesh: {mesh['n_nodes']} nodes, {mesh['n_tets']} tets, {mesh['n_dofs']} DOF, "
          f"{mesh['n_p']} surface pressures, {mesh['n_d']} gauges")
    print(f"POD: r = {pod['r']} ({pod['energy_retained']:.4%} energy); "
          f"noise sigma = {build['sigma']:.4e}; kappa(whitened Z Phi) = {build['kappa']:.1f}")
    print(f"spectrum: {eigs['count']} modes over {eigs['decay_orders']:.1f} decades; "
          f"Morozov gamma = {gamma['gamma']:.4g} "
          f"(validation misfit ratio {gamma['validation_misfit_ratio']:.3f})")
    reports = out / "reports"
    print("\nCase 1 POD-coefficient error percentiles:")
    for row in read_csv(reports / "case1_summary.csv"):
        print("  " + ", ".join(f"{k}={v}" for k, v in row.items()))
    print("\nCoefficient errors relative to 10% of range:")
    for row in read_csv(reports / "coeff_summary.csv"):
        print("  " + ", ".join(f"{k}={v}" for k, v in row.items()))
    print("\nCase 2 at the study condition:")
    for row in read_csv(reports / "case2_summary.csv"):
        print(f"  {row['quantity']:>24s} = {float(row['value']):.4g}")
    lat = reports / "latency.csv"
    if lat.exists():
        print("\nQuery latency:")
        for row in read_csv(lat):
            print(f"  {row['map']:>16s} n_q={row['n_q']:>6s} n_d={row['n_d']:>3s} "
                  f"p50={float(row['p50_ns']) / 1e3:8.1f} us  p99={float(row['p99_ns']) / 1e3:8.1f} us")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, default=ROOT / "configs" / "desk.yaml")
    p.add_argument("--out", type=Path, default=ROOT / "runs" / "desk")
    p.add_argument("--skip-latency", action="store_true")
    args = p.parse_args(argv)
    t0 = time.perf_counter()
    cmd = ["run", "--config", str(args.config), "--out", str(args.out), "-v"]
    code = cli_main(cmd + (["--skip-latency"] if args.skip_latency else []))
    if code:
        return code
    print(f"pipeline finished in {time.perf_counter() - t0:.1f} s -> {args.out}\n")
    summarize(args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
