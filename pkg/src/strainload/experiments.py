"""Monte Carlo studies over a built pipeline, reported as CSV.

Each study reads verified artifacts from a ``Workspace`` and writes a
per-replicate CSV plus a summary CSV of percentiles. Replicate ``i`` at
condition ``j`` always draws its noise from stream ``(j, i)`` of the study's
seed family, so results do not depend on the worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .aero import (COEFF_NAMES, ReferenceQuantities, coefficient_error, coefficient_map,
                   coefficient_ranges, coefficient_tolerances, compute_coefficients,
                   precompute_coeff_from_pod, reconstruction_error, pod_error)
from .artifacts import atomic_write
from .estimator import build_case2, estimate, project_onto_modes
from .noise import sample_noise, standard_normal, stream
from .pipeline import (STREAM_CASE1, STREAM_CASE2, STREAM_LATENCY, Workspace, csv_bytes,
                       seed_for)
from .pressure import freestream, synth_pressure
from .reduction import project_coeffs, reconstruct_pressure

STUDIES = ("case1_errors", "coeff_errors", "case2_recovery", "latency")
STUDY_DEPS = {
    "case1_errors": ("build", "snapshot", "pod"),
    "coeff_errors": ("build", "snapshot", "pod", "assemble", "mesh"),
    "case2_recovery": ("morozov", "eigs", "build", "prior", "snapshot", "assemble", "mesh"),
    "latency": ("build", "morozov", "pod", "assemble", "mesh"),
}
PERCENTILES = (5, 25, 50, 75, 95)


class UnknownStudyError(ValueError):
    pass


def _pmap(fn, items, workers):
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _pct(values):
    return [float(v) for v in np.percentile(np.asarray(values, dtype=float), PERCENTILES)]


def _pct_header(prefix=""):
    return [f"{prefix}p{p}" for p in PERCENTILES]


def _unit_coefficient_map(ws: Workspace):
    """G with q_ref = 1; divide by the condition's dynamic pressure afterwards."""
    refs = ReferenceQuantities.for_body(ws.cfg.geometry, q_ref=1.0)
    return coefficient_map(ws.mesh.nodes, refs)


def _case1_estimates(ws: Workspace, replicates: int):
    """(q_true, q_hat) per condition; q_hat has one row per replicate."""
    snaps, basis, imap = ws.pod_snapshots, ws.pod, ws.case1_map
    Z, noise = ws.p2o["Z"], ws.noise
    seed = seed_for(ws.cfg, STREAM_CASE1)

    def one(j):
        p = snaps.matrix[:, j]
        d = Z @ p
        eta = np.array([sample_noise(noise, seed, j, i) for i in range(replicates)])
        return project_coeffs(basis, p), estimate(imap, d + eta)

    return _pmap(one, range(snaps.N), ws.cfg.experiments.workers)


def study_case1_errors(ws: Workspace, replicates: int):
    snaps, basis, imap = ws.pod_snapshots, ws.pod, ws.case1_map
    ranges = coefficient_ranges(project_coeffs(basis, snaps.matrix.T))
    results = _case1_estimates(ws, replicates)
    r = basis.r
    rows, e_all, err_all, recon_all = [], [], [], []
    for j, (q, qhat) in enumerate(results):
        c = snaps.conditions[j]
        p = snaps.matrix[:, j]
        e = pod_error(qhat, q, ranges)
        recon = reconstruction_error(reconstruct_pressure(basis, qhat), p)
        for i in range(replicates):
            rows.append([j, c.mach, c.alpha, c.beta, i, *e[i], recon[i]])
        e_all.append(e)
        err_all.append(qhat - qhat.mean(axis=0))
        recon_all.append(recon)
    e_all, recon_all = np.vstack(e_all), np.concatenate(recon_all)
    spread = np.vstack(err_all)
    bound = 3 * np.sqrt(np.diag(imap.covariance.dense())) / ranges
    empirical = 3 * spread.std(axis=0) / ranges
    header = ["condition", "mach", "alpha", "beta", "replicate",
              *[f"e_pod_{i + 1}" for i in range(r)], "e_recon"]
    summary = [["e_pod_%d" % (i + 1), *_pct(e_all[:, i]), float(bound[i]), float(empirical[i]),
                float(np.mean(np.abs(e_all[:, i]) <= bound[i]))] for i in range(r)]
    summary.append(["e_recon", *_pct(recon_all), "", "", ""])
    sheader = ["quantity", *_pct_header(), "bound_3sigma", "empirical_3sigma", "within_bound"]
    return {"case1_errors.csv": csv_bytes(header, rows),
            "case1_summary.csv": csv_bytes(sheader, summary)}


def study_coeff_errors(ws: Workspace, replicates: int):
    snaps, basis = ws.pod_snapshots, ws.pod
    G = _unit_coefficient_map(ws)
    fast = precompute_coeff_from_pod(G, ws.operators.C_map, basis)
    qinf = np.array([freestream(c)[1] for c in snaps.conditions])
    true = compute_coefficients(G, ws.operators.C_map, snaps.matrix.T) / qinf[:, None]
    eps = coefficient_tolerances(true, ws.cfg.experiments.coefficient_tolerance)
    results = _case1_estimates(ws, replicates)
    rows, errs = [], []
    for j, (_, qhat) in enumerate(results):
        c = snaps.conditions[j]
        chat = fast(qhat) / qinf[j]
        e = coefficient_error(chat, true[j], eps)
        errs.append(e)
        for i in range(replicates):
            rows.append([j, c.mach, c.alpha, c.beta, i, *true[j], *chat[i], *e[i]])
    errs = np.vstack(errs)
    header = ["condition", "mach", "alpha", "beta", "replicate", *COEFF_NAMES,
              *[f"{n}_hat" for n in COEFF_NAMES], *[f"e_{n}" for n in COEFF_NAMES]]
    summary = [[n, float(eps[k]), *_pct(errs[:, k]), float(np.median(np.abs(errs[:, k])))]
               for k, n in enumerate(COEFF_NAMES)]
    return {"coeff_errors.csv": csv_bytes(header, rows),
            "coeff_summary.csv": csv_bytes(["coefficient", "epsilon", *_pct_header(),
                                            "median_abs"], summary)}


def study_case2_recovery(ws: Workspace, replicates: int):
    cfg = ws.cfg
    cond = cfg.experiments.case2_condition.condition()
    mesh, Z, noise, prior, spec = ws.mesh, ws.p2o["Z"], ws.noise, ws.prior, ws.spectrum
    p = synth_pressure(mesh, cond, cfg.generator).values
    d = Z @ p

    gamma0 = cfg.experiments.zero_noise_gamma * float(spec.eigenvalues[0])
    p0 = estimate(build_case2(Z, noise, prior, gamma0), d)
    proj = project_onto_modes(p, spec, spec.count)
    xyz = mesh.nodes[mesh.exterior_nodes]
    node_rows = [[n, *xyz[n], p[n], p0[n], proj[n]] for n in range(len(p))]

    imap = ws.case2_map
    seed = seed_for(cfg, STREAM_CASE2)
    eta = np.array([sample_noise(noise, seed, 0, i) for i in range(replicates)])
    phat = estimate(imap, d + eta)
    recon = reconstruction_error(phat, p)
    misfit = np.linalg.norm(phat @ Z.T - (d + eta), axis=1) / noise.delta

    G = _unit_coefficient_map(ws)
    C_map = ws.operators.C_map
    qinf = freestream(cond)[1]
    snaps = ws.pod_snapshots
    ref = compute_coefficients(G, C_map, snaps.matrix.T) / np.array(
        [freestream(c)[1] for c in snaps.conditions])[:, None]
    eps = coefficient_tolerances(ref, cfg.experiments.coefficient_tolerance)
    ctrue = compute_coefficients(G, C_map, p) / qinf
    chat = compute_coefficients(G, C_map, phat) / qinf
    ecoef = coefficient_error(chat, ctrue, eps)
    rows = [[i, recon[i], misfit[i], *chat[i], *ecoef[i]] for i in range(replicates)]

    summary = [
        ["gamma", imap.gamma], ["zero_noise_gamma", gamma0], ["modes", spec.count],
        ["zero_noise_e_recon", float(reconstruction_error(p0, p))],
        ["projection_e_recon", float(reconstruction_error(proj, p))],
        ["estimate_vs_projection", float(reconstruction_error(p0, proj))],
        *[[f"e_recon_p{q}", v] for q, v in zip(PERCENTILES, _pct(recon))],
        ["median_misfit_ratio", float(np.median(misfit))],
    ]
    return {
        "case2_nodes.csv": csv_bytes(["node", "x", "y", "z", "p_true", "p_estimate",
                                      "p_projection"], node_rows),
        "case2_replicates.csv": csv_bytes(["replicate", "e_recon", "misfit_ratio",
                                           *[f"{n}_hat" for n in COEFF_NAMES],
                                           *[f"e_{n}" for n in COEFF_NAMES]], rows),
        "case2_summary.csv": csv_bytes(["quantity", "value"], summary),
    }


def time_queries(fn, inputs, warmup: int = 50):
    """Per-call wall-clock times in nanoseconds (after ``warmup`` untimed calls)."""
    for x in inputs[:warmup]:
        fn(x)
    out = np.empty(len(inputs), dtype=np.int64)
    for i, x in enumerate(inputs):
        t0 = time.perf_counter_ns()
        fn(x)
        out[i] = time.perf_counter_ns() - t0
    return out


def study_latency(ws: Workspace, replicates: int = 0):
    cfg = ws.cfg.experiments
    rng = stream(seed_for(ws.cfg, STREAM_LATENCY))
    cases = [("case1", ws.case1_map), ("case2", ws.case2_map)]
    rows = []
    for label, imap in cases:
        D = standard_normal(rng, (cfg.latency_queries, imap.n_d))
        t = time_queries(lambda d: imap.T @ d + imap.k, D)
        rows.append([label, imap.n_q, imap.n_d, len(t), *np.percentile(t, [50, 99])])
    for n_q, n_d in cfg.latency_sizes:
        T = np.ascontiguousarray(standard_normal(rng, (n_q, n_d)))
        k = standard_normal(rng, n_q)
        D = standard_normal(rng, (cfg.latency_queries, n_d))
        t = time_queries(lambda d: T @ d + k, D)
        rows.append(["synthetic", n_q, n_d, len(t), *np.percentile(t, [50, 99])])
    G = _unit_coefficient_map(ws)
    fast = precompute_coeff_from_pod(G, ws.operators.C_map, ws.pod)
    C = standard_normal(rng, (cfg.latency_queries, ws.pod.r))
    t = time_queries(fast, C)
    rows.append(["pod_coefficients", 5, ws.pod.r, len(t), *np.percentile(t, [50, 99])])
    return {"latency.csv": csv_bytes(["map", "n_q", "n_d", "queries", "p50_ns", "p99_ns"], rows)}


STUDY_FUNCS = {
    "case1_errors": study_case1_errors,
    "coeff_errors": study_coeff_errors,
    "case2_recovery": study_case2_recovery,
    "latency": study_latency,
}


def run_study(ws: Workspace, study: str, replicates: int | None = None):
    if study not in STUDY_FUNCS:
        raise UnknownStudyError(f"unknown study {study!r}; choose from {', '.join(STUDIES)}")
    inputs = ws.verify_inputs(STUDY_DEPS[study])
    if replicates is None:
        e = ws.cfg.experiments
        replicates = e.case2_replicates if study == "case2_recovery" else e.case1_replicates
    files = STUDY_FUNCS[study](ws, replicates)
    ws.path("reports").mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        atomic_write(ws.report_path(name), data)
    ws.record(f"experiment_{study}", [f"reports/{n}" for n in files], inputs,
              {"replicates": replicates}, sections=("experiments", "seed"))
    return {name: ws.report_path(name) for name in files}
