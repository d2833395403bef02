"""Command line batch driver.

``parastab <subcommand> --config <path> --out <dir> [--workers N]
[--seed S]`` runs one experiment per invocation and persists a report
JSON (<tag>.<subcommand>.json) plus CSV tables.  Reports are written with
sorted keys and no timestamps, so identical config and seed give
byte-identical files; wall-clock data goes to a .meta.json sidecar.

Exit codes: 0 all verdicts pass, 2 some verdict failed, 1 error (bad
config, solver blow-up); a diagnostic report is still written on solver
failure.
"""

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import verify
from .backend import backend_name
from .config import (ExperimentConfig, build_spec, derived_sizes,
                     load_config)
from .errors import (BlowUpError, CapExceededError, ConfigError,
                     ConvergenceError, ParastabError)
from .forward import tail_check
from .mesh import riesz_h1
from .optimize import solve_ocp
from .stabilize import (gain_l2_norm, lifted_riccati_gain,
                        smallness_estimates)

ALL_SUBCOMMANDS = ("solve", "stabilize", "grad-check", "hjb-scan",
                   "lipschitz", "second-order", "feedback-sim", "oracle")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_json_safe(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_meta(path, started, seconds):
    _write_json(path, {
        "started_utc": datetime.fromtimestamp(
            started, tz=timezone.utc).isoformat(),
        "wall_seconds": round(seconds, 3),
        "backend": backend_name(),
    })


def _fmt(v):
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _norm_rows(spec, Y, U, P):
    w = spec.mesh.mass_weights()
    t = spec.times()
    ny = np.sqrt(np.maximum((Y * Y) @ w, 0.0))
    nu = np.linalg.norm(U, axis=1)
    npb = np.sqrt(np.maximum((P * P) @ w, 0.0))
    return [(float(t[k]), float(ny[k]), float(nu[k]), float(npb[k]))
            for k in range(len(t))]


def _solve_report(spec, cfg):
    result = solve_ocp(spec)
    report = verify.ExperimentReport(
        tag=cfg.tag, fingerprint=verify.spec_fingerprint(spec),
        provenance=verify._provenance(spec, result.warm_start))
    tail = tail_check(result.ybar, spec.tail_tol)
    t_hat = verify.inactivity_time(result, spec)
    report.metrics.update({
        "cost": result.cost,
        "residual": result.residual,
        "fixed_point_defect": result.fixed_point_defect,
        "iterations": result.iterations,
        "active_fraction": result.active_fraction,
        "terminal_h1": tail["terminal_h1"],
        "inactivity_time": t_hat,
    })
    grad = verify.value_gradient_field(result.pbar)
    report.metrics["value_gradient_l2"] = float(
        np.sqrt(spec.mesh.mass_weights() @ (grad.values * grad.values)))
    report.metrics["value_gradient_h1_riesz_l2"] = float(
        np.sqrt(spec.mesh.mass_weights() @ (riesz_h1(grad).values ** 2)))
    report.add_verdict("converged", result.converged, result.residual,
                       spec.tol)
    report.add_verdict("certificate", result.fixed_point_defect
                       <= 10.0 * spec.tol, result.fixed_point_defect,
                       10.0 * spec.tol)
    report.add_verdict("tail_check", tail["passed"], tail["terminal_h1"],
                       tail["threshold"])
    rows = _norm_rows(spec, result.ybar.values, result.ubar.values,
                      result.pbar.pbar)
    report.probes = [{"probe": k, "t": r[0], "norm_L2_y": r[1],
                      "norm_U_u": r[2], "norm_L2_p": r[3]}
                     for k, r in enumerate(rows)]
    return report, [("solve.csv", ("t", "norm_L2_y", "norm_U_u", "norm_L2_p"),
                     rows)]


def _stabilize_report(spec, cfg):
    gain = lifted_riccati_gain(spec)
    constants = smallness_estimates(spec, gain)
    report = verify.ExperimentReport(
        tag=cfg.tag, fingerprint=verify.spec_fingerprint(spec),
        provenance=verify._provenance(spec))
    report.metrics.update({
        "margin": gain.margin,
        "gain_l2_norm": gain_l2_norm(gain, spec.mesh),
        "newton_iterations": gain.iterations,
    })
    report.metrics.update(constants)
    report.add_verdict("margin_negative", gain.margin < 0.0, gain.margin,
                       0.0)
    report.add_verdict("radius_positive", constants["delta1"] > 0.0,
                       constants["delta1"], 0.0)
    report.metrics["gain"] = gain.to_dict()
    return report, []


def _grad_check_report(spec, cfg):
    params = cfg.experiment_params()
    eps = params.get("eps", [1e-2, 1e-3])
    directions = params.get("directions", 3)
    if isinstance(directions, int):
        report = verify.gradient_fd_check(spec, eps_list=eps,
                                          direction_count=directions)
    else:
        from .mesh import Field
        fields = [Field(np.asarray(v, dtype=float), spec.mesh)
                  for v in directions]
        report = verify.gradient_fd_check(spec, directions=fields,
                                          eps_list=eps)
    rows = [(r["eps"], r["direction_id"], r["rel_error"])
            for r in report.probes if r.get("rel_error") != ""]
    return report, [("grad-check.csv", ("eps", "direction_id", "rel_error"),
                     rows)]


def _hjb_scan_report(spec, cfg):
    from .mesh import Field
    params = cfg.experiment_params()
    count = params.get("states", 10)
    base = verify._converged(spec)
    N = spec.n_steps
    ks = np.unique(np.linspace(1, N - 1, count).astype(int))
    states = [Field(base.ybar.values[k].copy(), spec.mesh) for k in ks]
    report = verify.hjb_residual(spec, states)
    zero = verify.hjb_residual(
        spec, [Field(np.zeros(spec.mesh.node_count), spec.mesh)],
        tag="hjb-zero")
    zres = zero.probes[0].get("residual")
    report.metrics["zero_state_residual"] = zres
    report.add_verdict("zero_state", zres is not None
                       and abs(zres) <= 1e-12,
                       None if zres is None else abs(zres), 1e-12)
    rows = [(r["state_id"], r.get("residual", ""), r.get("normalized", ""))
            for r in report.probes]
    return report, [("hjb-scan.csv", ("state_id", "residual", "normalized"),
                     rows)]


def _lipschitz_report(spec, cfg):
    params = cfg.experiment_params()
    report = verify.lipschitz_probe(
        spec, pair_count=params.get("pairs", 8),
        eps_list=params.get("eps", [1e-2, 1e-3]))
    rows = [(r["eps"], r["pair"], r["dy0_h1"],
             r["dy_w"] + r["dp_w"] + r["du_max"], r["ratio"])
            for r in report.probes if "ratio" in r]
    return report, [("lipschitz.csv",
                     ("eps", "pair", "dy0_h1", "displacement", "ratio"),
                     rows)]


def _second_order_report(spec, cfg):
    params = cfg.experiment_params()
    base = verify._converged(spec)
    report = verify.second_order_check(
        spec, base, krylov_dim=params.get("krylov_dim", 12))
    return report, []


def _feedback_sim_report(spec, cfg):
    params = cfg.experiment_params()
    resolve = params.get("resolve_every", max(1, spec.n_steps // 10))
    traj, report = verify.feedback_closed_loop(spec, resolve)
    w = spec.mesh.mass_weights()
    ny = np.sqrt(np.maximum((traj.values * traj.values) @ w, 0.0))
    rows = [(float(k * spec.dt), float(ny[k])) for k in range(len(ny))]
    return report, [("feedback-sim.csv", ("t", "norm_L2_y"), rows)]


def _oracle_report(spec, cfg):
    params = cfg.experiment_params()
    best = verify.brute_force_value(spec,
                                    restarts=params.get("restarts", 6))
    result = solve_ocp(spec)
    gap = abs(best - result.cost) / max(abs(best), 1e-30)
    report = verify.ExperimentReport(
        tag=cfg.tag, fingerprint=verify.spec_fingerprint(spec),
        provenance=verify._provenance(spec, result.warm_start))
    report.metrics.update({"brute_force_value": best,
                           "solver_value": result.cost,
                           "relative_gap": gap})
    report.add_verdict("solver_converged", result.converged,
                       result.residual, spec.tol)
    report.add_verdict("oracle_gap", gap <= 1e-4, gap, 1e-4)
    return report, []


HANDLERS = {
    "solve": _solve_report,
    "stabilize": _stabilize_report,
    "grad-check": _grad_check_report,
    "hjb-scan": _hjb_scan_report,
    "lipschitz": _lipschitz_report,
    "second-order": _second_order_report,
    "feedback-sim": _feedback_sim_report,
    "oracle": _oracle_report,
}


def _persist(report, outdir, tag, sub, csvs, started):
    base = os.path.join(outdir, "%s.%s" % (tag, sub))
    _write_json(base + ".json", report.to_dict())
    _write_meta(base + ".meta.json", started, time.time() - started)
    for name, header, rows in csvs:
        _write_csv(os.path.join(outdir, "%s.%s" % (tag, name)),
                   header, rows)
    return base + ".json"


def _run_one(data, sub, outdir):
    """Execute one subcommand for a validated config dict.

    Returns (passed, report_path); raises ParastabError on hard failure
    after writing a diagnostic report.
    """
    cfg = ExperimentConfig(data)
    spec = build_spec(cfg)
    started = time.time()
    try:
        report, csvs = HANDLERS[sub](spec, cfg)
    except ParastabError as exc:
        diag = {
            "tag": cfg.tag, "subcommand": sub, "error": type(exc).__name__,
            "message": str(exc),
        }
        for attr in ("step", "t", "norm", "limit", "residual"):
            if hasattr(exc, attr):
                diag[attr] = getattr(exc, attr)
        path = os.path.join(outdir, "%s.%s.error.json" % (cfg.tag, sub))
        _write_json(path, diag)
        raise
    path = _persist(report, outdir, cfg.tag, sub, csvs, started)
    return report.passed, path


def _all_worker(args):
    data, sub, outdir = args
    try:
        passed, path = _run_one(data, sub, outdir)
        return sub, passed, None
    except ParastabError as exc:
        return sub, False, "%s: %s" % (type(exc).__name__, exc)


def run(subcommand, config_path, out_dir=".", workers=None, seed=None):
    """Entry point behind the console script; returns the exit code."""
    try:
        cfg = load_config(config_path)
    except (ConfigError, CapExceededError) as exc:
        pointer = getattr(exc, "pointer", "")
        sys.stderr.write("%s:%s: %s\n" % (config_path, pointer, exc))
        return 1
    data = cfg.to_dict()
    if seed is not None:
        data["seed"] = int(seed)
    os.makedirs(out_dir, exist_ok=True)

    if subcommand == "all":
        subs = [s for s in ALL_SUBCOMMANDS if s != "oracle"]
        spec = build_spec(ExperimentConfig(data))
        if spec.control.m * spec.n_steps <= 64 and \
                spec.mesh.node_count <= 16:
            subs.append("oracle")
        if workers is None:
            workers = os.cpu_count() or 1
        outcomes = {}
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for sub, passed, err in pool.map(
                        _all_worker, [(data, s, out_dir) for s in subs]):
                    outcomes[sub] = (passed, err)
        else:
            for s in subs:
                sub, passed, err = _all_worker((data, s, out_dir))
                outcomes[sub] = (passed, err)
        merged = {"tag": data["experiment"]["tag"],
                  "subcommands": {s: {"passed": outcomes[s][0],
                                      "error": outcomes[s][1]}
                                  for s in sorted(outcomes)},
                  "passed": all(p for p, _ in outcomes.values())
                  and not any(e for _, e in outcomes.values())}
        _write_json(os.path.join(
            out_dir, "%s.all.json" % data["experiment"]["tag"]), merged)
        for s in sorted(outcomes):
            passed, err = outcomes[s]
            state = "ERROR" if err else ("PASS" if passed else "FAIL")
            print("%-14s %s%s" % (s, state, "  (%s)" % err if err else ""))
        if any(e for _, e in outcomes.values()):
            return 1
        return 0 if merged["passed"] else 2

    try:
        passed, path = _run_one(data, subcommand, out_dir)
    except ParastabError as exc:
        sys.stderr.write("%s: %s\n" % (type(exc).__name__, exc))
        return 1
    print("%s %s" % (path, "PASS" if passed else "FAIL"))
    return 0 if passed else 2


def validate(config_path):
    """Schema check plus derived sizes; no solves."""
    try:
        cfg = load_config(config_path)
    except (ConfigError, CapExceededError) as exc:
        pointer = getattr(exc, "pointer", "")
        sys.stderr.write("%s:%s: %s\n" % (config_path, pointer, exc))
        return 1
    sizes = derived_sizes(cfg)
    print("OK %s" % cfg.tag)
    for key in sorted(sizes):
        print("  %s: %s" % (key, sizes[key]))
    return 0


def emit_plot_data(result_files, out_dir="."):
    """Flatten report JSONs into plot-ready CSVs; no rendering."""
    os.makedirs(out_dir, exist_ok=True)
    contracts = {
        "solve": (("t", "norm_L2_y", "norm_U_u", "norm_L2_p"), None),
        "grad-check": (("eps", "direction_id", "rel_error"), "rel_error"),
        "lipschitz": (("dy0_h1", "displacement", "ratio"), "ratio"),
        "hjb-scan": (("state_id", "residual", "normalized"), "normalized"),
        "feedback-sim": (("t", "norm_L2_y"), None),
        "second-order": (("kappa_hat", "symmetry_defect", "hvp_fd_rel"),
                         None),
    }
    written = []
    for path in result_files:
        try:
            with open(path) as fh:
                report = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            sys.stderr.write("%s: %s\n" % (path, exc))
            return 1
        name = os.path.basename(path)
        sub = name.split(".")[-2] if name.count(".") >= 2 else ""
        if sub not in contracts or not report.get("probes"):
            continue
        columns, _ = contracts[sub]
        rows = []
        for probe in report["probes"]:
            if sub == "lipschitz" and "ratio" in probe:
                probe = dict(probe)
                probe["displacement"] = (probe["dy_w"] + probe["dp_w"]
                                         + probe["du_max"])
            if all(c in probe and probe[c] != "" for c in columns):
                rows.append([probe[c] for c in columns])
        if not rows:
            continue
        out = os.path.join(out_dir, name[:-len(".json")] + ".plot.csv")
        _write_csv(out, columns, rows)
        written.append(out)
    for out in written:
        print(out)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="parastab",
        description="Constrained parabolic stabilization experiments")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ALL_SUBCOMMANDS + ("all",):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=".")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
    p = sub.add_parser("validate")
    p.add_argument("--config", required=True)
    p = sub.add_parser("emit-plot-data")
    p.add_argument("results", nargs="*")
    p.add_argument("--out", default=".")
    args = parser.parse_args(argv)
    if args.subcommand == "validate":
        return validate(args.config)
    if args.subcommand == "emit-plot-data":
        return emit_plot_data(args.results, args.out)
    return run(args.subcommand, args.config, args.out,
               workers=args.workers, seed=args.seed)


if __name__ == "__main__":
    sys.exit(main())
