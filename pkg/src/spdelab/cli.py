"""Batch front end: ``spdelab --config run.yaml --command verify --out results/``.

Exit codes: 0 every check passed, 1 a hypothesis or claim failed, 2 the
configuration is invalid, 3 the solver went unstable.

Payload files (CSV, JSON, JSON lines) depend only on the resolved config and
the seed.  Timestamps, the worker count and the output directory go to
``metadata.json``.
"""

import argparse
import csv
import datetime as _dt
import io
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .covariance import NormalizationError, check_h_eta, check_integrability, validate_normalization
from .density import (InsufficientDataError, check_drift_bound, check_envelope, drift_bound,
                      estimate_density, estimate_holder, holder_probes, run_ensemble)
from .malliavin import check_derivative_scaling, derivative_batch
from .noise import phi_grid, write_grid_file
from .phi import (NonIntegrableKernelError, check_h1, check_h2, check_two_sided, compute_phi,
                  phi_profile)
from .reports import dumps, scaling_csv, to_jsonable
from .rng import CounterStream
from .solver import SolverInstability, check_ellipticity, default_workers, map_paths, solve

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_UNSTABLE = 0, 1, 2, 3
COMMANDS = ("kernel", "phi", "simulate", "verify")


class UsageError(ConfigError):
    pass


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def cmd_kernel(cfg, out, workers):
    kernel = cfgmod.build_kernel(cfg)
    checks = cfg.get("kernel_checks", {})
    reports = {"integrability": check_integrability(kernel),
               "h_eta": [check_h_eta(kernel, e) for e in checks.get("eta", [])]}
    ok = reports["integrability"].holds and all(r.holds for r in reports["h_eta"])
    if checks.get("normalization", True):
        try:
            reports["normalization_residual"] = validate_normalization(kernel)
        except NormalizationError as exc:
            reports["normalization_residual"] = exc.residual
            reports["normalization_error"] = str(exc)
            ok = False
    reports["kernel"] = kernel.to_dict()
    reports["pass"] = ok
    _write(os.path.join(out, "kernel_report.json"), dumps(reports))
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_phi(cfg, out, workers):
    kernel = cfgmod.build_kernel(cfg)
    pc = cfg.get("phi")
    if not pc or not pc.get("t_grid"):
        raise UsageError("the phi command needs a non-empty t_grid", "phi.t_grid")
    try:
        prof = phi_profile(kernel, pc["t_grid"], pc.get("method"))
    except NonIntegrableKernelError as exc:
        _write(os.path.join(out, "phi_report.json"), dumps({"error": str(exc), "pass": False}))
        return EXIT_FAIL
    except ValueError as exc:
        raise UsageError(str(exc), "phi.t_grid") from exc
    _write(os.path.join(out, "phi_profile.csv"), _csv(("t", "phi"), prof.rows()))
    reports = []
    if pc.get("h1", True):
        reports.append(check_h1(kernel))
    if "h2" in pc:
        reports.extend(check_h2(kernel, pc["h2"]["gamma1"], pc["h2"]["gamma2"]))
    if "two_sided" in pc:
        reports.extend(check_two_sided(kernel, pc["two_sided"]["eta"], pc["two_sided"]["T"]))
    _write(os.path.join(out, "scaling.csv"), scaling_csv(reports))
    ok = all(r.passed for r in reports)
    _write(os.path.join(out, "phi_report.json"),
           dumps({"method": prof.method, "reports": reports, "pass": ok}))
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_simulate(cfg, out, workers):
    kernel = cfgmod.build_kernel(cfg)
    grid = cfgmod.build_grid(cfg, kernel.d)
    model = cfgmod.build_model(cfg, kernel.d)
    sc = cfg.get("simulate", {"paths": 1})
    probes = [(p["t"], cfgmod.point(p.get("x"), grid.d)) for p in sc.get("probes", [{"t": grid.T}])]
    seed = cfg["seed"]
    ens = run_ensemble(model, kernel, grid, probes, sc["paths"], seed, workers)
    lines = []
    for path in range(ens.path_count):
        for k, (t, x) in enumerate(ens.probes):
            lines.append(json.dumps({"path_id": path, "t": t, "x": x.tolist(),
                                     "u": ens.samples[k, path].tolist()}, sort_keys=True))
    _write(os.path.join(out, "probes.jsonl"), "".join(line + "\n" for line in lines))
    summary = []
    for k, (t, x) in enumerate(ens.probes):
        s = ens.samples[k]
        summary.append({"t": t, "x": x.tolist(), "mean": s.mean(axis=0) if len(s) else [],
                        "variance": s.var(axis=0, ddof=1) if len(s) > 1 else [],
                        "phi": compute_phi(kernel, t), "phi_grid": phi_grid(kernel, grid, t)})
    _write(os.path.join(out, "simulate_summary.json"), dumps({"probes": summary, "paths": ens.path_count}))
    if sc.get("dump_terminal") and ens.path_count:
        sol = solve(model, kernel, grid, CounterStream(seed, 0))
        write_grid_file(os.path.join(out, "terminal.bin"), sol.terminal.data, grid, model.m)
    return EXIT_PASS


def cmd_verify(cfg, out, workers):
    kernel = cfgmod.build_kernel(cfg)
    grid = cfgmod.build_grid(cfg, kernel.d)
    model = cfgmod.build_model(cfg, kernel.d)
    vc = cfg.get("verify", {})
    t_grid = vc.get("t_grid", [])
    if len(t_grid) < 3:
        raise InsufficientDataError("verify needs a t_grid with at least 3 times")
    seed = cfg["seed"]
    x = cfgmod.point(vc.get("x"), grid.d)
    results, scaling, ok = {}, [], True

    if not model.h3:
        raise ConfigError("verify needs a model flagged with h3: true (bounded drift)", "model.h3")
    ell = check_ellipticity(model, vc.get("ellipticity", {}).get("sample", 100_000), seed)
    results["ellipticity"] = ell
    ok &= ell.passed
    if not ell.passed:
        results["skipped"] = "ellipticity fails, so the density, drift and derivative checks do not apply"
        _finish_verify(out, results, scaling, [], False)
        return EXIT_FAIL

    # envelope
    paths = vc.get("paths", 20_000)
    ens = run_ensemble(model, kernel, grid, [(t, x) for t in t_grid], paths, seed, workers)
    ests = [estimate_density(ens, k, bootstrap=vc.get("bootstrap", 200), workers=workers)
            for k in range(len(t_grid))]
    phis = [compute_phi(kernel, t) for t in t_grid]
    env = check_envelope(ests, phis, grid.T, C4=model.b.sup_norm(), c1_min=vc.get("c1_min", 1e-3),
                         c3_max=vc.get("c3_max", 1e3))
    results["envelope"] = env.to_dict()
    ok &= env.passed
    rows = []
    for est in ests:
        for pt, v, rel in zip(est.points(), est.values.ravel(), est.mc_rel_err.ravel()):
            rows.append([est.probe[0], *pt, v, rel * v])
    m = model.m
    density_csv = _csv(("t", *[f"y{i + 1}" for i in range(m)], "p_hat", "err"), rows)

    # drift bound
    dp = vc.get("drift", {}).get("paths", 1000)
    dmax = check_drift_bound(model, kernel, grid, dp, seed, [(grid.T, x)], workers)
    bound = drift_bound(model, grid.T)
    results["drift"] = {"max": dmax, "bound": bound, "pass": dmax <= bound}
    ok &= dmax <= bound

    # derivative scaling and Malliavin matrix
    dc = vc.get("derivative", {})
    windows = [w * grid.T for w in dc.get("windows", [1 / 16, 1 / 8, 1 / 4, 1 / 2])]
    dpaths = dc.get("paths", 200)
    rep = check_derivative_scaling(model, kernel, grid, windows, dpaths, seed, (grid.T, x), workers,
                                   dc.get("max_spread", 3.0))
    scaling.append(rep)
    ok &= rep.passed
    grams = np.concatenate(map_paths(lambda p: derivative_batch(model, kernel, grid, seed, p, (grid.T, x)),
                                     min(dpaths, 100), workers, 64))
    M = grid.dt * grams.sum(axis=1)
    eig = np.linalg.eigvalsh(M)
    pg = phi_grid(kernel, grid, grid.T)
    results["malliavin"] = {"min_eigenvalue_over_phi_grid": float(eig.min() / pg),
                            "mean_trace_over_phi_grid": float(np.trace(M, axis1=1, axis2=2).mean() / pg),
                            "gram_psd": bool(np.all(eig >= -1e-12 * np.trace(M, axis1=1, axis2=2)[:, None]))}
    ok &= results["malliavin"]["gram_psd"] and results["malliavin"]["min_eigenvalue_over_phi_grid"] > 0

    hc = vc.get("holder")
    if hc:
        probes, pairs = holder_probes(grid, hc["axis"], hc["lags"])
        hens = run_ensemble(model, kernel, grid, probes, hc.get("paths", 2000), seed, workers)
        hr = estimate_holder(hens, pairs, hc["axis"], 2, tol=hc.get("tolerance", 0.05))
        scaling.append(hr)
        ok &= hr.passed
    _finish_verify(out, results, scaling, density_csv, bool(ok))
    return EXIT_PASS if ok else EXIT_FAIL


def _finish_verify(out, results, scaling, density_csv, ok):
    results["scaling"] = scaling
    results["pass"] = ok
    _write(os.path.join(out, "verify_report.json"), dumps(results))
    _write(os.path.join(out, "scaling.csv"), scaling_csv(scaling))
    if density_csv:
        _write(os.path.join(out, "density.csv"), density_csv)


HANDLERS = {"kernel": cmd_kernel, "phi": cmd_phi, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="spdelab", description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    p.add_argument("--workers", type=int, default=None, help="worker threads")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--command", choices=COMMANDS, default=None)
    return p


def _metadata(out, command, workers, started, code):
    meta = {"command": command, "workers": workers, "output": os.path.abspath(out),
            "started": started, "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "exit_code": code}
    _write(os.path.join(out, "metadata.json"), json.dumps(meta, sort_keys=True, indent=2) + "\n")


def run(argv=None):
    args = build_parser().parse_args(argv)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    try:
        raw = cfgmod.load(args.config)
        cfg = cfgmod.resolve(raw)
        env_seed = os.environ.get("SPDELAB_SEED")
        if args.seed is not None:
            cfg["seed"] = args.seed
        elif env_seed:
            cfg["seed"] = int(env_seed)
        if not 0 <= cfg["seed"] < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "seed")
        workers = args.workers or (int(os.environ["SPDELAB_WORKERS"]) if os.environ.get("SPDELAB_WORKERS")
                                   else cfg.get("workers", default_workers()))
        command = args.command or cfg.get("command")
        if command is None:
            raise ConfigError("no command given (flag --command or key 'command')", "command")
        out = args.out or cfg.get("output", "spdelab-out")
        os.makedirs(out, exist_ok=True)
        resolved = {k: v for k, v in cfg.items() if k not in ("workers", "output")}
        resolved["command"] = command
        _write(os.path.join(out, "resolved_config.json"), json.dumps(to_jsonable(resolved), sort_keys=True,
                                                                     indent=2) + "\n")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = HANDLERS[command](cfg, out, max(1, int(workers)))
    except SolverInstability as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        code = EXIT_UNSTABLE
    except (ConfigError, InsufficientDataError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    _metadata(out, command, workers, started, code)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
