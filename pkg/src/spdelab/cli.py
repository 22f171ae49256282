"""Command-line entry point: ``spdelab <study> <config> [--out DIR] [--paths N] [--seed S]``.

Exit codes: 0 when every verdict passes, 1 when a verdict fails, 2 on a
configuration error (nothing is written in that case).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, ito
from .config import COMMANDS, SCHEMA_VERSION, ConfigError, Scenario, load_scenario
from .noise import isometry_audit, make_noise_batch, uniform_grid, wiener_covariance_audit
from .solver import (BlowUpError, PicardDivergenceError, audit_assumptions, simulate_path,
                     yosida_convergence_study)
from .stability import StabilityError, certify_stability, lyapunov_audit, mc_second_moment

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _r(v) -> str:
    return repr(float(v))


def _csv(header, rows) -> str:
    return "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n"


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o))
    return json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n"


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- studies -------------------------------------------------------------------------


def _study_simulate(sc: Scenario):
    scheme = sc.scheme()
    noise = make_noise_batch(sc.qspec, sc.levy, uniform_grid(sc.T, sc.M), sc.seed, sc.paths)
    report = {"scheme": scheme.label(), "a3_audit": audit_assumptions(sc.coeffs, sc.qspec, sc.levy).to_dict()}
    try:
        path = simulate_path(sc.space, sc.coeffs, sc.levy, sc.x0, noise, scheme)
    except BlowUpError as e:
        report.update(verdict="fail", error=str(e))
        return False, {}, report
    except PicardDivergenceError as e:
        report.update(verdict="fail", error=str(e), picard_distances=e.distances)
        return False, {}, report
    sq = np.sum(path.states**2, axis=2)
    est = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / np.sqrt(sq.shape[0]) if sq.shape[0] > 1 else np.zeros_like(est)
    curve = _csv(["t", "estimate", "stderr"],
                 ([_r(t), _r(e), _r(s)] for t, e, s in zip(path.t_grid, est, se)))
    report.update(verdict="pass", final_second_moment=float(est[-1]),
                  picard_distances=path.picard_distances)
    return True, {"curve.csv": curve, "trajectory.csv": path.to_csv(0)}, report


def _ito_reports(sc: Scenario):
    cfg = sc.sections.get("ito", {})
    formula = cfg.get("formula", "strong")
    psi = sc.psi()
    if formula == "mild":
        reps = ito.ito_residual_mild(sc.space, sc.coeffs, sc.qspec, sc.levy, psi, sc.x0, sc.T, sc.M,
                                     sc.run["n_values"], sc.paths, sc.seed)
        return reps, ito.mild_trend(reps), {"trend": "decreasing" if ito.mild_trend(reps) else "not decreasing"}
    noise = make_noise_batch(sc.qspec, sc.levy, uniform_grid(sc.T, sc.M), sc.seed, sc.paths)
    path = simulate_path(sc.space, sc.coeffs, sc.levy, sc.x0, noise, sc.scheme())
    if formula in ("strong", "yosida"):
        rep = ito.ito_residual_strong(sc.space, sc.coeffs, sc.qspec, sc.levy, psi, path)
    elif formula == "ichikawa":
        if psi.closure is None:
            psi = ito.with_generator_closure(sc.space, psi)
        rep = ito.ichikawa_residual(sc.space, sc.coeffs, sc.qspec, sc.levy, psi, path)
    else:
        rep = ito.semigroup_mild_residual(sc.space, sc.coeffs, sc.levy, psi, path)
    tol_abs = float(cfg.get("tol_abs", 1e-6))
    tol_rel = float(cfg.get("tol_rel", 0.0))
    ok = rep.passes(tol_abs, tol_rel, float(cfg.get("z_max", 3.0)))
    return [rep], ok, {"z": rep.z if rep.n_paths > 1 else None}


def _study_verify_ito(sc: Scenario):
    try:
        reps, ok, extra = _ito_reports(sc)
    except ito.ItoError as e:
        return False, {}, {"verdict": "fail", "error": str(e)}
    report = json.loads(ito.reports_to_json(reps))
    report.update(extra, verdict="pass" if ok else "fail", psi=sc.psi().name)
    return ok, {"residuals.csv": ito.reports_to_csv(reps)}, report


def _study_yosida(sc: Scenario):
    rep = yosida_convergence_study(sc.space, sc.coeffs, sc.qspec, sc.levy, sc.x0, sc.T, sc.M,
                                   sc.run["n_values"], sc.paths, sc.seed)
    rows = ([_r(n), _r(e), _r(s), _r(lo), _r(hi)]
            for n, e, s, (lo, hi) in zip(rep.n_values, rep.sup_errors, rep.stderrs, rep.ci))
    ok = rep.verdict in ("decreasing", "exact")
    report = rep.to_dict()
    report["pass"] = ok
    return ok, {"curve.csv": _csv(["n", "sup_error", "stderr", "ci_low", "ci_high"], rows)}, report


def _study_stability(sc: Scenario):
    ls = sc.lyapunov()
    st = sc.sections.get("stability", {})
    samples, radius = int(st.get("audit_samples", 1000)), float(st.get("audit_radius", 10.0))
    try:
        rep = certify_stability(sc.space, sc.coeffs, sc.qspec, sc.levy, ls, sc.x0, sc.T, sc.M,
                                sc.paths, sc.seed, samples, radius)
    except StabilityError as e:
        audit = lyapunov_audit(sc.space, sc.coeffs, sc.qspec, sc.levy, ls, samples, radius, sc.seed)
        return False, {}, {"verdict": "fail", "error": str(e), "audit": audit.to_dict(),
                           "constants": ls.to_dict()}
    report = rep.to_dict()
    report["limsup_within_M"] = rep.limsup_ok()
    return rep.passed, {"curve.csv": rep.to_csv()}, report


def _study_noise_audit(sc: Scenario):
    na = sc.sections.get("noise_audit", {})
    trials = int(na.get("trials", 100000))
    interval = float(na.get("interval", 0.5))
    reports, ok = {}, True
    for i in range(sc.levy.n_atoms):
        r = isometry_audit(sc.levy, interval, trials, seed=sc.seed, atom_set=[i])
        reports[f"atom_{i}"] = r.to_dict()
        ok &= r.passed
    if sc.levy.n_atoms:
        r = isometry_audit(sc.levy, interval, trials, seed=sc.seed)
        reports["all_atoms"] = r.to_dict()
        ok &= r.passed
    cov = wiener_covariance_audit(sc.qspec, float(na.get("dt", 0.01)), int(na.get("samples", 20000)),
                                  seed=sc.seed)
    reports["wiener_covariance"] = cov.to_dict()
    ok &= cov.passed
    reports["verdict"] = "pass" if ok else "fail"
    return ok, {}, reports


STUDY_RUNNERS = {
    "simulate": _study_simulate,
    "verify_ito": _study_verify_ito,
    "yosida_convergence": _study_yosida,
    "stability": _study_stability,
    "noise_audit": _study_noise_audit,
}


def run(sc: Scenario, out_dir=None) -> tuple[int, dict]:
    """Execute a validated scenario, write artifacts, return (exit code, {name: path})."""
    ok, files, report = STUDY_RUNNERS[sc.study](sc)
    out = Path(out_dir or sc.output_dir)
    files = dict(files)
    files["report.json"] = _json(report)
    written = {}
    for name in sorted(files):
        write_atomic(out / name, files[name])
        written[name] = out / name
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "study": sc.study,
        "config_path": sc.source_path,
        "config_sha256": hashlib.sha256(sc.source_text.encode()).hexdigest(),
        "seed": sc.seed,
        "paths": sc.paths,
        "verdict": "pass" if ok else "fail",
        "files": {n: hashlib.sha256(files[n].encode()).hexdigest() for n in sorted(files)},
    }
    write_atomic(out / "manifest.json", _json(manifest))
    written["manifest.json"] = out / "manifest.json"
    return (EXIT_PASS if ok else EXIT_FAIL), written


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdelab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        s = sub.add_parser(cmd)
        s.add_argument("config")
        s.add_argument("--out", help="output directory (overrides output.dir)")
        s.add_argument("--paths", type=int, help="number of paths (overrides run.paths)")
        s.add_argument("--seed", type=int, help="base seed (overrides seed)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        sc = load_scenario(args.config, COMMANDS[args.command],
                           {"seed": args.seed, "run.paths": args.paths, "output.dir": args.out})
    except ConfigError as e:
        for d in e.diagnostics:
            print(f"error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    code, written = run(sc)
    verdict = "pass" if code == EXIT_PASS else "fail"
    print(f"{args.command}: {verdict} ({written['report.json'].parent})")
    return code


if __name__ == "__main__":
    sys.exit(main())
