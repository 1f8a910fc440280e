"""Command-line entry point: solve -> synthesize -> simulate -> verify, with a run manifest.

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 verification failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, parse_config
from .errors import AssumptionError, ConfigurationError, SimulationError, SolverError
from .forward import OpenLoop, TimeGrid, evaluate_cost, path_normals, simulate, write_trajectories_csv
from .riccati import solve_riccati_bsde_direct, solve_riccati_ode, theta_fixed_point, write_p_diagnostics
from .spectral import build_basis, hs_embedding_terms
from .verify import (
    IdentityReport,
    TestInputSet,
    check_cost_decomposition,
    check_hlambda_transposition,
    check_optimality,
    check_stationarity_and_K,
    check_transposition_identity,
    check_value_identity,
)

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4
ENV_OUT = "STOCHLQ_OUT"
DEFAULT_OUT = "stochlq-out"
STREAM_OPEN_LOOP = 21
COMMANDS = ("spectrum", "solve", "simulate", "verify", "run")
REPORT_COLUMNS = ("name", "lhs", "lhs_se", "rhs", "rhs_se", "diff_se", "residual", "tolerance",
                  "passed", "inputs_digest")


def plain(obj):
    """Convert numpy scalars/arrays and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if obj is None or isinstance(obj, (str, int)):
        return obj
    return repr(obj)


def _dumps(obj) -> str:
    return json.dumps(plain(obj), indent=2) + "\n"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_digest: str
    version: str = __version__
    seed: Optional[int] = None
    stages: list = field(default_factory=list)     # {"name", "status", "detail"}
    timings: dict = field(default_factory=dict)    # stage -> seconds, kept out of manifest.json
    stage_log: list = field(default_factory=list)
    files: dict = field(default_factory=dict)      # relative name -> sha256
    status: str = "ok"
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    exit_code: int = EXIT_OK
    directory: Optional[str] = None
    reports: list = field(default_factory=list)

    def add_file(self, path) -> None:
        path = Path(path)
        name = path.name if self.directory is None else os.path.relpath(path, self.directory)
        self.files[name] = sha256_file(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "version": self.version,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "status": self.status,
            "exit_code": self.exit_code,
            "failed_stage": self.failed_stage,
            "error": self.error,
            "stage_log": list(self.stage_log),
            "stages": list(self.stages),
            "files": dict(sorted(self.files.items())),
            "checks": {r.name: bool(r.passed) for r in self.reports},
        }

    def write(self, directory=None) -> Path:
        """Write ``manifest.json`` (reproducible bytes) and ``timings.json`` (wall clock)."""
        directory = Path(directory or self.directory)
        (directory / "timings.json").write_text(_dumps(self.timings))
        path = directory / "manifest.json"
        path.write_text(_dumps(self.to_dict()))
        return path


class _Stage:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name, self.detail = manifest, name, {}

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        rec = {"name": self.name, "status": "ok" if exc is None else "failed", "detail": plain(self.detail)}
        self.manifest.stages.append(rec)
        self.manifest.timings[self.name] = round(time.perf_counter() - self.t0, 6)
        if exc is not None and self.manifest.failed_stage is None:
            self.manifest.failed_stage = self.name
            self.manifest.status = "failed"
            self.manifest.error = f"{type(exc).__name__}: {exc}"
        return False


# --- report emission -----------------------------------------------------------------

def emit_report(manifest: Optional[RunManifest], reports, fmt: str, directory=None) -> list:
    """Write identity reports as JSON (one object per report plus an array) or CSV.

    Field order is fixed, so identical reports give byte-identical files.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("emit_report needs at least one report")
    directory = Path(directory or (manifest.directory if manifest else "."))
    directory.mkdir(parents=True, exist_ok=True)
    if not os.access(directory, os.W_OK):
        raise OSError(f"output directory {directory} is not writable")
    written = []
    if fmt == "json":
        for r in reports:
            p = directory / f"report_{r.name}.json"
            p.write_text(_dumps(r.to_dict()))
            written.append(p)
        p = directory / "reports.json"
        p.write_text(_dumps([r.to_dict() for r in reports]))
        written.append(p)
    elif fmt == "csv":
        p = directory / "reports.csv"
        with open(p, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(REPORT_COLUMNS)
            for r in reports:
                d = r.to_dict()
                wr.writerow([d["name"]] + [repr(float(d[c])) for c in REPORT_COLUMNS[1:7]]
                            + [repr(float(d["tolerance"])), str(d["passed"]).lower(), d["inputs_digest"]])
        written.append(p)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if manifest is not None:
        for p in written:
            manifest.add_file(p)
    return written


def format_table(reports) -> str:
    head = f"{'check':<24}{'lhs':>14}{'+-':>10}{'rhs':>14}{'+-':>10}{'residual':>11}  pass"
    lines = [head, "-" * len(head)]
    for r in reports:
        lines.append(f"{r.name:<24}{r.lhs:>14.6g}{r.lhs_se:>10.2g}{r.rhs:>14.6g}{r.rhs_se:>10.2g}"
                     f"{r.residual:>11.3g}  {'yes' if r.passed else 'NO'}")
    return "\n".join(lines)


# --- pipeline ------------------------------------------------------------------------

def _needs_seed(cfg: ExperimentConfig, command: str, problem) -> bool:
    if command in ("simulate", "verify", "run"):
        return True
    return command == "solve" and (cfg.solver.regime in ("bsde", "fixed-point") or not problem.deterministic)


def select_regime(cfg: ExperimentConfig, problem) -> str:
    regime = cfg.solver.regime
    if regime == "auto":
        return "ode" if problem.deterministic else "fixed-point"
    return regime


def solve(cfg: ExperimentConfig, problem, regime: str):
    s = cfg.solver
    seed = 0 if cfg.seed is None else cfg.seed
    if regime == "ode":
        return solve_riccati_ode(problem)
    if regime == "bsde":
        return solve_riccati_bsde_direct(problem, paths=s.paths, feature_degree=s.feature_degree, seed=seed)
    return theta_fixed_point(problem, paths=s.paths, feature_degree=s.feature_degree, seed=seed,
                             max_iters=s.max_iters, tol=s.tol)


def initial_state(cfg: ExperimentConfig, problem) -> np.ndarray:
    eta = np.asarray(cfg.verify.eta, dtype=float)
    lam = problem.basis.lambda_weights
    if eta.ndim == 0:
        return float(eta) * lam / lam[0]
    if eta.shape != (problem.modes,):
        raise ConfigurationError("invalid configuration",
                                 [f"verify.eta: expected {problem.modes} entries, got {eta.size}"])
    return eta


def open_loop_controls(seed: int, problem, steps: int, paths: int, pieces: int = 4) -> np.ndarray:
    """Per-path piecewise-constant Gaussian open-loop controls."""
    lv = path_normals(seed, STREAM_OPEN_LOOP, 0, paths, (pieces, problem.control_dim))
    piece = np.minimum((np.arange(steps) * pieces) // steps, pieces - 1)
    return lv[:, piece, :]


def solution_summary(sol, regime: str) -> dict:
    diag = dict(sol.diagnostics)
    keep = {k: diag[k] for k in ("method", "min_eig_K", "iterations", "history", "max_condition", "tol",
                                 "paths") if k in diag}
    return {"regime": regime, "representation": sol.representation, "converged": bool(sol.converged),
            "steps": sol.grid.steps, "P0": np.asarray(sol.P0(0.0)), "diagnostics": keep}


def run_checks(cfg: ExperimentConfig, problem, sol, workers: int = 1) -> list:
    v = cfg.verify
    seed = cfg.seed
    eta = initial_state(cfg, problem)
    inputs = TestInputSet(seed=seed)
    reports = []
    for name in v.checks:
        if name == "value":
            r = check_value_identity(problem, sol.theta, sol.P, eta, v.paths, seed, v.tolerance, workers=workers)
        elif name == "optimality":
            r = check_optimality(problem, sol.theta, eta, v.perturbations, v.paths, seed, sol.grid,
                                 workers=workers)
        elif name == "transposition":
            r = check_transposition_identity(problem, sol, inputs, v.t, v.paths, seed, v.tolerance,
                                             workers=workers)
        elif name == "hlambda_transposition":
            r = check_hlambda_transposition(problem, sol.theta, sol, inputs, v.t, v.paths, seed,
                                            v.tolerance, workers=workers)
        elif name == "cost_decomposition":
            sub = sol.grid.sub(v.t)
            u = open_loop_controls(seed, problem, sub.steps, v.paths)
            r = check_cost_decomposition(problem, sol.theta, sol, u, eta, v.t, v.paths, seed, v.tolerance,
                                         workers=workers)
        else:
            tol = v.stationarity_tolerance
            if tol is None:
                tol = 1e-3 if sol.diagnostics.get("method") == "fixed-point" else 1e-10
            r = check_stationarity_and_K(problem, sol, v.samples, seed, tol)
        reports.append(r)
    return reports


def write_spectrum(cfg: ExperimentConfig, directory: Path, manifest: RunManifest) -> None:
    p = cfg.problem
    basis = build_basis(p.m, p.N)
    terms = hs_embedding_terms(basis)
    path = directory / "spectrum.csv"
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mode", "frequency", "mu", "lambda", "graph_norm", "hs_term", "hs_partial_sum"])
        for j in range(basis.modes):
            wr.writerow([j + 1, "x".join(str(int(f)) for f in basis.frequencies[j]), repr(float(basis.eigenvalues[j])),
                         repr(float(basis.lambda_weights[j])), repr(float(basis.graph_norms[j])),
                         repr(float(terms[j])), repr(float(terms[: j + 1].sum()))])
    manifest.add_file(path)
    summary = directory / "spectrum.json"
    summary.write_text(_dumps({"m": p.m, "N": p.N, "orthogonality_error": basis.orthogonality_error(),
                               "hs_sum": float(terms.sum())}))
    manifest.add_file(summary)


def resolve_out(cfg: ExperimentConfig, out: Optional[str]) -> Path:
    return Path(out or cfg.output.directory or os.environ.get(ENV_OUT) or DEFAULT_OUT)


def run_experiment(cfg: ExperimentConfig, command: str = "run", out: Optional[str] = None,
                   workers: Optional[int] = None, echo: bool = False) -> RunManifest:
    """Execute ``command`` for a validated config and write all outputs plus ``manifest.json``.

    Stage failures are recorded in the manifest (``failed_stage``) and mapped to
    an exit code; outputs written before the failure are kept.
    """
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    directory = resolve_out(cfg, out)
    directory.mkdir(parents=True, exist_ok=True)
    workers = cfg.output.workers if workers is None else workers
    manifest = RunManifest(command, cfg.digest, seed=cfg.seed, directory=str(directory))
    try:
        _pipeline(cfg, command, directory, workers, manifest, echo)
    except (ConfigurationError, AssumptionError) as exc:
        manifest.exit_code = EXIT_CONFIG
        _fail(manifest, exc, exc_errors=getattr(exc, "errors", None))
    except (SolverError, SimulationError, ValueError, np.linalg.LinAlgError) as exc:
        manifest.exit_code = EXIT_SOLVER
        _fail(manifest, exc)
    manifest.write(directory)
    return manifest


def _fail(manifest, exc, exc_errors=None):
    manifest.status = "failed"
    if manifest.error is None:
        manifest.error = f"{type(exc).__name__}: {exc}"
    if exc_errors:
        manifest.error += " [" + "; ".join(exc_errors) + "]"


def _pipeline(cfg, command, directory, workers, manifest, echo):
    with _Stage(manifest, "problem") as st:
        problem = cfg.build_problem()
        st.detail = {"modes": problem.modes, "deterministic": problem.deterministic, "name": problem.name}
    if command == "spectrum":
        with _Stage(manifest, "spectrum"):
            write_spectrum(cfg, directory, manifest)
        manifest.stage_log.append("spectrum")
        return
    if cfg.seed is None and _needs_seed(cfg, command, problem):
        with _Stage(manifest, "config"):
            raise ConfigurationError("seed is mandatory for stochastic runs",
                                     ["seed: required for stochastic runs (set it or pass --seed)"])

    regime = select_regime(cfg, problem)
    with _Stage(manifest, "solve") as st:
        manifest.stage_log.append(f"solve:{regime}")
        if regime != "ode":
            manifest.stage_log.append("regression")
        sol = solve(cfg, problem, regime)
        st.detail = {"regime": regime, "min_eig_K": sol.diagnostics.get("min_eig_K")}
        path = directory / "p_diagnostics.csv"
        write_p_diagnostics(sol, path)
        manifest.add_file(path)
        path = directory / "solve.json"
        path.write_text(_dumps(solution_summary(sol, regime)))
        manifest.add_file(path)
    manifest.stage_log.append("synthesize")
    if command == "solve":
        return

    if command in ("simulate", "run"):
        with _Stage(manifest, "simulate") as st:
            manifest.stage_log.append("simulate")
            eta = initial_state(cfg, problem)
            bundle = simulate(problem, sol.grid, eta, sol.feedback(), paths=cfg.verify.paths, seed=cfg.seed,
                              workers=workers)
            cost = evaluate_cost(problem, bundle, keep_per_path=False)
            value = 0.5 * float(eta @ np.asarray(sol.P0(0.0)) @ eta)
            path = directory / "cost.json"
            path.write_text(_dumps({"mean": cost.mean, "standard_error": cost.standard_error,
                                    "paths": cost.paths, "value_formula": value, "eta": eta}))
            manifest.add_file(path)
            if cfg.output.dump_trajectories:
                k = min(cfg.output.trajectory_paths, bundle.n_paths)
                sub = dataclasses.replace(bundle, paths=bundle.paths[:k])
                path = directory / "trajectories.csv"
                write_trajectories_csv(sub, path)
                manifest.add_file(path)
        if command == "simulate":
            return

    with _Stage(manifest, "verify") as st:
        manifest.stage_log.append("verify")
        reports = run_checks(cfg, problem, sol, workers)
        manifest.reports = reports
        st.detail = {"checks": [r.name for r in reports]}
    if reports:
        with _Stage(manifest, "report"):
            for fmt in cfg.output.formats:
                emit_report(manifest, reports, fmt, directory)
        if echo:
            print(format_table(reports))
    failed = [r.name for r in reports if not r.passed and r.name in cfg.verify.mandatory_checks]
    if failed:
        manifest.status = "verification-failed"
        manifest.exit_code = EXIT_VERIFY
        manifest.error = f"mandatory checks failed: {', '.join(failed)}"


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochlq", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"stochlq {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, helptext in (("spectrum", "basis diagnostics"), ("solve", "solve the Riccati equation"),
                           ("simulate", "solve and simulate the closed loop"),
                           ("verify", "solve and run the identity checks"),
                           ("run", "full pipeline with manifest")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON or YAML experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help=f"output directory (default: config, ${ENV_OUT}, ./{DEFAULT_OUT})")
        p.add_argument("--paths", type=int, help="override solver and verification path counts")
        p.add_argument("--steps", type=int, help="override solver.steps")
        p.add_argument("--workers", type=int, help="worker threads for path simulation")
        p.add_argument("--dump-trajectories", action="store_true", help="write trajectories.csv")
    return ap


def apply_overrides(raw_cfg: ExperimentConfig, args) -> ExperimentConfig:
    from .config import config_from_dict
    d = raw_cfg.to_dict()
    if args.seed is not None:
        d["seed"] = args.seed
    if args.paths is not None:
        d["solver"]["paths"] = args.paths
        d["verify"]["paths"] = args.paths
    if args.steps is not None:
        d["solver"]["steps"] = args.steps
    if args.dump_trajectories:
        d["output"]["dump_trajectories"] = True
    d = {k: v for k, v in d.items() if v is not None}
    for sec in ("problem", "solver", "verify", "output"):
        d[sec] = {k: v for k, v in d[sec].items() if v is not None}
    return config_from_dict(d, source=raw_cfg.source)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(parse_config(args.config), args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = run_experiment(cfg, args.command, args.out, args.workers, echo=True)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if manifest.exit_code:
        print(f"{manifest.status} at stage {manifest.failed_stage or 'verify'}: {manifest.error}",
              file=sys.stderr)
    print(f"outputs in {manifest.directory}")
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
