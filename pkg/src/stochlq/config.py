"""Experiment configuration: schema validation, presets and problem construction."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np
import yaml

from .errors import AssumptionError, ConfigurationError
from .problem import LQProblem, SeparableField, from_parabolic_spec
from .spectral import build_basis

COEFFICIENTS = ("a1", "a2", "b1", "b2", "q", "r", "g")
CHECKS = ("value", "optimality", "transposition", "hlambda_transposition", "cost_decomposition",
          "stationarity")

_ZERO = {c: 0.0 for c in COEFFICIENTS}

PRESETS = {
    "heat-1d-deterministic": {
        "m": 1, "N": 8, "T": 1.0,
        "coefficients": {**_ZERO, "b1": 1.0, "q": 1.0, "r": 1.0, "g": 1.0},
    },
    "heat-2d-deterministic": {
        "m": 2, "N": 6, "T": 1.0,
        "coefficients": {**_ZERO, "b1": 1.0, "q": 1.0, "r": 1.0, "g": 1.0},
    },
    "heat-1d-noisy": {
        "m": 1, "N": 4, "T": 1.0,
        "coefficients": {
            **_ZERO,
            "a1": {"form": "trig", "amplitude": 0.5, "frequency": 1.0, "offset": 0.0},
            "a2": {"form": "affine", "c0": 0.3, "c1": 0.2},
            "b1": 1.0, "b2": 0.3, "q": 1.0, "r": 1.0, "g": 1.0,
        },
    },
    "heat-1d-random": {
        "m": 1, "N": 4, "T": 1.0,
        "coefficients": {
            **_ZERO,
            "a1": {"form": "constant", "value": 0.5, "random": {"kind": "sin"}},
            "a2": 0.2,
            "b1": 1.0, "b2": 0.2,
            "q": {"form": "constant", "value": 1.0, "random": {"kind": "cos"}},
            "r": 1.0,
            "g": {"form": "constant", "value": 1.0, "random": {"kind": "sin"}},
        },
    },
    "scalar-benchmark": {
        "m": 1, "N": 1, "T": 1.0, "mu": 0.0,
        "coefficients": {**_ZERO, "b1": 1.0, "r": 1.0, "g": 1.0},
    },
    "null": {
        "m": 1, "N": 4, "T": 1.0,
        "coefficients": {**_ZERO, "r": 1.0},
    },
    "wonham-random": {
        "m": 1, "N": 1, "T": 1.0, "mu": 0.0,
        "coefficients": {
            **_ZERO,
            "a1": {"form": "constant", "value": 0.5, "random": {"kind": "sin", "shift": 0.0, "scale": 1.0}},
            "b1": 1.0, "b2": 0.5, "q": 1.0, "r": 1.0,
            "g": {"form": "constant", "value": 1.0, "random": {"kind": "sin"}},
        },
    },
}


def load_schema() -> dict:
    return json.loads(resources.files("stochlq").joinpath("config.schema.json").read_text())


@dataclass
class ProblemConfig:
    preset: Optional[str] = None
    m: int = 1
    N: int = 8
    T: float = 1.0
    mu: Optional[object] = None
    r_min: float = 1e-6
    quad_points: Optional[int] = None
    coefficients: dict = field(default_factory=lambda: dict(_ZERO))


@dataclass
class SolverConfig:
    regime: str = "auto"
    steps: int = 200
    paths: int = 10_000
    feature_degree: int = 3
    tol: Optional[float] = None
    max_iters: int = 50


@dataclass
class VerifyConfig:
    checks: list = field(default_factory=lambda: ["value", "stationarity"])
    mandatory: Optional[list] = None
    paths: int = 10_000
    tolerance: float = 0.05
    stationarity_tolerance: Optional[float] = None
    perturbations: int = 20
    eta: object = 1.0
    t: float = 0.0
    samples: int = 256

    @property
    def mandatory_checks(self):
        return list(self.checks) if self.mandatory is None else list(self.mandatory)


@dataclass
class OutputConfig:
    directory: Optional[str] = None
    formats: list = field(default_factory=lambda: ["json", "csv"])
    dump_trajectories: bool = False
    trajectory_paths: int = 10
    workers: int = 1


@dataclass
class ExperimentConfig:
    problem: ProblemConfig
    solver: SolverConfig = field(default_factory=SolverConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: Optional[int] = None
    source: Optional[str] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("source")
        return d

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def build_problem(self) -> LQProblem:
        return build_problem(self)


def _schema_errors(raw) -> list:
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = []
    for e in sorted(validator.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path))):
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        errors.append(f"{where}: {e.message}")
    return errors


def config_from_dict(raw: dict, source: Optional[str] = None, validate_problem: bool = True) -> ExperimentConfig:
    """Validate ``raw`` against the schema, expand the preset and build the config."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping", ["<root>: expected an object"])
    errors = _schema_errors(raw)
    if errors:
        raise ConfigurationError("invalid configuration", errors)
    raw = copy.deepcopy(raw)
    pr = raw.get("problem", {})
    base = copy.deepcopy(PRESETS.get(pr.get("preset"), {}))
    coeffs = dict(base.get("coefficients", _ZERO))
    coeffs.update(pr.get("coefficients", {}))
    merged = {**base, **pr, "coefficients": coeffs}
    if "preset" not in pr and not set(COEFFICIENTS) <= set(pr.get("coefficients", {})):
        missing = sorted(set(COEFFICIENTS) - set(pr.get("coefficients", {})))
        raise ConfigurationError("invalid configuration",
                                 [f"problem.coefficients: missing {', '.join(missing)} (no preset given)"])
    cfg = ExperimentConfig(
        problem=ProblemConfig(**merged),
        solver=SolverConfig(**raw.get("solver", {})),
        verify=VerifyConfig(**raw.get("verify", {})),
        output=OutputConfig(**raw.get("output", {})),
        seed=raw.get("seed"),
        source=source,
    )
    unknown = set(cfg.verify.mandatory_checks) - set(CHECKS)
    if unknown:
        raise ConfigurationError("invalid configuration",
                                 [f"verify.mandatory: unknown checks {sorted(unknown)}"])
    if validate_problem:
        build_problem(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Read a JSON or YAML config file and validate it.

    Raises :class:`ConfigurationError` with a list of ``key.path: message``
    entries; sign violations of the cost coefficients are reported under
    ``problem.coefficients``.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} not found", [f"<file>: {path} does not exist"])
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot parse {path}", [f"<file>: {exc}"]) from exc
    return config_from_dict(raw, source=str(path))


# --- coefficient expressions ---------------------------------------------------------

_KINDS = {"sin": np.sin, "cos": np.cos, "tanh": np.tanh}


def _spatial(spec, m):
    if isinstance(spec, (int, float)):
        return float(spec)
    form = spec["form"]
    if form == "constant":
        return float(spec.get("value", 1.0))
    if form == "affine":
        c0, c1 = float(spec.get("c0", 0.0)), float(spec.get("c1", 0.0))
        return lambda *xs: c0 + c1 * sum(xs) / m
    a, k, off = float(spec.get("amplitude", 1.0)), float(spec.get("frequency", 1.0)), float(spec.get("offset", 0.0))

    def trig(*xs):
        out = a * np.ones_like(xs[0])
        for x in xs:
            out = out * np.cos(k * np.pi * x)
        return off + out
    return trig


def coefficient_field(spec, m: int) -> SeparableField:
    """Turn a config coefficient into ``spatial(x) * factor(t, W(t))``."""
    if isinstance(spec, str):
        spec = float(spec.replace("−", "-"))
    sp = _spatial(spec, m)
    rnd = spec.get("random") if isinstance(spec, dict) else None
    if rnd is None:
        return SeparableField(sp, None, random=False)
    f = _KINDS[rnd["kind"]]
    shift, scale = float(rnd.get("shift", 1.0)), float(rnd.get("scale", 0.5))
    return SeparableField(sp, lambda t, w: shift + scale * f(np.asarray(w, dtype=float)), random=True)


def build_problem(cfg: ExperimentConfig, validate: bool = True) -> LQProblem:
    p = cfg.problem
    basis = build_basis(p.m, p.N)
    fields = {}
    for name in COEFFICIENTS:
        spec = p.coefficients.get(name, 0.0)
        if isinstance(spec, str):
            try:
                float(spec.replace("−", "-"))
            except ValueError:
                raise ConfigurationError("invalid configuration",
                                         [f"problem.coefficients.{name}: not a number: {spec!r}"]) from None
        fields[name] = coefficient_field(spec, p.m)
    try:
        prob = from_parabolic_spec(fields["a1"], fields["a2"], fields["b1"], fields["b2"], fields["q"],
                                   fields["r"], fields["g"], basis, p.T, cfg.solver.steps,
                                   r_min=p.r_min, quad_points=p.quad_points, validate=validate,
                                   name=p.preset or "custom")
    except AssumptionError as exc:
        rep = exc.report
        fails = rep.failures() if rep is not None else []
        msgs = [f"problem.coefficients: assumption {k} violated ({rep.results[k].note})" for k in fails]
        raise ConfigurationError(str(exc), msgs or [f"problem.coefficients: {exc}"]) from exc
    if p.mu is not None:
        mu = np.broadcast_to(np.asarray(p.mu, dtype=float), (p.N,))
        prob = prob.with_mu(mu)
    return prob
