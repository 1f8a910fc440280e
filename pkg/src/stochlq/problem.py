"""LQ problem data in eigen-coordinates and numeric assumption checks."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .errors import AssumptionError
from .spectral import (
    GalerkinMatrix,
    SpectralBasis,
    hlambda_operator_norm,
    multiplication_matrix,
)

R_MIN = 1e-6
PSD_TOL = 1e-12
AS3_BOUND = 1e8

DETERMINISTIC = "deterministic"
BROWNIAN = "brownian-functional"


@dataclass(frozen=True)
class CoefficientProcess:
    """A matrix-valued coefficient depending on ``(t, W(t))``.

    ``fn(t, w)`` must be pure and vectorized in ``w``: for an array of
    Brownian values of shape ``(P,)`` it returns ``(P, rows, cols)``.
    Deterministic coefficients store only ``matrix``.
    """

    shape: tuple
    kind: str = DETERMINISTIC
    matrix: Optional[np.ndarray] = None
    fn: Optional[Callable] = None
    name: str = ""
    symmetric: bool = False
    smoothness: str = "C^inf"

    @classmethod
    def constant(cls, matrix, name="", symmetric=False, smoothness="C^inf"):
        M = np.array(matrix, dtype=float, ndmin=2)
        if symmetric:
            M = 0.5 * (M + M.T)
        M.setflags(write=False)
        return cls(M.shape, DETERMINISTIC, M, None, name, symmetric, smoothness)

    @classmethod
    def zeros(cls, rows, cols=None, name=""):
        return cls.constant(np.zeros((rows, rows if cols is None else cols)), name)

    @classmethod
    def brownian(cls, fn, shape, name="", symmetric=False, smoothness="C^inf"):
        return cls(tuple(shape), BROWNIAN, None, fn, name, symmetric, smoothness)

    @classmethod
    def scaled(cls, matrix, factor, name="", symmetric=False, random=True, smoothness="C^inf"):
        """``factor(t, w) * matrix`` with a scalar factor vectorized in ``w``."""
        M = np.array(matrix, dtype=float, ndmin=2)
        if symmetric:
            M = 0.5 * (M + M.T)
        M.setflags(write=False)

        def fn(t, w):
            f = np.asarray(factor(t, w), dtype=float)
            return f[..., None, None] * M

        if not random:
            return cls.constant(np.asarray(fn(0.0, 0.0)), name, symmetric, smoothness)
        return cls(M.shape, BROWNIAN, None, fn, name, symmetric, smoothness)

    @property
    def deterministic(self) -> bool:
        return self.kind == DETERMINISTIC

    def eval(self, t: float, w=0.0) -> np.ndarray:
        """Matrix at ``(t, w)``; a batch of ``w`` gives a leading path axis.

        Deterministic coefficients always return a single ``(rows, cols)`` matrix.
        """
        if self.deterministic:
            return self.matrix
        w = np.asarray(w, dtype=float)
        out = np.asarray(self.fn(t, w), dtype=float)
        out = np.broadcast_to(out, w.shape + tuple(self.shape))
        if self.symmetric:
            out = 0.5 * (out + np.swapaxes(out, -1, -2))
        return out


@dataclass(frozen=True)
class CoefficientSnapshot:
    t: float
    A1: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G: Optional[np.ndarray] = None


@dataclass(frozen=True)
class LQProblem:
    """Galerkin-truncated LQ problem.

    The leading operator is diagonal in the basis; ``mu_override`` replaces its
    eigenvalues (used for scalar benchmarks with a vanishing semigroup).
    """

    basis: SpectralBasis
    T: float
    A1: CoefficientProcess
    B: CoefficientProcess
    C: CoefficientProcess
    D: CoefficientProcess
    Q: CoefficientProcess
    R: CoefficientProcess
    G: CoefficientProcess
    steps: int = 100
    mu_override: Optional[tuple] = None
    r_min: float = R_MIN
    name: str = ""

    def __post_init__(self):
        n, k = self.basis.modes, self.control_dim
        expected = {"A1": (n, n), "C": (n, n), "Q": (n, n), "G": (n, n),
                    "B": (n, k), "D": (n, k), "R": (k, k)}
        for key, shape in expected.items():
            got = tuple(getattr(self, key).shape)
            if got != shape:
                raise ValueError(f"coefficient {key} has shape {got}, expected {shape}")
        if self.T <= 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if self.mu_override is not None and len(self.mu_override) != n:
            raise ValueError("mu_override length must equal the number of modes")

    @property
    def modes(self) -> int:
        return self.basis.modes

    @property
    def control_dim(self) -> int:
        return self.B.shape[1]

    @property
    def mu(self) -> np.ndarray:
        if self.mu_override is not None:
            return np.asarray(self.mu_override, dtype=float)
        return self.basis.eigenvalues

    @property
    def deterministic(self) -> bool:
        return all(getattr(self, k).deterministic for k in ("A1", "B", "C", "D", "Q", "R", "G"))

    def with_mu(self, mu) -> "LQProblem":
        return dataclasses.replace(self, mu_override=tuple(np.broadcast_to(mu, (self.modes,)).tolist()))

    def replace(self, **changes) -> "LQProblem":
        return dataclasses.replace(self, **changes)

    def evaluate(self, t: float, w=0.0) -> CoefficientSnapshot:
        return evaluate_coefficients(self, t, w)


def evaluate_coefficients(problem: LQProblem, t: float, w=0.0) -> CoefficientSnapshot:
    """Materialize every coefficient at ``(t, w)``; ``G`` only at the terminal time."""
    eps = 1e-12 * max(1.0, problem.T)
    if t < -eps or t > problem.T + eps:
        raise ValueError(f"t={t} outside [0, {problem.T}]")
    G = problem.G.eval(problem.T, w) if abs(t - problem.T) <= eps else None
    return CoefficientSnapshot(
        t,
        problem.A1.eval(t, w),
        problem.B.eval(t, w),
        problem.C.eval(t, w),
        problem.D.eval(t, w),
        problem.Q.eval(t, w),
        problem.R.eval(t, w),
        G,
    )


# --- parabolic (sSLQ) construction -------------------------------------------------

@dataclass(frozen=True)
class SeparableField:
    """Coefficient ``spatial(x) * factor(t, w)``; ``factor`` must vectorize over ``w``."""

    spatial: Union[Callable, float]
    factor: Optional[Callable] = None
    random: bool = True


def _as_field(value) -> SeparableField:
    if isinstance(value, SeparableField):
        return value
    return SeparableField(value, None, False)


def _process_from_field(fld: SeparableField, basis, name, symmetric, quad_points):
    gm = multiplication_matrix(fld.spatial, basis, quad_points, name=name)
    if fld.factor is None:
        return CoefficientProcess.constant(gm.entries, name, symmetric)
    return CoefficientProcess.scaled(gm.entries, fld.factor, name, symmetric, random=fld.random)


def _pointwise_min(fld: SeparableField, basis: SpectralBasis, T: float, rng, samples: int = 64):
    coords, _ = basis.quadrature()
    if callable(fld.spatial):
        vals = np.broadcast_to(np.asarray(fld.spatial(*coords), dtype=float), coords[0].shape)
    else:
        vals = np.full(coords[0].shape, float(fld.spatial))
    if fld.factor is None:
        return float(vals.min())
    t = rng.uniform(0.0, T, samples)
    w = rng.standard_normal(samples) * np.sqrt(t)
    f = np.array([float(np.asarray(fld.factor(ti, wi))) for ti, wi in zip(t, w)])
    return float(min((vals * f.min()).min(), (vals * f.max()).min()))


def from_parabolic_spec(a1, a2, b1, b2, q, r, g, basis: SpectralBasis, T: float, steps: int,
                        *, r_min: float = R_MIN, quad_points=None, validate: bool = True,
                        name: str = "") -> LQProblem:
    """Project the stochastic heat-equation LQ problem onto ``basis``.

    Each coefficient is a number, a spatial function ``f(x)`` (``f(x, y)`` in
    2-D) or a :class:`SeparableField`. Mapping: ``A1 <- a1, B <- b1, C <- a2,
    D <- b2, Q <- q, R <- r, G <- g``; the control space equals the state space.
    With ``validate`` the pointwise signs ``q, g >= 0`` and ``r >= r_min`` are
    enforced and the sampled assumption report must pass.
    """
    fields_ = dict(a1=a1, a2=a2, b1=b1, b2=b2, q=q, r=r, g=g)
    fields_ = {k: _as_field(v) for k, v in fields_.items()}
    # multiplication operators are self-adjoint, so every Galerkin matrix is symmetrized
    procs = {k: _process_from_field(f, basis, k, True, quad_points) for k, f in fields_.items()}
    problem = LQProblem(basis, float(T), procs["a1"], procs["b1"], procs["a2"], procs["b2"],
                        procs["q"], procs["r"], procs["g"], int(steps), r_min=r_min, name=name)
    if validate:
        rng = np.random.default_rng(0)
        witnesses = {}
        for key, floor in (("q", 0.0), ("g", 0.0), ("r", r_min)):
            lo = _pointwise_min(fields_[key], basis, T, rng)
            if lo < floor - PSD_TOL:
                witnesses[key] = lo
        report = check_assumptions(problem, samples=32, rng_seed=0)
        if witnesses:
            res = report.results["AS2"]
            res.passed = False
            res.witnesses.update({f"pointwise_min_{k}": v for k, v in witnesses.items()})
            res.note = "pointwise sign violation: " + ", ".join(sorted(witnesses))
        if not report.ok:
            raise AssumptionError(f"assumption check failed: {report.failures()}", report)
    return problem


# --- assumption report ---------------------------------------------------------------

@dataclass
class AssumptionResult:
    name: str
    passed: bool
    mandatory: bool = True
    witnesses: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "mandatory": self.mandatory,
                "witnesses": {k: _plain(v) for k, v in sorted(self.witnesses.items())},
                "note": self.note}


@dataclass
class AssumptionReport:
    results: dict
    samples: int
    seed: int

    @property
    def ok(self) -> bool:
        return all(r.passed for r in self.results.values() if r.mandatory)

    def failures(self):
        return [k for k, r in self.results.items() if r.mandatory and not r.passed]

    def require(self):
        if not self.ok:
            raise AssumptionError(f"assumption check failed: {self.failures()}", self)
        return self

    def to_dict(self):
        return {"samples": self.samples, "seed": self.seed,
                "results": {k: r.to_dict() for k, r in self.results.items()}}


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


def _min_eig(M):
    return float(np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, -1, -2))).min())


def check_assumptions(problem: LQProblem, samples: int = 64, rng_seed: int = 0) -> AssumptionReport:
    """Numeric surrogates for the standing assumptions, sampled over ``(t, W(t))``.

    AS0/AS1 are structural (diagonal contraction semigroup, orthonormal sine
    basis). AS2 samples minimum eigenvalues of Q, R, G. AS3/AS4 record the
    largest lambda-weighted operator norms seen; in the truncated model the
    dense control subspace coincides with the full control space.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    T = problem.T
    ts = np.sort(rng.uniform(0.0, T, samples))
    ws = rng.standard_normal(samples) * np.sqrt(ts)
    wT = rng.standard_normal(samples) * np.sqrt(T)
    basis = problem.basis
    results = {}

    mu = problem.mu
    margin = float(-mu.max())
    results["AS0"] = AssumptionResult("AS0", margin >= -PSD_TOL,
                                      witnesses={"k": basis.k, "contraction_margin": margin},
                                      note="diagonal semigroup exp(mu t), k = 0")
    ortho = basis.orthogonality_error()
    results["AS1"] = AssumptionResult("AS1", ortho < 1e-8,
                                      witnesses={"orthogonality_error": ortho},
                                      note="sine eigenbasis by construction")

    minQ = min(_min_eig(problem.Q.eval(t, w)) for t, w in zip(ts, ws))
    minR = min(_min_eig(problem.R.eval(t, w)) for t, w in zip(ts, ws))
    minG = min(_min_eig(problem.G.eval(T, w)) for w in wT)
    scale = max(1.0, abs(minQ), abs(minG))
    as2 = minQ >= -PSD_TOL * scale and minG >= -PSD_TOL * scale and minR >= problem.r_min
    results["AS2"] = AssumptionResult("AS2", bool(as2), witnesses={
        "min_eig_Q": minQ, "min_eig_R": minR, "min_eig_G": minG, "r_min": problem.r_min,
        "max_abs_w": float(max(np.abs(ws).max(), np.abs(wT).max()))})

    def sup_norm(proc, terminal=False, prime=False):
        pts = zip([T] * samples, wT) if terminal else zip(ts, ws)
        return max(hlambda_operator_norm(proc.eval(t, w), basis, prime) for t, w in pts)

    w3 = {}
    for key in ("A1", "C", "Q", "G"):
        proc = getattr(problem, key)
        w3[f"{key}_H_lambda"] = sup_norm(proc, key == "G")
        w3[f"{key}_H_lambda_prime"] = sup_norm(proc, key == "G", prime=True)
    ok3 = all(np.isfinite(v) and v <= AS3_BOUND for v in w3.values())
    results["AS3"] = AssumptionResult("AS3", bool(ok3), witnesses=w3,
                                      note=f"sup of weighted operator norms <= {AS3_BOUND:g}")

    w4 = {}
    if problem.control_dim == problem.modes:
        for key in ("B", "D", "R"):
            w4[f"{key}_H_lambda"] = sup_norm(getattr(problem, key))
    else:
        for key in ("B", "D"):
            s = basis.graph_norms / basis.lambda_weights
            w4[f"{key}_to_H_lambda"] = max(
                float(np.linalg.norm(s[:, None] * getattr(problem, key).eval(t, w), 2))
                for t, w in zip(ts, ws))
        w4["R_norm"] = max(float(np.linalg.norm(problem.R.eval(t, w), 2)) for t, w in zip(ts, ws))
    ok4 = all(np.isfinite(v) and v <= AS3_BOUND for v in w4.values())
    results["AS4"] = AssumptionResult("AS4", bool(ok4), witnesses=w4,
                                      note="U_tilde = U under Galerkin truncation")
    return AssumptionReport(results, samples, rng_seed)
