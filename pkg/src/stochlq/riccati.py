"""Backward Riccati / Lyapunov solvers and feedback synthesis.

Two regimes:

* deterministic coefficients -- the Riccati equation is a matrix ODE, integrated
  backward with exponential time differencing (ETDRK4) so the stiff diagonal
  ``A`` is propagated exactly by ``exp((mu_i + mu_j) h)``;
* coefficients driven by ``W(t)`` -- the BSDE is stepped backward on a cloud of
  Brownian paths, conditional expectations by least squares on monomials of
  ``W(t_k)``.

The random regime offers the linear Lyapunov equation for a given feedback,
the fixed-point iteration in the feedback, and a direct sweep with the
nonlinear driver as a cross-check.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import RegressionWarning, SingularKError, SolverError
from .forward import LinearFeedback, TimeGrid, path_normals
from .problem import CoefficientSnapshot, LQProblem

K_FLOOR = 1e-8
DEFAULT_DEGREE = 3
STREAM_CLOUD = 7
THETA_CACHE_LIMIT = 4_000_000   # floats kept per synthesized feedback


def _sym(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def _T(M):
    return np.swapaxes(M, -1, -2)


# --- regression ----------------------------------------------------------------------

def _monomials(z, degree):
    out = np.empty(z.shape + (degree + 1,))
    out[..., 0] = 1.0
    for d in range(1, degree + 1):
        out[..., d] = out[..., d - 1] * z
    return out


@dataclass(frozen=True)
class RegressionModel:
    """Matrix-valued polynomial in ``w / scale`` up to ``degree``."""

    degree: int
    scale: float
    coef: np.ndarray            # (degree + 1, rows, cols)
    condition: float = 1.0

    def features(self, w):
        return _monomials(np.asarray(w, dtype=float) / self.scale, self.degree)

    def predict(self, w=0.0) -> np.ndarray:
        X = self.features(w)
        return np.tensordot(X, self.coef, axes=([-1], [0]))


def design_matrix(w: np.ndarray, degree: int):
    """Monomial design with full column rank, lowering the degree if needed.

    Returns ``(X, degree_used, scale, condition)``. A degenerate cloud (all
    ``w`` equal, as at ``t = 0``) silently falls back to the constant feature.
    """
    w = np.asarray(w, dtype=float)
    spread = float(np.std(w))
    if spread == 0.0 or degree == 0:
        return np.ones((w.size, 1)), 0, 1.0, 1.0
    scale = float(np.sqrt(np.mean(w ** 2)))
    z = w / scale
    d = degree
    while d > 0:
        X = _monomials(z, d)
        s = np.linalg.svd(X, compute_uv=False)
        if s[-1] > s[0] * max(X.shape) * np.finfo(float).eps:
            return X, d, scale, float(s[0] / s[-1])
        d -= 1
    warnings.warn(f"regression design rank deficient; degree reduced from {degree} to 0",
                  RegressionWarning, stacklevel=2)
    return np.ones((w.size, 1)), 0, 1.0, 1.0


def _fit(X, Y, symmetric=True, pinv=None):
    """Least squares of ``Y (P, r, c)`` on ``X (P, F)``; returns ``(F, r, c)`` coefficients.

    ``pinv`` (the pseudo-inverse of ``X``) lets several fits share one factorization.
    """
    P = X.shape[0]
    Y = np.broadcast_to(Y, (P,) + Y.shape[-2:])
    flat = Y.reshape(P, -1)
    if pinv is None:
        coef, *_ = np.linalg.lstsq(X, flat, rcond=None)
    else:
        coef = pinv @ flat
    coef = coef.reshape((X.shape[1],) + Y.shape[-2:])
    return _sym(coef) if symmetric else coef


def fit_regression(w, Y, degree=DEFAULT_DEGREE, symmetric=True) -> RegressionModel:
    X, d, scale, cond = design_matrix(w, degree)
    if d < degree and np.std(w) > 0:
        warnings.warn(f"regression degree reduced from {degree} to {d}", RegressionWarning,
                      stacklevel=2)
    return RegressionModel(d, scale, _fit(X, np.asarray(Y, dtype=float), symmetric), cond)


# --- time-indexed fields -------------------------------------------------------------

@dataclass(frozen=True)
class ExactTerminal:
    """Terminal value ``G(W_T)`` evaluated exactly rather than regressed."""

    problem: LQProblem

    def predict(self, w=0.0):
        return self.problem.G.eval(self.problem.T, w)


class TimeField:
    """Per-grid-point values: constant matrices or objects with ``predict(w)``."""

    def __init__(self, grid: TimeGrid, values, representation="deterministic"):
        self.grid = grid
        self.values = list(values)
        self.representation = representation

    def at(self, k: int, w=0.0) -> np.ndarray:
        v = self.values[k]
        if hasattr(v, "predict"):
            return v.predict(w)
        return v

    def __len__(self):
        return len(self.values)


class ZeroTheta:
    def __init__(self, rows, cols):
        self._z = np.zeros((rows, cols))

    def at(self, k, w=0.0):
        return self._z


class ConstantTheta:
    def __init__(self, theta):
        self._theta = np.array(theta, dtype=float, ndmin=2)

    def at(self, k, w=0.0):
        return self._theta


class SynthesizedTheta:
    """``Theta_k(w) = -K^{-1} L`` from fields ``P`` and ``Lambda`` at grid point ``k``.

    The most recent evaluation per grid point is cached, since the fixed point
    evaluates each feedback repeatedly on the same Brownian cloud.
    """

    def __init__(self, problem: LQProblem, grid: TimeGrid, P: TimeField, Lam: TimeField):
        self.problem, self.grid, self.P, self.Lam = problem, grid, P, Lam
        self._cache = {}
        self._cached = 0

    def at(self, k, w=0.0):
        w_arr = np.asarray(w, dtype=float)
        hit = self._cache.get(k)
        if hit is not None and hit[0].shape == w_arr.shape and np.array_equal(hit[0], w_arr):
            return hit[1]
        snap = self.problem.evaluate(self.grid.time(k), w)
        th = synthesize_feedback(self.P.at(k, w), self.Lam.at(min(k, self.grid.steps - 1), w), snap,
                                 t=self.grid.time(k))
        if w_arr.ndim and (k in self._cache or self._cached + th.size <= THETA_CACHE_LIMIT):
            self._cached += 0 if k in self._cache else th.size
            self._cache[k] = (w_arr.copy(), th)
        return th


def as_theta(theta, problem: LQProblem):
    if theta is None:
        return ZeroTheta(problem.control_dim, problem.modes)
    if hasattr(theta, "at"):
        return theta
    return ConstantTheta(theta)


# --- K, L, Theta ---------------------------------------------------------------------

def compute_KL(P, Lam, snapshot: CoefficientSnapshot):
    """``K = R + D'PD`` and ``L = B'P + D'(PC + Lambda)``; batch-aware."""
    D, B, C = snapshot.D, snapshot.B, snapshot.C
    if not np.any(D):
        # no control in the noise: K = R and L = B'P
        batch = np.broadcast_shapes(np.shape(P)[:-2], np.shape(Lam)[:-2], np.shape(snapshot.R)[:-2])
        return np.broadcast_to(snapshot.R, batch + snapshot.R.shape[-2:]), _T(B) @ P
    K = _sym(snapshot.R + _T(D) @ P @ D)
    L = _T(B) @ P + _T(D) @ (P @ C + Lam)
    return K, L


def _uniform(K):
    """``K[0]`` if every matrix in the batch is identical (``D = 0`` makes ``K = R``), else ``None``."""
    if K.ndim < 3:
        return K
    flat = K.reshape(-1, *K.shape[-2:])
    return flat[0] if np.array_equal(flat, np.broadcast_to(flat[0], flat.shape)) else None


def _min_eig(K):
    if K.shape[-1] == 1:
        return K[..., 0, 0]
    K0 = _uniform(K)
    if K0 is not None:
        return np.broadcast_to(np.linalg.eigvalsh(K0)[0], K.shape[:-2])
    return np.linalg.eigvalsh(K)[..., 0]


def _check_K(K, t=None, floor=K_FLOOR):
    lo = _min_eig(K)
    worst = float(np.min(lo))
    if worst < floor:
        sample = int(np.argmin(lo)) if np.ndim(lo) else None
        raise SingularKError(f"K not positive definite (min eig {worst:.3e}) at t={t}, sample={sample}",
                             t=t, sample=sample, min_eig=worst)
    return worst


def synthesize_feedback(P, Lam, snapshot: CoefficientSnapshot, t=None, floor=K_FLOOR):
    """Optimal feedback ``Theta = -K^{-1} L``; raises :class:`SingularKError` if ``K`` is not PD."""
    K, L = compute_KL(P, Lam, snapshot)
    _check_K(K, snapshot.t if t is None else t, floor)
    if K.shape[-1] == 1:
        return -L / K
    K0 = _uniform(K)
    if K0 is not None:
        return -(np.linalg.inv(K0) @ L)
    return -np.linalg.solve(K, L)


# --- solution container --------------------------------------------------------------

@dataclass
class RiccatiSolution:
    problem: LQProblem
    grid: TimeGrid
    representation: str
    P: TimeField
    Lam: TimeField
    theta: object
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    def P_at(self, k, w=0.0):
        return self.P.at(k, w)

    def Lam_at(self, k, w=0.0):
        return self.Lam.at(min(k, self.grid.steps - 1), w)

    def theta_at(self, k, w=0.0):
        return self.theta.at(k, w)

    def KL_at(self, k, w=0.0):
        snap = self.problem.evaluate(self.grid.time(k), w)
        return compute_KL(self.P_at(k, w), self.Lam_at(k, w), snap)

    def feedback(self, offset=None) -> LinearFeedback:
        grid, theta = self.grid, self.theta
        return LinearFeedback(lambda t, w: theta.at(grid.index(t), w), offset)

    def P0(self, w=0.0):
        return self.P.at(0, w)


# --- deterministic regime ------------------------------------------------------------

def _etd_coefficients(z: np.ndarray, contour_points: int = 32):
    """ETDRK4 weights (divided by ``h``) for elementwise linear rates ``z = c h``.

    Evaluated as means over a unit circle around each ``z`` so the removable
    singularity at ``z = 0`` causes no cancellation.
    """
    r = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    Z = z[..., None] + r
    eZ = np.exp(Z)
    q = np.real(np.mean((np.exp(Z / 2) - 1.0) / Z, axis=-1))
    f1 = np.real(np.mean((-4.0 - Z + eZ * (4.0 - 3.0 * Z + Z ** 2)) / Z ** 3, axis=-1))
    f2 = np.real(np.mean((2.0 + Z + eZ * (Z - 2.0)) / Z ** 3, axis=-1))
    f3 = np.real(np.mean((-4.0 - 3.0 * Z - Z ** 2 + eZ * (4.0 - Z)) / Z ** 3, axis=-1))
    return q, f1, f2, f3


def _etdrk4_backward(F: Callable, mu: np.ndarray, grid: TimeGrid, terminal: np.ndarray):
    """Integrate ``-dP/dt = A'P + PA + F(t, P)`` from ``P(T)`` down the grid.

    ``A = diag(mu)`` acts elementwise with rate ``mu_i + mu_j``; the stiff part
    is propagated exactly by exponential time differencing (Cox-Matthews
    ETDRK4) and ``F`` carries every other term.
    """
    h = grid.dt
    z = (mu[:, None] + mu[None, :]) * h
    E1, Eh = np.exp(z), np.exp(0.5 * z)
    q, f1, f2, f3 = (h * c for c in _etd_coefficients(z))
    out = [None] * (grid.steps + 1)
    P = _sym(np.array(terminal, dtype=float))
    out[grid.steps] = P
    for k in range(grid.steps - 1, -1, -1):
        t1 = grid.time(k + 1)
        tm, t0 = t1 - 0.5 * h, grid.time(k)
        Nu = F(t1, P)
        a = Eh * P + q * Nu
        Na = F(tm, a)
        b = Eh * P + q * Na
        Nb = F(tm, b)
        c = Eh * a + q * (2.0 * Nb - Nu)
        Nc = F(t0, c)
        P = _sym(E1 * P + f1 * Nu + 2.0 * f2 * (Na + Nb) + f3 * Nc)
        if not np.all(np.isfinite(P)):
            raise SolverError(f"non-finite Riccati iterate at t={t0}")
        out[k] = P
    return out


def _require_deterministic(problem):
    if not problem.deterministic:
        raise ValueError("ODE solvers need deterministic coefficients; use the BSDE solvers")


def solve_riccati_ode(problem: LQProblem, grid: Optional[TimeGrid] = None) -> RiccatiSolution:
    """Deterministic Riccati ODE with ``P(T) = G``, fourth-order exponential time differencing."""
    _require_deterministic(problem)
    grid = TimeGrid.for_problem(problem) if grid is None else grid
    n = problem.modes
    zero = np.zeros((n, n))
    min_eig = [np.inf]

    def F(t, P):
        s = problem.evaluate(min(max(t, 0.0), problem.T))
        K, L = compute_KL(P, zero, s)
        min_eig[0] = min(min_eig[0], _check_K(K, t))
        gain = np.linalg.solve(K, L)
        return _sym(P @ s.A1 + s.A1.T @ P + s.C.T @ P @ s.C + s.Q - L.T @ gain)

    Ps = _etdrk4_backward(F, problem.mu, grid, problem.G.eval(problem.T))
    Pf = TimeField(grid, Ps)
    Lf = TimeField(grid, [zero] * (grid.steps + 1))
    return RiccatiSolution(problem, grid, "deterministic", Pf, Lf,
                           SynthesizedTheta(problem, grid, Pf, Lf),
                           diagnostics={"min_eig_K": float(min_eig[0]), "method": "etdrk4"})


def solve_lyapunov_ode(problem: LQProblem, grid: Optional[TimeGrid] = None, theta=None):
    """Lyapunov ODE for a fixed deterministic feedback ``theta`` (matrix or callable of t).

    Returns the list of ``P`` matrices on the grid.
    """
    _require_deterministic(problem)
    grid = TimeGrid.for_problem(problem) if grid is None else grid
    if theta is None:
        th = lambda t: np.zeros((problem.control_dim, problem.modes))
    elif callable(theta):
        th = theta
    else:
        const = np.array(theta, dtype=float, ndmin=2)
        th = lambda t: const

    def F(t, P):
        s = problem.evaluate(min(max(t, 0.0), problem.T))
        Th = th(t)
        A = s.A1 + s.B @ Th
        C = s.C + s.D @ Th
        return _sym(P @ A + A.T @ P + C.T @ P @ C + s.Q + Th.T @ s.R @ Th)

    return _etdrk4_backward(F, problem.mu, grid, problem.G.eval(problem.T))


def interpolated_theta(solution: RiccatiSolution):
    """Piecewise-linear-in-time view of a deterministic solution's feedback."""
    grid = solution.grid
    vals = np.array([solution.theta_at(k) for k in range(grid.steps + 1)])

    def th(t):
        x = (t - grid.t0) / grid.dt
        k = int(np.clip(np.floor(x), 0, grid.steps - 1))
        a = x - k
        return (1 - a) * vals[k] + a * vals[k + 1]

    return th


# --- random regime -------------------------------------------------------------------

def brownian_cloud(grid: TimeGrid, paths: int, seed: int):
    """Forward Brownian cloud ``(W, dW)`` from ``W(t0) = 0`` on a dedicated stream."""
    dW = np.sqrt(grid.dt) * path_normals(seed, STREAM_CLOUD, 0, paths, (grid.steps,))
    W = np.zeros((paths, grid.steps + 1))
    W[:, 1:] = np.cumsum(dW, axis=1)
    return W, dW


def _check_paths(paths, degree):
    if paths < 10 * (degree + 1):
        raise ValueError(f"need paths >= 10 x features ({10 * (degree + 1)}), got {paths}")


def _backward_sweep(problem: LQProblem, grid: TimeGrid, W, dW, degree: int, driver):
    """One-step regression scheme with exponential conjugation for ``A``.

    At each step: ``Lambda_k = E_k[(P_{k+1} - E_k P_{k+1}) dW_k] / dt`` and
    ``P_k = e^{A dt} E_k[P_{k+1} + f dt] e^{A dt}``, where ``f`` is the driver
    without the ``A`` terms evaluated at ``(P_{k+1}, Lambda_k)``.
    """
    steps, dt = grid.steps, grid.dt
    mu = problem.mu
    E = np.exp((mu[:, None] + mu[None, :]) * dt)
    n, npaths = problem.modes, W.shape[0]
    P_vals = [None] * (steps + 1)
    L_vals = [None] * (steps + 1)
    P_vals[steps] = ExactTerminal(problem)
    Pn = np.broadcast_to(problem.G.eval(problem.T, W[:, -1]), (npaths, n, n))
    degrees, conds = [], []
    terminal_fit = fit_regression(W[:, -1], Pn, degree) if np.std(W[:, -1]) > 0 else None
    for k in range(steps - 1, -1, -1):
        t, w = grid.time(k), W[:, k]
        X, d, scale, cond = design_matrix(w, degree)
        if d < degree and np.std(w) > 0:
            warnings.warn(f"regression degree reduced from {degree} to {d} at t={t}",
                          RegressionWarning, stacklevel=3)
        degrees.append(d)
        conds.append(cond)
        Xp = np.linalg.pinv(X)
        pre = _fit(X, Pn, pinv=Xp)
        resid = Pn - np.tensordot(X, pre, axes=([1], [0]))
        lam = _fit(X, resid * (dW[:, k, None, None] / dt), pinv=Xp)
        Lam_k = np.tensordot(X, lam, axes=([1], [0]))
        f = driver(k, t, w, Pn, Lam_k)
        if not np.all(np.isfinite(f)):
            raise SolverError(f"non-finite BSDE driver at t={t}")
        ptil = pre + _fit(X, f * dt, pinv=Xp)
        coef = _sym(ptil * E)
        P_vals[k] = RegressionModel(d, scale, coef, cond)
        L_vals[k] = RegressionModel(d, scale, lam, cond)
        Pn = np.tensordot(X, coef, axes=([1], [0]))
    L_vals[steps] = L_vals[steps - 1]
    diag = {"degrees": degrees[::-1], "max_condition": float(max(conds)),
            "terminal_fit": terminal_fit}
    return TimeField(grid, P_vals, "regression"), TimeField(grid, L_vals, "regression"), diag


def _lyapunov_driver(problem, theta):
    def driver(k, t, w, P, Lam):
        s = problem.evaluate(t, w)
        Th = theta.at(k, w)
        A = s.A1 + s.B @ Th
        # P, Lambda symmetric: PA + A'P = sym(2PA) and C'Lambda + Lambda C = sym(2 Lambda C)
        f = 2.0 * (P @ A) + s.Q + _T(Th) @ s.R @ Th
        if np.any(s.C) or np.any(s.D):
            C = s.C + s.D @ Th
            f = f + _T(C) @ P @ C + 2.0 * (Lam @ C)
        return _sym(f)
    return driver


def solve_lyapunov_bsde(problem: LQProblem, theta=None, grid: Optional[TimeGrid] = None,
                        paths: int = 10_000, feature_degree: int = DEFAULT_DEGREE, seed: int = 0,
                        cloud=None):
    """Regression solution ``(P, Lambda)`` of the backward Lyapunov equation for ``theta``.

    ``theta`` is ``None`` (zero), a constant matrix, or any object with
    ``at(k, w)``. Returns ``(P, Lambda, diagnostics)`` as :class:`TimeField`\\ s.
    """
    grid = TimeGrid.for_problem(problem) if grid is None else grid
    _check_paths(paths, feature_degree)
    W, dW = brownian_cloud(grid, paths, seed) if cloud is None else cloud
    th = as_theta(theta, problem)
    return _backward_sweep(problem, grid, W, dW, feature_degree, _lyapunov_driver(problem, th))


def _riccati_driver(problem, k_min):
    def driver(k, t, w, P, Lam):
        s = problem.evaluate(t, w)
        K, L = compute_KL(P, Lam, s)
        k_min[0] = min(k_min[0], _check_K(K, t))
        gain = np.linalg.solve(K, L)
        return _sym(P @ s.A1 + _T(s.A1) @ P + Lam @ s.C + _T(s.C) @ Lam + _T(s.C) @ P @ s.C
                    + s.Q - _T(L) @ gain)
    return driver


def solve_riccati_bsde_direct(problem: LQProblem, grid: Optional[TimeGrid] = None,
                              paths: int = 10_000, feature_degree: int = DEFAULT_DEGREE,
                              seed: int = 0, cloud=None) -> RiccatiSolution:
    """Single backward sweep with the nonlinear Riccati driver (explicit in ``P_{k+1}``)."""
    grid = TimeGrid.for_problem(problem) if grid is None else grid
    _check_paths(paths, feature_degree)
    W, dW = brownian_cloud(grid, paths, seed) if cloud is None else cloud
    k_min = [np.inf]
    Pf, Lf, diag = _backward_sweep(problem, grid, W, dW, feature_degree,
                                   _riccati_driver(problem, k_min))
    diag.update(min_eig_K=float(k_min[0]), paths=paths, seed=seed, method="direct")
    return RiccatiSolution(problem, grid, "regression", Pf, Lf,
                           SynthesizedTheta(problem, grid, Pf, Lf), True, diag)


def _theta_change(new, old, W, steps):
    worst = 0.0
    for k in range(steps):
        d = np.asarray(new.at(k, W[:, k])) - np.asarray(old.at(k, W[:, k]))
        d = np.broadcast_to(d, (W.shape[0],) + d.shape[-2:])
        worst = max(worst, float(np.sqrt(np.mean(np.sum(d ** 2, axis=(-2, -1))))))
    return worst


def theta_fixed_point(problem: LQProblem, grid: Optional[TimeGrid] = None, paths: int = 10_000,
                      feature_degree: int = DEFAULT_DEGREE, seed: int = 0, max_iters: int = 50,
                      tol: Optional[float] = None) -> RiccatiSolution:
    """Solve the Riccati BSDE through its linear reformulation.

    Starting from ``Theta = 0``, alternately solve the Lyapunov BSDE for the
    current feedback and update ``Theta <- -K^{-1} L`` pointwise. The Brownian
    cloud is shared across iterations. The returned solution pairs ``(P, Lambda)``
    with the feedback that produced them, so ``K Theta + L`` measures how far
    the stationarity constraint is from holding.
    """
    grid = TimeGrid.for_problem(problem) if grid is None else grid
    if tol is None:
        tol = 1e-6 if problem.deterministic else 1e-3
    _check_paths(paths, feature_degree)
    cloud = brownian_cloud(grid, paths, seed)
    W = cloud[0]
    theta = as_theta(None, problem)
    history = []
    best = None
    converged = False
    for it in range(max_iters):
        Pf, Lf, diag = _backward_sweep(problem, grid, *cloud, feature_degree,
                                       _lyapunov_driver(problem, theta))
        new_theta = SynthesizedTheta(problem, grid, Pf, Lf)
        change = _theta_change(new_theta, theta, W, grid.steps)
        history.append(change)
        if best is None or change <= best[0]:
            best = (change, Pf, Lf, theta, diag)
        if change < tol:
            converged = True
            break
        theta = new_theta
    change, Pf, Lf, theta, diag = best
    sol = RiccatiSolution(problem, grid, "regression", Pf, Lf, theta, converged, diag)
    diag.update(history=history, iterations=len(history), paths=paths, seed=seed,
                method="fixed-point", tol=tol)
    diag["min_eig_K"] = min_eig_K_on_cloud(sol, W)
    return sol


def min_eig_K_on_cloud(solution: RiccatiSolution, W) -> float:
    worst = np.inf
    for k in range(solution.grid.steps):
        K, _ = solution.KL_at(k, W[:, k])
        worst = min(worst, float(np.min(_min_eig(K))))
    return worst


# --- diagnostics export --------------------------------------------------------------

def write_p_diagnostics(solution: RiccatiSolution, path) -> None:
    """Write distinct entries ``P_ij`` (``i <= j``) per grid time.

    Deterministic solutions: columns ``t, entry, value``. Regression solutions:
    ``t, entry, degree, coef_0 .. coef_d`` (the terminal row holds a least-squares
    fit of ``G(W_T)``).
    """
    grid = solution.grid
    n = solution.problem.modes
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        if solution.representation == "deterministic":
            wr.writerow(["t", "entry", "value"])
            for k in range(grid.steps + 1):
                P = solution.P.at(k)
                for i, j in idx:
                    wr.writerow([repr(float(grid.time(k))), f"{i + 1}_{j + 1}", repr(float(P[i, j]))])
            return
        models = list(solution.P.values)
        term = solution.diagnostics.get("terminal_fit")
        if term is not None:
            models[-1] = term
        dmax = max(m.degree for m in models if isinstance(m, RegressionModel))
        wr.writerow(["t", "entry", "degree", "scale"] + [f"coef_{d}" for d in range(dmax + 1)])
        for k, m in enumerate(models):
            if not isinstance(m, RegressionModel):
                G = np.asarray(m.predict(0.0))
                m = RegressionModel(0, 1.0, G[None])
            for i, j in idx:
                coefs = [repr(float(c)) for c in m.coef[:, i, j]]
                coefs += [""] * (dmax + 1 - len(coefs))
                wr.writerow([repr(float(grid.time(k))), f"{i + 1}_{j + 1}", m.degree,
                             repr(float(m.scale))] + coefs)
