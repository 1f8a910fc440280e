"""Monte Carlo checks of the identities that characterize an optimal feedback.

Every check simulates in fixed chunks of paths, accumulates per-path values of
both sides and compares the means. Paths draw their noise from per-path
streams, so the two state equations of a duality check share noise exactly.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .forward import (
    LinearFeedback,
    OpenLoop,
    TimeGrid,
    _mv,
    _rows,
    path_costs,
    path_normals,
    path_uniforms,
    simulate,
)
from .problem import LQProblem
from .riccati import RiccatiSolution, TimeField, as_theta, compute_KL

DEFAULT_TOL = 0.05
STAT_FLOOR = 1e-9
CHUNK_PATHS = 2048
K_FLAG = 1e-4


def _dot(a, b):
    return np.einsum("pi,pi->p", a, b)


@dataclass
class IdentityReport:
    name: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    residual: float
    tolerance: float
    passed: bool
    inputs: dict = field(default_factory=dict)
    diff_se: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def difference(self) -> float:
        return self.lhs - self.rhs

    @property
    def digest(self) -> str:
        blob = json.dumps(self.inputs, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "lhs_se": self.lhs_se,
            "rhs": self.rhs,
            "rhs_se": self.rhs_se,
            "diff_se": self.diff_se,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "passed": bool(self.passed),
            "inputs": self.inputs,
            "inputs_digest": self.digest,
            "details": self.details,
        }


def _se(x):
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def normalized_residual(lhs, rhs):
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1.0)


def statistically_equal(lhs, rhs, se_l, se_r, k=3.0):
    return abs(lhs - rhs) <= k * (se_l + se_r) + STAT_FLOOR * (1.0 + abs(lhs) + abs(rhs))


def report_from_samples(name, lhs_vals, rhs_vals, tol, inputs, details=None) -> IdentityReport:
    """Pass iff normalized residual < tol or |LHS - RHS| < 3 (SE_L + SE_R)."""
    lhs_vals = np.asarray(lhs_vals, dtype=float)
    rhs_vals = np.broadcast_to(np.asarray(rhs_vals, dtype=float), lhs_vals.shape)
    lhs, rhs = float(lhs_vals.mean()), float(rhs_vals.mean())
    se_l, se_r = _se(lhs_vals), _se(rhs_vals)
    res = normalized_residual(lhs, rhs)
    passed = res < tol or statistically_equal(lhs, rhs, se_l, se_r)
    return IdentityReport(name, lhs, se_l, rhs, se_r, res, tol, bool(passed), dict(inputs),
                          _se(lhs_vals - rhs_vals), dict(details or {}))


def _chunks(paths, size=CHUNK_PATHS):
    for lo in range(0, paths, size):
        yield lo, min(size, paths - lo)


# --- test inputs ---------------------------------------------------------------------

@dataclass(frozen=True)
class TestInputSet:
    """Random initial states and forcings for the duality identities.

    Initial states and drift forcings have per-mode std ``scale * lambda_j /
    lambda_1``; diffusion forcings are damped by ``lambda_j / g_j`` (normalized
    to the first mode) so they stay H_lambda-smooth. Forcings are piecewise
    constant in time with ``pieces`` Gaussian levels per path.
    """

    __test__ = False

    seed: int = 0
    xi_scale: float = 1.0
    u_scale: float = 1.0
    v_scale: float = 1.0
    pieces: int = 4
    rho: float = 0.5
    with_u: bool = True
    with_v: bool = True
    swapped: bool = False

    def swap(self) -> "TestInputSet":
        return replace(self, swapped=not self.swapped)

    def sample(self, basis, steps: int, start: int, count: int) -> dict:
        """Draw inputs for paths ``start .. start+count-1``.

        The second set is ``rho * first + sqrt(1 - rho^2) * independent`` so the
        pairings have nonzero mean (independent centred inputs make both sides
        of every duality identity vanish in expectation).
        """
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        n = basis.modes
        lam, g = basis.lambda_weights, basis.graph_norms
        damp = lam / lam[0]
        vdamp = (lam / g) / (lam[0] / g[0])
        piece = np.minimum((np.arange(steps) * self.pieces) // steps, self.pieces - 1)
        c = np.sqrt(1.0 - self.rho ** 2)

        def pair(stream, shape):
            a = path_normals(self.seed, stream, start, count, shape)
            b = self.rho * a + c * path_normals(self.seed, stream + 1, start, count, shape)
            return a, b

        out = {}
        x1, x2 = pair(11, (n,))
        out["xi1"], out["xi2"] = self.xi_scale * damp * x1, self.xi_scale * damp * x2
        for key, stream, scale, d, on in (("u", 13, self.u_scale, damp, self.with_u),
                                           ("v", 15, self.v_scale, vdamp, self.with_v)):
            if on:
                a, b = pair(stream, (self.pieces, n))
                out[key + "1"], out[key + "2"] = scale * d * a[:, piece], scale * d * b[:, piece]
            else:
                out[key + "1"] = out[key + "2"] = None
        if self.swapped:
            for key in ("xi", "u", "v"):
                out[key + "1"], out[key + "2"] = out[key + "2"], out[key + "1"]
        return out

    def describe(self) -> dict:
        return {"seed": self.seed, "xi_scale": self.xi_scale, "u_scale": self.u_scale,
                "v_scale": self.v_scale, "pieces": self.pieces, "rho": self.rho, "with_u": self.with_u,
                "with_v": self.with_v, "swapped": self.swapped}


def _z(a, like):
    return np.zeros_like(like) if a is None else a


def _fields(pair):
    if isinstance(pair, RiccatiSolution):
        return pair.P, pair.Lam
    P, Lam = pair
    return P, Lam


# --- duality identities --------------------------------------------------------------

def check_transposition_identity(problem: LQProblem, solution: RiccatiSolution,
                                 inputs: TestInputSet, t: float = 0.0, paths: int = 10_000,
                                 seed: int = 0, tol: float = DEFAULT_TOL, workers: int = 1) -> IdentityReport:
    """Duality identity of the Riccati transposition solution at time ``t``.

    Two uncontrolled forced equations share noise; the left side collects the
    terminal, running and ``K^{-1}L`` terms, the right side ``<P(t) xi1, xi2>``
    plus the forcing cross terms.
    """
    grid = solution.grid.sub(t)
    k0 = solution.grid.index(t)
    dt = grid.dt
    lhs_all, rhs_all = [], []
    min_k = np.inf
    for lo, cnt in _chunks(paths):
        inp = inputs.sample(problem.basis, grid.steps, lo, cnt)
        b1 = simulate(problem, grid, inp["xi1"], None, inp["u1"], inp["v1"], cnt, seed, path_offset=lo, workers=workers)
        b2 = simulate(problem, grid, inp["xi2"], None, inp["u2"], inp["v2"], cnt, seed, path_offset=lo, workers=workers)
        X1, X2, W = b1.paths, b2.paths, b1.brownian
        lhs = np.zeros(cnt)
        rhs = _dot(_mv(solution.P_at(k0, W[:, 0]), inp["xi1"]), inp["xi2"])
        for j in range(grid.steps):
            k, tk, w = k0 + j, grid.time(j), W[:, j]
            x1, x2 = X1[:, j], X2[:, j]
            snap = problem.evaluate(tk, w)
            P, Lam = solution.P_at(k, w), solution.Lam_at(k, w)
            K, L = compute_KL(P, Lam, snap)
            min_k = min(min_k, float(np.linalg.eigvalsh(K)[..., 0].min()))
            Lx1, Lx2 = _mv(L, x1), _mv(L, x2)
            KiLx1 = np.linalg.solve(np.broadcast_to(K, (cnt,) + K.shape[-2:]), Lx1[..., None])[..., 0]
            lhs += (_dot(_mv(snap.Q, x1), x2) - _dot(KiLx1, Lx2)) * dt
            u1, u2 = _z(inp["u1"], X1[:, 1:])[:, j], _z(inp["u2"], X1[:, 1:])[:, j]
            v1, v2 = _z(inp["v1"], X1[:, 1:])[:, j], _z(inp["v2"], X1[:, 1:])[:, j]
            Cx1, Cx2 = _mv(snap.C, x1), _mv(snap.C, x2)
            r = (_dot(_mv(P, u1), x2) + _dot(_mv(P, x1), u2) + _dot(_mv(P, Cx1), v2)
                 + _dot(_mv(P, v1), Cx2 + v2) + _dot(v1, _mv(Lam, x2)) + _dot(_mv(Lam, x1), v2))
            rhs += r * dt
        xT1, xT2 = X1[:, -1], X2[:, -1]
        lhs += _dot(_mv(problem.G.eval(problem.T, W[:, -1]), xT1), xT2)
        lhs_all.append(lhs)
        rhs_all.append(rhs)
    details = {"min_eig_K": min_k}
    if min_k < K_FLAG:
        details["flag"] = f"min eig K {min_k:.2e} below {K_FLAG:g}; K^-1 term ill-conditioned"
    return report_from_samples(
        "transposition", np.concatenate(lhs_all), np.concatenate(rhs_all), tol,
        {"t": t, "paths": paths, "seed": seed, "modes": problem.modes, "steps": grid.steps,
         "test_inputs": inputs.describe()}, details)


def check_hlambda_transposition(problem: LQProblem, theta, pair, inputs: TestInputSet,
                                t: float = 0.0, paths: int = 10_000, seed: int = 0,
                                tol: float = DEFAULT_TOL, workers: int = 1) -> IdentityReport:
    """Duality identity of the Lyapunov equation driven by feedback ``theta``.

    ``pair`` is ``(P, Lambda)`` as :class:`TimeField`\\ s or a solution object.
    The state equations are closed with ``theta``; there is no ``K^{-1}`` term
    and ``C`` is replaced by ``C + D theta``.
    """
    P_f, L_f = _fields(pair)
    full = P_f.grid
    grid = full.sub(t)
    k0 = full.index(t)
    dt = grid.dt
    th = as_theta(theta, problem)
    fb = LinearFeedback(lambda s, w: th.at(full.index(s), w))
    lhs_all, rhs_all = [], []
    for lo, cnt in _chunks(paths):
        inp = inputs.sample(problem.basis, grid.steps, lo, cnt)
        b1 = simulate(problem, grid, inp["xi1"], fb, inp["u1"], inp["v1"], cnt, seed, path_offset=lo, workers=workers)
        b2 = simulate(problem, grid, inp["xi2"], fb, inp["u2"], inp["v2"], cnt, seed, path_offset=lo, workers=workers)
        X1, X2, W = b1.paths, b2.paths, b1.brownian
        lhs = np.zeros(cnt)
        rhs = _dot(_mv(P_f.at(k0, W[:, 0]), inp["xi1"]), inp["xi2"])
        for j in range(grid.steps):
            k, tk, w = k0 + j, grid.time(j), W[:, j]
            x1, x2 = X1[:, j], X2[:, j]
            snap = problem.evaluate(tk, w)
            Th = np.asarray(th.at(k, w))
            P = P_f.at(k, w)
            Lam = L_f.at(min(k, full.steps - 1), w)
            CT = snap.C + snap.D @ Th
            M = snap.Q + np.swapaxes(Th, -1, -2) @ snap.R @ Th
            lhs += _dot(_mv(M, x1), x2) * dt
            u1, u2 = _z(inp["u1"], X1[:, 1:])[:, j], _z(inp["u2"], X1[:, 1:])[:, j]
            v1, v2 = _z(inp["v1"], X1[:, 1:])[:, j], _z(inp["v2"], X1[:, 1:])[:, j]
            r = (_dot(_mv(P, u1), x2) + _dot(_mv(P, x1), u2) + _dot(_mv(P, _mv(CT, x1)), v2)
                 + _dot(_mv(P, v1), _mv(CT, x2) + v2)
                 + _dot(v1, _mv(Lam, x2)) + _dot(_mv(Lam, x1), v2))
            rhs += r * dt
        xT1, xT2 = X1[:, -1], X2[:, -1]
        lhs += _dot(_mv(problem.G.eval(problem.T, W[:, -1]), xT1), xT2)
        lhs_all.append(lhs)
        rhs_all.append(rhs)
    return report_from_samples(
        "hlambda_transposition", np.concatenate(lhs_all), np.concatenate(rhs_all), tol,
        {"t": t, "paths": paths, "seed": seed, "modes": problem.modes, "steps": grid.steps,
         "test_inputs": inputs.describe()})


# --- value, optimality, cost decomposition -------------------------------------------

def _feedback(theta, problem, grid, offset=None):
    th = as_theta(theta, problem)
    return LinearFeedback(lambda s, w: th.at(grid.index(s), w), offset)


def _closed_loop_costs(problem, grid, theta, eta, paths, seed, offset=None, workers=1):
    out = []
    for lo, cnt in _chunks(paths):
        off = None if offset is None else _rows(offset, lo, lo + cnt, 2)
        b = simulate(problem, grid, _rows(np.asarray(eta, float), lo, lo + cnt, 1), _feedback(theta, problem, grid, off),
                     paths=cnt, seed=seed, path_offset=lo, workers=workers)
        out.append(path_costs(problem, grid, b.paths, b.brownian, b.controls))
    return np.concatenate(out)


def check_value_identity(problem: LQProblem, theta, P: TimeField, eta, paths: int = 10_000,
                         seed: int = 0, tol: float = DEFAULT_TOL, workers: int = 1) -> IdentityReport:
    """Closed-loop Monte Carlo cost against ``1/2 <P(0) eta, eta>``."""
    grid = P.grid
    eta = np.asarray(eta, dtype=float)
    costs = _closed_loop_costs(problem, grid, theta, eta, paths, seed, workers=workers)
    P0 = P.at(0, 0.0)
    e = np.broadcast_to(eta, (paths, problem.modes))
    value = 0.5 * _dot(_mv(P0, e), e)
    return report_from_samples("value", costs, value, tol,
                               {"paths": paths, "seed": seed, "modes": problem.modes,
                                "steps": grid.steps, "eta": eta.tolist()})


def perturbation(seed: int, draw: int, steps: int, kdim: int) -> np.ndarray:
    """Bounded control perturbation sequence ``phi`` (uniform on [-1, 1]) for draw ``draw``."""
    return path_uniforms(seed, 20, draw, 1, (steps, kdim))[0]


def check_optimality(problem: LQProblem, theta, eta, perturbations: int = 20, paths: int = 10_000,
                     seed: int = 0, grid: TimeGrid = None, deltas=(0.1, 0.5, 1.0),
                     common_noise: bool = True, phis=None, workers: int = 1) -> IdentityReport:
    """Perturbed controls ``Theta x + delta phi`` must not beat the feedback.

    Draw ``i`` uses ``delta = deltas[i % len(deltas)]``. A draw passes when its
    mean excess cost is at least ``-3`` standard errors of the difference.
    """
    if perturbations < 1:
        raise ValueError("perturbations must be >= 1")
    grid = TimeGrid.for_problem(problem) if grid is None else grid
    base = _closed_loop_costs(problem, grid, theta, eta, paths, seed, workers=workers)
    margins, ses, ds, ok = [], [], [], []
    worst = None
    for i in range(perturbations):
        delta = deltas[i % len(deltas)]
        phi = perturbation(seed, i, grid.steps, problem.control_dim) if phis is None else phis[i]
        pseed = seed if common_noise else seed + 1 + i
        pert = _closed_loop_costs(problem, grid, theta, eta, paths, pseed, delta * phi, workers)
        if common_noise:
            diff = pert - base
            m, se = float(diff.mean()), _se(diff)
        else:
            m = float(pert.mean() - base.mean())
            se = float(np.hypot(_se(pert), _se(base)))
        margins.append(m)
        ses.append(se)
        ds.append(delta)
        ok.append(m >= -3.0 * se - STAT_FLOOR * (1.0 + abs(float(base.mean()))))
        if worst is None or m < margins[worst]:
            worst = i
    lhs = float(base.mean())
    rhs = lhs + margins[worst]
    return IdentityReport(
        "optimality", lhs, _se(base), rhs, ses[worst], normalized_residual(lhs, rhs), 0.0, all(ok),
        {"paths": paths, "seed": seed, "modes": problem.modes, "steps": grid.steps,
         "perturbations": perturbations, "deltas": list(deltas), "common_noise": common_noise},
        ses[worst], {"margins": margins, "margin_se": ses, "delta": ds, "draw_passed": ok,
                     "min_margin": margins[worst]})


def check_cost_decomposition(problem: LQProblem, theta, pair, u, xi, t: float = 0.0,
                             paths: int = 10_000, seed: int = 0,
                             tol: float = DEFAULT_TOL, workers: int = 1) -> IdentityReport:
    """``2 J(t, xi; u)`` against ``<P(t) xi, xi> + int <K (u - Theta y), u - Theta y>``.

    ``u`` is an open-loop control ``(steps, k)`` / ``(paths, steps, k)``;
    ``xi`` is ``(n,)`` or ``(paths, n)``.
    """
    P_f, _ = _fields(pair)
    full = P_f.grid
    grid = full.sub(t)
    k0 = full.index(t)
    dt = grid.dt
    th = as_theta(theta, problem)
    u = np.asarray(u, dtype=float)
    xi = np.asarray(xi, dtype=float)
    lhs_all, rhs_all = [], []
    for lo, cnt in _chunks(paths):
        uc = _rows(u, lo, lo + cnt, 2)
        xc = np.broadcast_to(_rows(xi, lo, lo + cnt, 1), (cnt, problem.modes))
        b = simulate(problem, grid, xc, OpenLoop(uc), paths=cnt, seed=seed, path_offset=lo, workers=workers)
        lhs_all.append(2.0 * path_costs(problem, grid, b.paths, b.brownian, b.controls))
        W, Y, U = b.brownian, b.paths, b.controls
        rhs = _dot(_mv(P_f.at(k0, W[:, 0]), xc), xc)
        for j in range(grid.steps):
            k, w = k0 + j, W[:, j]
            snap = problem.evaluate(grid.time(j), w)
            K = snap.R + np.swapaxes(snap.D, -1, -2) @ P_f.at(k, w) @ snap.D
            phi = U[:, j] - _mv(np.asarray(th.at(k, w)), Y[:, j])
            rhs += _dot(_mv(K, phi), phi) * dt
        rhs_all.append(rhs)
    return report_from_samples("cost_decomposition", np.concatenate(lhs_all), np.concatenate(rhs_all),
                               tol, {"t": t, "paths": paths, "seed": seed, "modes": problem.modes,
                                     "steps": grid.steps})


def check_stationarity_and_K(problem: LQProblem, solution: RiccatiSolution, samples: int = 256,
                             seed: int = 0, tol: float = 1e-10, k_floor: float = -1e-8) -> IdentityReport:
    """Worst ``|K Theta + L|_F / (1 + |L|_F)`` and min eig ``K`` over sampled ``(t, W(t))``."""
    grid = solution.grid
    rng = np.random.default_rng(seed)
    ks = rng.integers(0, grid.steps, samples)
    worst_res, min_eig = 0.0, np.inf
    for k in np.unique(ks):
        m = int(np.sum(ks == k))
        tk = grid.time(int(k))
        w = rng.standard_normal(m) * np.sqrt(tk)
        K, L = solution.KL_at(int(k), w)
        Th = np.asarray(solution.theta_at(int(k), w))
        R = K @ Th + L
        num = np.sqrt(np.sum(np.broadcast_to(R, (m,) + R.shape[-2:]) ** 2, axis=(-2, -1)))
        den = 1.0 + np.sqrt(np.sum(np.broadcast_to(L, (m,) + L.shape[-2:]) ** 2, axis=(-2, -1)))
        worst_res = max(worst_res, float((num / den).max()))
        min_eig = min(min_eig, float(np.linalg.eigvalsh(K)[..., 0].min()))
    passed = min_eig >= k_floor and worst_res < tol
    details = {"min_eig_K": min_eig, "worst_stationarity": worst_res}
    if min_eig < K_FLAG:
        details["flag"] = f"min eig K {min_eig:.2e} below {K_FLAG:g}"
    return IdentityReport("stationarity", worst_res, 0.0, 0.0, 0.0, worst_res, tol, bool(passed),
                          {"samples": samples, "seed": seed, "steps": grid.steps,
                           "modes": problem.modes}, 0.0, details)
