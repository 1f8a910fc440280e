"""Acceptance criteria 1-11. Each test records one PASS/FAIL line, printed in the terminal summary."""
import json
import time

import numpy as np
import pytest

from stochlq.cli import main
from stochlq.forward import path_normals
from stochlq.problem import CoefficientProcess
from stochlq.riccati import (
    solve_lyapunov_bsde,
    solve_riccati_bsde_direct,
    solve_riccati_ode,
    theta_fixed_point,
)
from stochlq.spectral import build_basis, hs_embedding_partial_sum, hs_embedding_terms
from stochlq.verify import (
    TestInputSet,
    check_cost_decomposition,
    check_hlambda_transposition,
    check_optimality,
    check_stationarity_and_K,
    check_transposition_identity,
    check_value_identity,
    statistically_equal,
)

from conftest import heat_deterministic, heat_noisy, scalar_benchmark, scalar_problem, wonham_random

pytestmark = pytest.mark.acceptance

RESULTS = {}

# criterion 1
C1_STEPS, C1_TOL, C1_SECONDS = 1000, 1e-6, 1.0
# criterion 2
C2_PATHS, C2_STEPS, C2_SE, C2_ABS, C2_SECONDS = 10_000, 200, 3.0, 0.02, 10.0
# criterion 3
C3_N, C3_DRAWS, C3_PATHS, C3_SE, C3_STRICT_SE, C3_SECONDS = 8, 20, 10_000, 3.0, 5.0, 60.0
# criteria 4, 5
C4_N, C4_PATHS, C4_STEPS, C4_TOL, C4_FACTOR = 4, 10_000, 200, 0.05, 4
# criterion 6
C6_PATHS, C6_CONTROLS, C6_SE = 10_000, 5, 3.0
# criterion 7
C7_K_FLOOR, C7_SYNTH_TOL, C7_FIXED_TOL = -1e-8, 1e-10, 1e-3
# criterion 8
C8_PATHS, C8_DEGREE, C8_TOL, C8_GRID, C8_INNER, C8_SECONDS = 10_000, 3, 0.05, 21, 200_000, 30.0
# criterion 9
C9_DT_BUDGET_FACTOR, C9_FLOOR, C9_RANDOM_TOL, C9_PATHS = 2.0, 1e-3, 0.05, 10_000
# criterion 10
C10_J, C10_J_REF, C10_TOL = 64, 128, 1e-10


def record(n, ok, detail):
    RESULTS[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


# --- 1 -------------------------------------------------------------------------------

def test_c01_scalar_riccati_ode():
    pr = scalar_benchmark(steps=C1_STEPS)
    t0 = time.perf_counter()
    sol = solve_riccati_ode(pr)
    secs = time.perf_counter() - t0
    err = abs(sol.P0()[0, 0] - 0.5)
    ok = err < C1_TOL and secs < C1_SECONDS
    assert record(1, ok, f"|P(0)-0.5|={err:.2e} (<{C1_TOL:g}), {secs:.3f}s (<{C1_SECONDS:g}s)")


# --- 2 -------------------------------------------------------------------------------

def test_c02_value_formula():
    pr = scalar_benchmark(steps=C2_STEPS)
    t0 = time.perf_counter()
    sol = solve_riccati_ode(pr)
    rep = check_value_identity(pr, sol.theta, sol.P, [1.0], paths=C2_PATHS, seed=0)
    secs = time.perf_counter() - t0
    diff = abs(rep.lhs - 0.25)
    # noise-free benchmark: SE is exactly 0, so "3 SE" is equality up to the roundoff floor
    ok = statistically_equal(rep.lhs, 0.25, rep.lhs_se, 0.0, C2_SE) and diff <= C2_ABS and abs(rep.rhs - 0.25) < 1e-6 and secs < C2_SECONDS
    assert record(2, ok, f"J={rep.lhs:.5f}+-{rep.lhs_se:.5f} vs 0.25, |diff|={diff:.2e}, {secs:.2f}s")


# --- 3 -------------------------------------------------------------------------------

def test_c03_optimality():
    pr = heat_deterministic(N=C3_N, steps=200)
    t0 = time.perf_counter()
    sol = solve_riccati_ode(pr)
    eta = pr.basis.lambda_weights / pr.basis.lambda_weights[0]
    rep = check_optimality(pr, sol.theta, eta, perturbations=C3_DRAWS, paths=C3_PATHS, seed=0,
                           common_noise=True)
    secs = time.perf_counter() - t0
    d = rep.details
    all_ok = all(m >= -C3_SE * s for m, s in zip(d["margins"], d["margin_se"]))
    strict = [m > C3_STRICT_SE * s for m, s, dl in zip(d["margins"], d["margin_se"], d["delta"]) if dl == 1.0]
    ok = all_ok and all(strict) and len(strict) > 0 and secs < C3_SECONDS
    assert record(3, ok, f"{C3_DRAWS} draws, min margin {d['min_margin']:.3e}, "
                         f"delta=1 strict {sum(strict)}/{len(strict)}, {secs:.1f}s")


# --- 4, 5 ----------------------------------------------------------------------------

def test_c04_transposition_identity():
    pr = heat_noisy(N=C4_N, steps=C4_STEPS)
    sol = solve_riccati_ode(pr)
    inputs = TestInputSet(seed=0)
    small = check_transposition_identity(pr, sol, inputs, paths=C4_PATHS, seed=0)
    big = check_transposition_identity(pr, sol, inputs, paths=C4_FACTOR * C4_PATHS, seed=0)
    ok = small.residual < C4_TOL and big.residual < small.residual
    assert record(4, ok, f"residual {small.residual:.4f} at {C4_PATHS}, {big.residual:.4f} at "
                         f"{C4_FACTOR * C4_PATHS} paths (<{C4_TOL:g}, decreasing)")


def test_c05_hlambda_transposition():
    pr = heat_noisy(N=C4_N, steps=C4_STEPS)
    sol = solve_riccati_ode(pr)
    rep = check_hlambda_transposition(pr, sol.theta, sol, TestInputSet(seed=0), paths=C4_PATHS, seed=0)
    ok = rep.residual < C4_TOL
    assert record(5, ok, f"residual {rep.residual:.4f} (<{C4_TOL:g})")


# --- 6 -------------------------------------------------------------------------------

def test_c06_cost_decomposition():
    pr = scalar_benchmark(steps=200)
    sol = solve_riccati_ode(pr)
    controls = [np.zeros((pr.steps, 1))]
    for i in range(C6_CONTROLS):
        lv = path_normals(i, 30, 0, C6_PATHS, (4, 1))
        controls.append(lv[:, np.minimum(np.arange(pr.steps) * 4 // pr.steps, 3), :])
    lines, ok = [], True
    for i, u in enumerate(controls):
        rep = check_cost_decomposition(pr, sol.theta, sol, u, [1.0], paths=C6_PATHS, seed=i)
        bound = C6_SE * (rep.lhs_se + rep.rhs_se)
        ok &= statistically_equal(rep.lhs, rep.rhs, rep.lhs_se, rep.rhs_se, C6_SE)
        lines.append(f"{abs(rep.difference):.1e}/{bound:.1e}")
    assert record(6, ok, "|diff|/3SE per control (u=0 first): " + ", ".join(lines))


# --- 7 -------------------------------------------------------------------------------

def test_c07_stationarity_and_nonnegativity():
    worst_synth, min_eig = 0.0, np.inf
    for pr in (scalar_benchmark(), heat_deterministic(N=8), heat_noisy(N=4)):
        rep = check_stationarity_and_K(pr, solve_riccati_ode(pr), samples=256, seed=0, tol=C7_SYNTH_TOL)
        worst_synth = max(worst_synth, rep.residual)
        min_eig = min(min_eig, rep.details["min_eig_K"])
    for pr in (heat_noisy(N=4, steps=100), wonham_random(steps=100)):
        sol = solve_riccati_bsde_direct(pr, paths=4000, seed=0)
        rep = check_stationarity_and_K(pr, sol, samples=256, seed=0, tol=C7_SYNTH_TOL)
        worst_synth = max(worst_synth, rep.residual)
        min_eig = min(min_eig, rep.details["min_eig_K"], sol.diagnostics["min_eig_K"])
    pr = wonham_random(steps=100)
    fp = theta_fixed_point(pr, paths=C9_PATHS, seed=0)
    rep = check_stationarity_and_K(pr, fp, samples=256, seed=0, tol=C7_FIXED_TOL)
    min_eig = min(min_eig, rep.details["min_eig_K"], fp.diagnostics["min_eig_K"])
    ok = min_eig >= C7_K_FLOOR and worst_synth < C7_SYNTH_TOL and rep.residual < C7_FIXED_TOL
    assert record(7, ok, f"min eig K {min_eig:.3f}, synthesized {worst_synth:.1e} (<{C7_SYNTH_TOL:g}), "
                         f"fixed point {rep.residual:.1e} (<{C7_FIXED_TOL:g})")


# --- 8 -------------------------------------------------------------------------------

def nested_oracle(w, t_left, inner, seed=0):
    """E[clip(W_T^2, 0, 4) | W_t = w] by plain inner Monte Carlo."""
    z = np.random.default_rng(seed).standard_normal(inner)
    return np.array([np.clip((x + np.sqrt(t_left) * z) ** 2, 0, 4).mean() for x in w])


def test_c08_bsde_conditional_expectation():
    G = CoefficientProcess.brownian(lambda t, w: np.clip(np.asarray(w) ** 2, 0, 4)[..., None, None], (1, 1),
                                    symmetric=True)
    pr = scalar_problem(G=G, steps=100)
    t0 = time.perf_counter()
    P, _, _ = solve_lyapunov_bsde(pr, None, paths=C8_PATHS, feature_degree=C8_DEGREE, seed=0)
    secs = time.perf_counter() - t0
    wg = np.linspace(-2, 2, C8_GRID)
    est = P.at(50, wg)[:, 0, 0]
    oracle = nested_oracle(wg, 0.5, C8_INNER)
    rel = np.max(np.abs(est / oracle - 1))
    ok = rel < C8_TOL and secs < C8_SECONDS
    assert record(8, ok, f"max rel err {rel:.3f} (<{C8_TOL:g}) on {C8_GRID} points, {secs:.2f}s")


# --- 9 -------------------------------------------------------------------------------

def test_c09_cross_solver_agreement():
    worst, ok = 0.0, True
    for pr in (scalar_benchmark(steps=100), heat_deterministic(N=8, steps=100), heat_noisy(N=4, steps=100)):
        ref = solve_riccati_ode(pr).P0()
        budget = C9_DT_BUDGET_FACTOR * (pr.T / pr.steps + C9_FLOOR)
        for sol in (theta_fixed_point(pr, paths=C9_PATHS, seed=0),
                    solve_riccati_bsde_direct(pr, paths=C9_PATHS, seed=0)):
            err = float(np.abs(sol.P0() - ref).max())
            worst = max(worst, err)
            ok &= err < budget
    pr = wonham_random(steps=100)
    a = theta_fixed_point(pr, paths=C9_PATHS, seed=0).P0()[0, 0]
    b = solve_riccati_bsde_direct(pr, paths=C9_PATHS, seed=0).P0()[0, 0]
    rel = abs(a - b) / abs(b)
    ok &= rel < C9_RANDOM_TOL
    assert record(9, ok, f"deterministic worst |dP(0)|={worst:.2e} (<{budget:.3f}), "
                         f"wonham {a:.4f} vs {b:.4f} rel {rel:.4f} (<{C9_RANDOM_TOL:g})")


# --- 10 ------------------------------------------------------------------------------

def test_c10_hs_embedding():
    basis = build_basis(1, C10_J_REF)
    terms = hs_embedding_terms(basis)
    ratios = terms[1:C10_J + 1] / terms[:C10_J]
    sums = np.array([hs_embedding_partial_sum(basis, j) for j in range(1, C10_J + 1)])
    gap = abs(hs_embedding_partial_sum(basis, C10_J_REF) - hs_embedding_partial_sum(basis, C10_J))
    ok = bool(np.all(ratios < 1) and np.all(np.diff(sums) > 0) and gap < C10_TOL)
    assert record(10, ok, f"max ratio {ratios.max():.4f} (<1), |S128-S64|={gap:.1e} (<{C10_TOL:g})")


# --- 11 ------------------------------------------------------------------------------

def test_c11_determinism(tmp_path):
    configs = {
        "scalar": {"seed": 7, "problem": {"preset": "scalar-benchmark"}, "solver": {"steps": 100},
                   "verify": {"checks": ["value", "optimality", "transposition", "hlambda_transposition",
                                         "cost_decomposition", "stationarity"],
                              "paths": 3000, "perturbations": 4}},
        "wonham": {"seed": 7, "problem": {"preset": "wonham-random"},
                   "solver": {"steps": 50, "paths": 2000},
                   "verify": {"checks": ["value", "stationarity"], "paths": 3000}},
    }
    same = True
    for name, raw in configs.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(raw))
        outs = []
        for i, workers in enumerate((1, 1, 4)):
            out = tmp_path / f"{name}{i}"
            main(["run", "--config", str(path), "--out", str(out), "--workers", str(workers)])
            outs.append(sorted(out.glob("report*")) + [out / "manifest.json"])
        ref = {p.name: p.read_bytes() for p in outs[0]}
        same &= len(ref) > 0
        for other in outs[1:]:
            same &= {p.name: p.read_bytes() for p in other} == ref
    assert record(11, same, "reports and manifest byte-identical across repeated runs and workers 1 vs 4")
