import numpy as np
import pytest
from scipy.linalg import expm

from stochlq.errors import SimulationError
from stochlq.forward import (
    CostReport,
    LinearFeedback,
    OpenLoop,
    TimeGrid,
    evaluate_cost,
    flow_map,
    path_costs,
    simulate,
    summarize,
    write_trajectories_csv,
)
from stochlq.problem import from_parabolic_spec
from stochlq.spectral import build_basis

from conftest import heat_noisy, scalar_problem


def test_time_grid():
    g = TimeGrid(0.0, 1.0, 4)
    assert g.dt == 0.25 and g.time(4) == 1.0
    assert g.index(0.5) == 2
    sub = g.sub(0.5)
    assert sub.steps == 2 and sub.t0 == 0.5
    with pytest.raises(ValueError):
        g.index(0.3)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)
    with pytest.raises(ValueError):
        g.sub(1.0)


def test_pure_heat_decay_is_exact():
    b = build_basis(1, 3)
    pr = from_parabolic_spec(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, b, 1.0, 50)
    grid = TimeGrid.for_problem(pr)
    bun = simulate(pr, grid, [1.0, 0.0, 0.0], paths=5, seed=3)
    expected = np.exp(-np.pi ** 2) * np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(bun.terminal, np.tile(expected, (5, 1)), rtol=1e-12, atol=0)
    np.testing.assert_array_equal(bun.paths[:, 0], np.tile([1.0, 0, 0], (5, 1)))


def test_stochastic_exponential_mean():
    pr = scalar_problem(C=1.0, steps=100)
    bun = simulate(pr, TimeGrid.for_problem(pr), [1.0], paths=10_000, seed=11)
    xT = bun.terminal[:, 0]
    se = xT.std(ddof=1) / np.sqrt(xT.size)
    assert abs(xT.mean() - 1.0) < 3 * se


def test_constant_drift_forcing_variation_of_constants():
    b = build_basis(1, 1)
    mu, c, T = -np.pi ** 2, 2.0, 1.0
    errs = []
    for steps in (100, 200, 400):
        pr = from_parabolic_spec(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, b, T, steps)
        fu = np.full((steps, 1), c)
        x = simulate(pr, TimeGrid.for_problem(pr), [1.0], forcing_u=fu, seed=0).terminal[0, 0]
        exact = np.exp(mu * T) + c * (1 - np.exp(mu * T)) / (-mu)
        errs.append(abs(x - exact))
    assert errs[0] < 0.05 * abs(exact)
    assert 1.4 < errs[0] / errs[1] < 2.6 and 1.4 < errs[1] / errs[2] < 2.6


def test_weak_order_decay_with_reaction():
    b = build_basis(1, 1)
    a1 = 3.0
    exact = np.exp(-np.pi ** 2 + a1)
    errs = []
    for steps in (50, 100, 200, 400):
        pr = from_parabolic_spec(a1, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, b, 1.0, steps)
        errs.append(abs(simulate(pr, TimeGrid.for_problem(pr), [1.0]).terminal[0, 0] - exact))
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 1.4) & (ratios < 2.6)), ratios


def test_brownian_increment_moments():
    pr = scalar_problem()
    grid = TimeGrid(0.0, 1.0, 20)
    dW = simulate(pr, grid, [0.0], paths=2000, seed=5).brownian_increments
    se_mean = np.sqrt(grid.dt / dW.size)
    assert abs(dW.mean()) < 5 * se_mean
    var_se = grid.dt * np.sqrt(2.0 / dW.size)
    assert abs(dW.var() - grid.dt) < 5 * var_se


def test_bitwise_reproducible_across_workers_and_chunks():
    pr = heat_noisy()
    grid = TimeGrid(0.0, 1.0, 40)
    th = LinearFeedback.constant(-0.3 * np.eye(4))
    a = simulate(pr, grid, np.ones(4), th, paths=2500, seed=9)
    b = simulate(pr, grid, np.ones(4), th, paths=2500, seed=9, workers=4)
    np.testing.assert_array_equal(a.paths, b.paths)
    # path i only depends on (seed, i): a slice simulated alone is identical
    c = simulate(pr, grid, np.ones(4), th, paths=300, seed=9, path_offset=1000)
    np.testing.assert_array_equal(a.paths[1000:1300], c.paths)


def test_closed_loop_open_loop_consistency():
    pr = heat_noisy()
    grid = TimeGrid(0.0, 1.0, 50)
    th = LinearFeedback(lambda t, w: -(0.5 + 0.1 * t) * np.eye(4))
    cl = simulate(pr, grid, np.ones(4), th, paths=200, seed=4)
    ol = simulate(pr, grid, np.ones(4), OpenLoop(cl.controls), paths=200, seed=4)
    assert np.abs(cl.paths - ol.paths).max() < 1e-12


def test_flow_map_linearity_and_zero():
    pr = heat_noisy()
    grid = TimeGrid(0.0, 1.0, 50)
    theta = -0.4 * np.eye(4)
    rng = np.random.default_rng(0)
    x1, x2 = rng.standard_normal(4), rng.standard_normal(4)
    f = lambda x: flow_map(pr, theta, grid, 0.2, x, paths=50, seed=2).paths  # noqa: E731
    np.testing.assert_allclose(f(2.0 * x1 - 3.0 * x2), 2.0 * f(x1) - 3.0 * f(x2), atol=1e-12)
    assert np.all(f(np.zeros(4)) == 0.0)
    assert flow_map(pr, theta, grid, 0.2, x1).grid.t0 == pytest.approx(0.2)


def test_flow_map_matches_matrix_exponential():
    b = build_basis(1, 3)
    a1 = lambda x: 2.0 * x  # noqa: E731
    pr = from_parabolic_spec(a1, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, b, 0.5, 400)
    M = np.diag(b.eigenvalues) + pr.A1.eval(0.0)
    grid = TimeGrid.for_problem(pr)
    Phi = np.column_stack([flow_map(pr, None, grid, 0.0, e).terminal[0] for e in np.eye(3)])
    exact = expm(M * 0.5)
    assert np.abs(Phi - exact).max() < 5 * grid.dt * np.abs(exact).max()


def test_non_finite_state_reports_path_and_step():
    pr = scalar_problem(A1=1e200, steps=10)
    with pytest.raises(SimulationError) as exc:
        simulate(pr, TimeGrid.for_problem(pr), [1.0], paths=3, seed=0, path_offset=7)
    assert exc.value.path == 7 and exc.value.step >= 1


def test_simulate_validates_inputs():
    pr = scalar_problem()
    grid = TimeGrid.for_problem(pr)
    with pytest.raises(ValueError):
        simulate(pr, grid, [1.0, 2.0])
    with pytest.raises(ValueError):
        simulate(pr, grid, [1.0], paths=0)
    with pytest.raises(TypeError):
        simulate(pr, grid, [1.0], control="bang-bang")


def test_cost_examples():
    pr = scalar_problem(B=1.0, R=1.0, G=0.0, Q=0.0, steps=100)
    grid = TimeGrid.for_problem(pr)
    zero = simulate(pr, grid, [0.0], paths=3)
    assert evaluate_cost(pr, zero).mean == 0.0
    c = 0.7
    bun = simulate(pr, grid, [0.0], OpenLoop(np.full((100, 1), c)), paths=3)
    assert evaluate_cost(pr, bun).mean == pytest.approx(0.5 * c ** 2 * 1.0, rel=1e-12)
    # heat decay with G = 1
    b = build_basis(1, 1)
    pr2 = from_parabolic_spec(0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, b, 1.0, 100)
    rep = evaluate_cost(pr2, simulate(pr2, TimeGrid.for_problem(pr2), [1.0], paths=4, seed=1))
    assert rep.mean == pytest.approx(0.5 * np.exp(-2 * np.pi ** 2), rel=1e-12)
    assert rep.standard_error == 0.0


def test_cost_report_standard_error_and_positivity():
    pr = heat_noisy(steps=50)
    bun = simulate(pr, TimeGrid.for_problem(pr), np.ones(4), LinearFeedback.constant(-np.eye(4)),
                   paths=500, seed=2)
    rep = evaluate_cost(pr, bun)
    assert isinstance(rep, CostReport) and rep.retained
    assert np.all(rep.per_path >= 0)
    assert rep.standard_error == pytest.approx(rep.per_path.std(ddof=1) / np.sqrt(500))
    assert summarize(rep.per_path, keep=False).per_path is None


def test_cost_rejects_endpoint_only_bundle():
    pr = scalar_problem()
    bun = simulate(pr, TimeGrid.for_problem(pr), [1.0], keep_paths=False)
    with pytest.raises(ValueError):
        evaluate_cost(pr, bun)


def test_path_costs_left_endpoint():
    pr = scalar_problem(Q=1.0, steps=2)
    grid = TimeGrid.for_problem(pr)
    X = np.array([[[1.0], [2.0], [3.0]]])
    val = path_costs(pr, grid, X, np.zeros((1, 3)), None)
    assert val[0] == pytest.approx(0.5 * (1.0 + 4.0) * 0.5)


def test_trajectory_csv(tmp_path):
    pr = heat_noisy(steps=5)
    bun = simulate(pr, TimeGrid.for_problem(pr), np.ones(4), paths=2, seed=1, path_offset=10)
    out = tmp_path / "traj.csv"
    write_trajectories_csv(bun, out)
    lines = out.read_text().splitlines()
    assert lines[0] == "path,step,t,mode_1,mode_2,mode_3,mode_4"
    assert len(lines) == 1 + 2 * 6
    assert lines[1].startswith("10,0,0.0,")
