import warnings

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from stochlq.errors import ConfigurationError
from stochlq.spectral import (
    build_basis,
    hlambda_operator_norm,
    hs_embedding_partial_sum,
    hs_embedding_terms,
    multiplication_matrix,
    semigroup_apply,
    weighted_norms,
)

# frozen oracle values
M12_X = -16.0 / (9.0 * np.pi ** 2)                  # int_0^1 x 2 sin(pi x) sin(2 pi x) dx
HS_FIRST_TERM = np.pi ** -2 / (1.0 + np.pi ** 4)     # lambda_1^2 / (1 + mu_1^2)


def fd_dirichlet_eigs(n_grid, k):
    """Smallest eigenvalues of -d^2/dx^2 on (0,1), second-order finite differences."""
    h = 1.0 / (n_grid + 1)
    d = np.full(n_grid, 2.0 / h ** 2)
    e = np.full(n_grid - 1, -1.0 / h ** 2)
    return eigh_tridiagonal(d, e, select="i", select_range=(0, k - 1), eigvals_only=True)


def test_eigenvalues_match_finite_difference_oracle():
    b = build_basis(1, 3)
    fd = fd_dirichlet_eigs(10_000, 3)
    np.testing.assert_allclose(-b.eigenvalues, fd, rtol=1e-3)
    np.testing.assert_allclose(b.eigenvalues, -np.pi ** 2 * np.array([1, 4, 9]), rtol=1e-14)


def test_first_lambda_weight():
    assert build_basis(1, 1).lambda_weights[0] == pytest.approx(1.0 / np.pi, rel=1e-14)


def test_basis_orthonormal_on_quadrature():
    b = build_basis(1, 2)
    coords, w = b.quadrature()
    E = b.eval(*coords)
    assert abs((E[0] * E[1] * w).sum()) < 1e-12
    assert b.orthogonality_error() < 1e-10


def test_eigenfunction_formula():
    b = build_basis(1, 3)
    x = np.linspace(0, 1, 7)
    np.testing.assert_allclose(b.eval(x)[2], np.sqrt(2) * np.sin(3 * np.pi * x), atol=1e-15)


@pytest.mark.parametrize("m,N", [(0, 3), (3, 3), (1, 0)])
def test_build_basis_rejects_bad_arguments(m, N):
    with pytest.raises(ConfigurationError):
        build_basis(m, N)


def test_build_basis_rejects_other_domains():
    with pytest.raises(ConfigurationError):
        build_basis(1, 2, domain="disk")


def test_two_dimensional_ordering():
    b = build_basis(2, 6)
    sums = (b.frequencies ** 2).sum(axis=1)
    assert np.all(np.diff(sums) >= 0)
    assert tuple(b.frequencies[0]) == (1, 1)
    np.testing.assert_allclose(b.eigenvalues[0], -2 * np.pi ** 2)
    np.testing.assert_allclose(b.lambda_weights, 1.0 / np.abs(b.eigenvalues))
    assert b.orthogonality_error() < 1e-10


def test_basis_invariants():
    b = build_basis(1, 40)
    assert np.all(b.eigenvalues < 0)
    assert np.all(np.diff(np.abs(b.eigenvalues)) >= 0)
    assert np.all(np.diff(b.lambda_weights) < 0)
    assert np.all(b.graph_norms >= 1.0)
    # l2 membership of lambda: sum lambda_j^2 = sum 1/(j pi)^2 < 1/6
    assert (b.lambda_weights ** 2).sum() < 1.0 / 6.0


def test_hs_partial_sum_first_term_and_empty():
    b = build_basis(1, 5)
    assert hs_embedding_partial_sum(b, 1) == pytest.approx(HS_FIRST_TERM, rel=1e-12)
    assert hs_embedding_partial_sum(b, 1) == pytest.approx(0.0010296, abs=5e-8)
    assert hs_embedding_partial_sum(b, 0) == 0.0
    with pytest.raises(ValueError):
        hs_embedding_partial_sum(b, 6)


def test_hs_partial_sums_bounded_by_eigenvalue_series():
    b = build_basis(1, 200)
    bound = 4.0 * np.sum(np.abs(b.eigenvalues) ** -1.0)
    sums = np.cumsum(hs_embedding_terms(b))
    assert np.all(np.diff(sums) > 0)
    assert sums[-1] <= bound


def test_mu_asymptotic_ratio_stabilizes():
    b = build_basis(2, 400)
    j = np.arange(1, 401)
    ratio = np.abs(b.eigenvalues) / j  # m = 2: mu_j ~ C j
    tail = ratio[200:]
    assert np.ptp(tail) / tail.mean() < 0.1


def test_multiplication_by_constants():
    b = build_basis(1, 6)
    np.testing.assert_allclose(multiplication_matrix(1.0, b).entries, np.eye(6), atol=1e-10)
    np.testing.assert_allclose(multiplication_matrix(lambda x: 2.5 + 0 * x, b).entries, 2.5 * np.eye(6),
                               atol=1e-10)


def test_multiplication_identity_at_4N_nodes():
    b = build_basis(1, 8)
    M = multiplication_matrix(1.0, b, quad_points=32)
    np.testing.assert_allclose(M.entries, np.eye(8), atol=1e-10)


def test_multiplication_by_x_matches_trapezoid_oracle():
    b = build_basis(1, 2)
    M = multiplication_matrix(lambda x: x, b).entries
    xs = np.linspace(0.0, 1.0, 100_001)
    f = xs * 2.0 * np.sin(np.pi * xs) * np.sin(2 * np.pi * xs)
    trap = np.trapezoid(f, xs) if hasattr(np, "trapezoid") else np.trapz(f, xs)
    assert trap == pytest.approx(M12_X, abs=1e-9)
    assert M[0, 1] == pytest.approx(M12_X, abs=1e-12)
    assert M[0, 1] == M[1, 0]


def test_multiplication_quadrature_guard_and_warning():
    b = build_basis(1, 4)
    with pytest.raises(ValueError):
        multiplication_matrix(1.0, b, quad_points=7)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        gm = multiplication_matrix(1.0, build_basis(1, 1), quad_points=4)
    assert gm.orthogonality_error > 1e-8
    assert gm.warnings and rec


def test_semigroup_examples():
    b = build_basis(1, 3)
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(semigroup_apply(b, 0.0, v), v)
    out = semigroup_apply(b, 1.0, np.array([1.0, 0, 0]))
    assert out[0] == pytest.approx(np.exp(-np.pi ** 2), rel=1e-14)
    with pytest.raises(ValueError):
        semigroup_apply(b, -0.1, v)


def test_weighted_norm_examples():
    b = build_basis(1, 3)
    e1 = np.array([1.0, 0, 0])
    h, hl, hlp = weighted_norms(e1, b)
    assert h == 1.0
    assert hlp == pytest.approx(b.lambda_weights[0] / b.graph_norms[0], rel=1e-14)
    assert hl == pytest.approx(b.graph_norms[0] / b.lambda_weights[0], rel=1e-14)
    assert weighted_norms(np.zeros(3), b) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        weighted_norms(np.zeros(2), b)


def test_projection_consistency_trend():
    """|Gamma_N L Gamma_N v - L v| shrinks as N grows for a smooth multiplier and vector."""
    big = build_basis(1, 64)
    a = lambda x: 1.0 + np.sin(np.pi * x) ** 2  # noqa: E731
    coords, w = big.quadrature(256)
    v_full = (big.eval(*coords) * w) @ (coords[0] * (1 - coords[0]))  # coefficients of x(1-x)
    Lv = multiplication_matrix(a, big, 256).entries @ v_full
    errs = []
    for N in (4, 8, 16, 32):
        M = multiplication_matrix(a, build_basis(1, N), 256).entries
        approx = np.zeros(64)
        approx[:N] = M @ v_full[:N]
        errs.append(np.linalg.norm(approx - Lv))
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))


def test_hlambda_operator_norm_identity():
    b = build_basis(1, 5)
    assert hlambda_operator_norm(np.eye(5), b) == pytest.approx(1.0)
    assert hlambda_operator_norm(np.eye(5), b, prime=True) == pytest.approx(1.0)
