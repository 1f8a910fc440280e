"""Dirichlet-Laplacian eigenbasis on the unit interval / square.

Everything downstream works in eigen-coordinates: a state is the vector of its
first ``N`` sine coefficients, the leading operator is the diagonal of
eigenvalues, and multiplication operators become Galerkin matrices.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError

ORTHO_TOL = 1e-8


def default_quad_points(max_frequency: int) -> int:
    # 4N nodes alone leave ~1e-3 orthogonality error at N=1, hence the floor
    return max(4 * max_frequency, 32)


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated eigenbasis of the Dirichlet Laplacian.

    Attributes:
        dimension: spatial dimension m (1 or 2).
        modes: truncation level N.
        eigenvalues: mu_j < 0, ordered by increasing |mu_j|.
        graph_norms: |e_j|_{D(A)} = sqrt(1 + mu_j^2).
        lambda_weights: |mu_j|^(-m/2).
        frequencies: integer sine frequencies of each mode, shape (N, m).
        k: growth exponent of the semigroup bound (0 for a contraction).
    """

    dimension: int
    modes: int
    eigenvalues: np.ndarray
    graph_norms: np.ndarray
    lambda_weights: np.ndarray
    frequencies: np.ndarray
    k: float = 0.0

    def eval(self, *coords: np.ndarray) -> np.ndarray:
        """Evaluate all basis functions; returns shape (N, *coords[0].shape)."""
        if len(coords) != self.dimension:
            raise ValueError(f"expected {self.dimension} coordinate arrays, got {len(coords)}")
        coords = [np.asarray(c, dtype=float) for c in coords]
        out = np.ones((self.modes,) + coords[0].shape)
        for d, c in enumerate(coords):
            freq = self.frequencies[:, d].reshape((-1,) + (1,) * c.ndim)
            out = out * np.sqrt(2.0) * np.sin(np.pi * freq * c[None])
        return out

    @property
    def max_frequency(self) -> int:
        return int(self.frequencies.max())

    def quadrature(self, quad_points: int | None = None):
        """Tensor Gauss-Legendre nodes on the unit box.

        Returns ``(coords, weights)`` with ``coords`` a list of flat arrays.
        """
        q = default_quad_points(self.max_frequency) if quad_points is None else int(quad_points)
        x, w = np.polynomial.legendre.leggauss(q)
        x = 0.5 * (x + 1.0)
        w = 0.5 * w
        if self.dimension == 1:
            return [x], w
        X, Y = np.meshgrid(x, x, indexing="ij")
        W = np.outer(w, w)
        return [X.ravel(), Y.ravel()], W.ravel()

    def orthogonality_error(self, quad_points: int | None = None) -> float:
        coords, w = self.quadrature(quad_points)
        E = self.eval(*coords)
        gram = (E * w) @ E.T
        return float(np.abs(gram - np.eye(self.modes)).max())


def build_basis(m: int, N: int, domain: str = "unit") -> SpectralBasis:
    """Sine eigenbasis of -Laplacian with Dirichlet conditions on (0,1)^m.

    For ``m = 1``: ``e_j(x) = sqrt(2) sin(j pi x)``, ``mu_j = -(j pi)^2``.
    For ``m = 2`` the tensor modes are ordered by ``i^2 + j^2`` (ties broken
    lexicographically).
    """
    if domain != "unit":
        raise ConfigurationError(f"unsupported domain {domain!r}; only the unit box is available")
    if m not in (1, 2):
        raise ConfigurationError(f"spatial dimension m={m} not supported (use 1 or 2)")
    if N < 1:
        raise ConfigurationError(f"mode count must be positive, got N={N}")

    if m == 1:
        freqs = np.arange(1, N + 1).reshape(-1, 1)
    else:
        side = int(np.ceil(np.sqrt(N))) + 1
        # every pair with i^2 + j^2 below the N-th smallest value fits in a square of this side
        while True:
            pairs = sorted(itertools.product(range(1, side + 1), repeat=2),
                           key=lambda p: (p[0] ** 2 + p[1] ** 2, p))
            cutoff = pairs[N - 1][0] ** 2 + pairs[N - 1][1] ** 2
            if (side + 1) ** 2 + 1 > cutoff:
                break
            side *= 2
        freqs = np.array(pairs[:N])

    mu = -(np.pi ** 2) * (freqs.astype(float) ** 2).sum(axis=1)
    graph = np.sqrt(1.0 + mu ** 2)
    lam = np.abs(mu) ** (-m / 2.0)
    for arr in (mu, graph, lam, freqs):
        arr.setflags(write=False)
    return SpectralBasis(m, N, mu, graph, lam, freqs)


def hs_embedding_partial_sum(basis: SpectralBasis, N: int) -> float:
    """Squared Hilbert-Schmidt norm of the identity H -> H'_lambda on the first N modes."""
    if N < 0 or N > basis.modes:
        raise ValueError(f"N must lie in [0, {basis.modes}], got {N}")
    if N == 0:
        return 0.0
    terms = basis.lambda_weights[:N] ** 2 / basis.graph_norms[:N] ** 2
    return float(terms.sum())


def hs_embedding_terms(basis: SpectralBasis) -> np.ndarray:
    return basis.lambda_weights ** 2 / basis.graph_norms ** 2


@dataclass(frozen=True)
class GalerkinMatrix:
    entries: np.ndarray
    symmetric: bool
    source: str = ""
    orthogonality_error: float = 0.0
    warnings: tuple = field(default_factory=tuple)


def multiplication_matrix(coeff_fn: Callable | float, basis: SpectralBasis,
                          quad_points: int | None = None, name: str = "") -> GalerkinMatrix:
    """Galerkin matrix ``M_jk = int coeff(x) e_j(x) e_k(x) dx`` by Gauss-Legendre quadrature.

    ``coeff_fn`` is called with one flat coordinate array per dimension and may
    return a scalar (broadcast) or an array of matching length. Plain numbers
    are treated as constant functions.
    """
    q = default_quad_points(basis.max_frequency) if quad_points is None else int(quad_points)
    if q < 2 * basis.max_frequency:
        raise ValueError(f"quad_points={q} below 2 * max frequency ({2 * basis.max_frequency})")
    coords, w = basis.quadrature(q)
    if callable(coeff_fn):
        vals = np.broadcast_to(np.asarray(coeff_fn(*coords), dtype=float), w.shape)
    else:
        vals = np.full(w.shape, float(coeff_fn))
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"coefficient {name!r} is not finite on the quadrature grid")

    E = basis.eval(*coords)
    M = (E * (w * vals)) @ E.T
    M = 0.5 * (M + M.T)
    ortho = float(np.abs((E * w) @ E.T - np.eye(basis.modes)).max())
    notes = ()
    if ortho > ORTHO_TOL:
        msg = f"quadrature orthogonality error {ortho:.2e} exceeds {ORTHO_TOL:.0e} at {q} nodes"
        warnings.warn(msg, stacklevel=2)
        notes = (msg,)
    return GalerkinMatrix(M, True, name, ortho, notes)


def semigroup_apply(basis: SpectralBasis, dt: float, v: np.ndarray,
                    eigenvalues: np.ndarray | None = None) -> np.ndarray:
    """Apply ``e^{A dt}`` to coefficient vectors (last axis indexes modes)."""
    if dt < 0:
        raise ValueError(f"semigroup time must be nonnegative, got dt={dt}")
    mu = basis.eigenvalues if eigenvalues is None else np.asarray(eigenvalues, dtype=float)
    return np.exp(mu * dt) * np.asarray(v, dtype=float)


def weighted_norms(v: np.ndarray, basis: SpectralBasis):
    """Return ``(|v|_H, |v|_{H_lambda}, |v|_{H'_lambda})`` for coefficient vector ``v``."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != basis.modes:
        raise ValueError(f"vector length {v.shape[-1]} != modes {basis.modes}")
    lam, g = basis.lambda_weights, basis.graph_norms
    h = np.sqrt(np.sum(v ** 2, axis=-1))
    h_lam = np.sqrt(np.sum(v ** 2 * g ** 2 / lam ** 2, axis=-1))
    h_lam_prime = np.sqrt(np.sum(v ** 2 * lam ** 2 / g ** 2, axis=-1))
    return h, h_lam, h_lam_prime


def hlambda_operator_norm(M: np.ndarray, basis: SpectralBasis, prime: bool = False) -> float:
    """Operator norm of ``M`` on H_lambda (or on H'_lambda with ``prime=True``)."""
    s = basis.lambda_weights / basis.graph_norms if prime else basis.graph_norms / basis.lambda_weights
    weighted = (s[:, None] * np.asarray(M)) / s[None, :]
    return float(np.linalg.norm(weighted, 2))
