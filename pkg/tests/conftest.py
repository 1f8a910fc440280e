import numpy as np
import pytest

from stochlq.problem import CoefficientProcess, LQProblem, from_parabolic_spec
from stochlq.spectral import build_basis


def scalar_benchmark(steps=200, g=1.0, T=1.0):
    """N=1, mu hooked to 0, B=R=1, G=g, everything else 0."""
    b = build_basis(1, 1)
    pr = from_parabolic_spec(0.0, 0.0, 1.0, 0.0, 0.0, 1.0, g, b, T, steps, name="scalar")
    return pr.with_mu([0.0])


def heat_deterministic(N=8, steps=200):
    b = build_basis(1, N)
    return from_parabolic_spec(0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, b, 1.0, steps, name="heat")


def heat_noisy(N=4, steps=200):
    b = build_basis(1, N)
    return from_parabolic_spec(lambda x: 0.5 * np.cos(np.pi * x), lambda x: 0.3 + 0.2 * x, 1.0, 0.3,
                               1.0, 1.0, 1.0, b, 1.0, steps, name="noisy")


def scalar_problem(A1=0.0, B=0.0, C=0.0, D=0.0, Q=0.0, R=1.0, G=0.0, T=1.0, steps=100, mu=0.0):
    """Single-mode problem from raw coefficient processes (numbers or processes)."""
    b = build_basis(1, 1)

    def proc(v):
        return v if isinstance(v, CoefficientProcess) else CoefficientProcess.constant([[v]])

    pr = LQProblem(b, T, proc(A1), proc(B), proc(C), proc(D), proc(Q), proc(R), proc(G), steps)
    return pr if mu is None else pr.with_mu([mu])


def wonham_random(steps=100):
    """Scalar random-coefficient problem: A1 = 0.5 sin W, G = 1 + 0.5 sin W_T, D = 0.5."""
    a1 = CoefficientProcess.brownian(lambda t, w: 0.5 * np.sin(np.asarray(w, float))[..., None, None], (1, 1))
    g = CoefficientProcess.brownian(lambda t, w: (1.0 + 0.5 * np.sin(np.asarray(w, float)))[..., None, None],
                                    (1, 1), symmetric=True)
    return scalar_problem(A1=a1, B=1.0, D=0.5, Q=1.0, R=1.0, G=g, steps=steps)


@pytest.fixture
def scalar():
    return scalar_benchmark()


@pytest.fixture
def basis4():
    return build_basis(1, 4)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
