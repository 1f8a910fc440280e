"""Exponential Euler-Maruyama simulation of the truncated state equation.

Noise is drawn from per-path counter-based streams: path ``i`` always sees the
same Brownian increments for a given ``(seed, steps)``, independent of how many
paths are simulated, in which order, or on how many workers.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import SimulationError
from .problem import LQProblem

BLOCK = 256
CHUNK = 1024

STREAM_BROWNIAN = 0
STREAM_W0 = 1


def path_normals(seed: int, stream: int, start: int, count: int, shape=()) -> np.ndarray:
    """Standard normals for paths ``start .. start+count-1``.

    Draws for path ``i`` depend only on ``(seed, stream, i, shape)``.
    """
    shape = tuple(shape)
    if count <= 0:
        return np.empty((0,) + shape)
    first, last = start // BLOCK, (start + count - 1) // BLOCK
    parts = []
    for b in range(first, last + 1):
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, b])))
        parts.append(gen.standard_normal((BLOCK,) + shape))
    draws = np.concatenate(parts, axis=0)
    off = start - first * BLOCK
    return draws[off:off + count]


def path_uniforms(seed: int, stream: int, start: int, count: int, shape=()) -> np.ndarray:
    shape = tuple(shape)
    if count <= 0:
        return np.empty((0,) + shape)
    first, last = start // BLOCK, (start + count - 1) // BLOCK
    parts = []
    for b in range(first, last + 1):
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, b])))
        parts.append(gen.uniform(-1.0, 1.0, (BLOCK,) + shape))
    draws = np.concatenate(parts, axis=0)
    off = start - first * BLOCK
    return draws[off:off + count]


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if not self.T > self.t0:
            raise ValueError(f"need T > t0, got t0={self.t0}, T={self.T}")

    @classmethod
    def for_problem(cls, problem: LQProblem, steps: Optional[int] = None) -> "TimeGrid":
        return cls(0.0, problem.T, int(problem.steps if steps is None else steps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def time(self, k: int) -> float:
        return self.T if k == self.steps else self.t0 + k * self.dt

    def index(self, t: float) -> int:
        k = int(round((t - self.t0) / self.dt))
        if k < 0 or k > self.steps or abs(self.time(k) - t) > 1e-9 * max(1.0, abs(self.T)):
            raise ValueError(f"t={t} is not a grid point of {self}")
        return k

    def sub(self, t: float) -> "TimeGrid":
        """The tail grid starting at grid point ``t``."""
        k = self.index(t)
        if k == self.steps:
            raise ValueError("cannot start a sub-grid at the terminal time")
        return TimeGrid(self.time(k), self.T, self.steps - k)


# --- control policies ----------------------------------------------------------------

@dataclass(frozen=True)
class OpenLoop:
    """Fixed control sequence, shape ``(steps, k)`` or per path ``(P, steps, k)``."""

    u: np.ndarray


@dataclass(frozen=True)
class LinearFeedback:
    """``u_k = gain(t_k, W(t_k)) x_k + offset_k``.

    ``gain(t, w)`` returns ``(k, n)`` or, for a batch ``w`` of shape ``(P,)``,
    ``(P, k, n)``. ``offset`` has shape ``(steps, k)`` or ``(P, steps, k)``.
    """

    gain: Callable
    offset: Optional[np.ndarray] = None

    @classmethod
    def constant(cls, theta, offset=None):
        theta = np.array(theta, dtype=float, ndmin=2)
        return cls(lambda t, w: theta, offset)


def _mv(M: np.ndarray, x: np.ndarray) -> np.ndarray:
    if M.ndim == 2:
        return x @ M.T
    return np.einsum("pij,pj->pi", M, x)


def _rows(a, lo, hi, ndim_shared):
    """Slice per-path arrays; shared arrays (fewer dims) pass through."""
    if a is None:
        return None
    a = np.asarray(a, dtype=float)
    return a if a.ndim == ndim_shared else a[lo:hi]


@dataclass(frozen=True)
class TrajectoryBundle:
    grid: TimeGrid
    paths: Optional[np.ndarray]        # (P, steps+1, n)
    brownian_increments: np.ndarray    # (P, steps)
    brownian: np.ndarray               # (P, steps+1), W(t_k)
    controls: Optional[np.ndarray]     # (P, steps, k)
    seed: int
    path_offset: int = 0

    @property
    def n_paths(self) -> int:
        return self.brownian_increments.shape[0]

    @property
    def terminal(self) -> np.ndarray:
        return self.paths[:, -1]


def brownian_increments(seed: int, grid: TimeGrid, start: int, count: int) -> np.ndarray:
    return np.sqrt(grid.dt) * path_normals(seed, STREAM_BROWNIAN, start, count, (grid.steps,))


def initial_brownian(seed: int, grid: TimeGrid, start: int, count: int, w0=None) -> np.ndarray:
    if w0 is not None:
        return np.broadcast_to(np.asarray(w0, dtype=float), (count,)).copy()
    if grid.t0 == 0.0:
        return np.zeros(count)
    return np.sqrt(grid.t0) * path_normals(seed, STREAM_W0, start, count)


def _simulate_chunk(problem, grid, init, control, fu, fv, dW, W0, start):
    P = dW.shape[0]
    n, kdim = problem.modes, problem.control_dim
    dt = grid.dt
    E = np.exp(problem.mu * dt)
    x = np.empty((P, grid.steps + 1, n))
    x[:, 0] = init
    W = np.empty((P, grid.steps + 1))
    W[:, 0] = W0
    W[:, 1:] = W0[:, None] + np.cumsum(dW, axis=1)
    U = np.zeros((P, grid.steps, kdim))
    has_control = control is not None
    for k in range(grid.steps):
        t = grid.time(k)
        w = W[:, k]
        xk = x[:, k]
        A1 = problem.A1.eval(t, w)
        C = problem.C.eval(t, w)
        drift = _mv(A1, xk)
        diff = _mv(C, xk)
        if has_control:
            if isinstance(control, OpenLoop):
                uk = control.u[k] if control.u.ndim == 2 else control.u[:, k]
                uk = np.broadcast_to(uk, (P, kdim))
            else:
                uk = _mv(np.asarray(control.gain(t, w)), xk)
                if control.offset is not None:
                    off = control.offset
                    uk = uk + (off[k] if off.ndim == 2 else off[:, k])
            U[:, k] = uk
            drift = drift + _mv(problem.B.eval(t, w), uk)
            diff = diff + _mv(problem.D.eval(t, w), uk)
        if fu is not None:
            drift = drift + (fu[k] if fu.ndim == 2 else fu[:, k])
        if fv is not None:
            diff = diff + (fv[k] if fv.ndim == 2 else fv[:, k])
        nxt = E * (xk + drift * dt + diff * dW[:, k, None])
        if not np.all(np.isfinite(nxt)):
            bad = int(np.argmax(~np.all(np.isfinite(nxt), axis=1)))
            raise SimulationError(f"non-finite state on path {start + bad} at step {k + 1}",
                                  path=start + bad, step=k + 1)
        x[:, k + 1] = nxt
    return x, W, (U if has_control else None)


def simulate(problem: LQProblem, grid: TimeGrid, init, control=None, forcing_u=None,
             forcing_v=None, paths: int = 1, seed: int = 0, *, path_offset: int = 0,
             w0=None, dW=None, workers: int = 1, keep_paths: bool = True) -> TrajectoryBundle:
    """Simulate ``paths`` trajectories from ``grid.t0``.

    Each step is ``x <- e^{A dt}[x + (A1 x + B u + f_u) dt + (C x + D u + f_v) dW]``.
    ``control`` is ``None`` (zero), :class:`OpenLoop` or :class:`LinearFeedback`.
    Forcings are shared ``(steps, n)`` or per path ``(P, steps, n)`` arrays.
    ``dW`` may be supplied to replay a noise realization; otherwise it is drawn
    from the per-path streams of ``seed`` starting at ``path_offset``.
    """
    n = problem.modes
    if paths < 1:
        raise ValueError("paths must be >= 1")
    init = np.asarray(init, dtype=float)
    if init.shape[-1] != n:
        raise ValueError(f"initial state has length {init.shape[-1]}, expected {n}")
    init = np.broadcast_to(init, (paths, n))
    if control is not None and not isinstance(control, (OpenLoop, LinearFeedback)):
        raise TypeError(f"unsupported control policy {type(control).__name__}")
    if dW is None:
        dW = brownian_increments(seed, grid, path_offset, paths)
    else:
        dW = np.asarray(dW, dtype=float)
        if dW.shape != (paths, grid.steps):
            raise ValueError(f"dW has shape {dW.shape}, expected {(paths, grid.steps)}")
    W0 = initial_brownian(seed, grid, path_offset, paths, w0)

    def run(lo, hi):
        ctl = control
        if isinstance(control, OpenLoop):
            ctl = OpenLoop(_rows(control.u, lo, hi, 2))
        elif isinstance(control, LinearFeedback) and control.offset is not None:
            ctl = LinearFeedback(control.gain, _rows(control.offset, lo, hi, 2))
        # overflow is detected explicitly and raised as SimulationError
        with np.errstate(over="ignore", invalid="ignore"):
            return _simulate_chunk(problem, grid, init[lo:hi], ctl, _rows(forcing_u, lo, hi, 2),
                                   _rows(forcing_v, lo, hi, 2), dW[lo:hi], W0[lo:hi],
                                   path_offset + lo)

    bounds = [(lo, min(lo + CHUNK, paths)) for lo in range(0, paths, CHUNK)]
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: run(*b), bounds))
    else:
        parts = [run(*b) for b in bounds]
    X = np.concatenate([p[0] for p in parts])
    W = np.concatenate([p[1] for p in parts])
    U = None if control is None else np.concatenate([p[2] for p in parts])
    return TrajectoryBundle(grid, X if keep_paths else X[:, [0, -1]], dW, W, U, seed, path_offset)


def flow_map(problem: LQProblem, theta, grid: TimeGrid, t: float, init, paths: int = 1,
             seed: int = 0, **kw) -> TrajectoryBundle:
    """Closed-loop flow from time ``t`` with zero forcings; linear in ``init``."""
    sub = grid.sub(t)
    if theta is None:
        control = None
    elif isinstance(theta, LinearFeedback):
        control = theta
    elif callable(theta):
        control = LinearFeedback(theta)
    else:
        control = LinearFeedback.constant(theta)
    return simulate(problem, sub, init, control, paths=paths, seed=seed, **kw)


@dataclass(frozen=True)
class CostReport:
    mean: float
    standard_error: float
    paths: int
    per_path: Optional[np.ndarray] = None

    @property
    def retained(self) -> bool:
        return self.per_path is not None


def path_costs(problem: LQProblem, grid: TimeGrid, X: np.ndarray, W: np.ndarray,
               U: Optional[np.ndarray]) -> np.ndarray:
    """Per-path ``1/2 [sum_k (x'Qx + u'Ru) dt + x_T' G x_T]`` (left endpoint rule)."""
    P = X.shape[0]
    dt = grid.dt
    run = np.zeros(P)
    for k in range(grid.steps):
        t = grid.time(k)
        xk = X[:, k]
        run += np.einsum("pi,pi->p", _mv(problem.Q.eval(t, W[:, k]), xk), xk)
        if U is not None:
            uk = U[:, k]
            run += np.einsum("pi,pi->p", _mv(problem.R.eval(t, W[:, k]), uk), uk)
    xT = X[:, -1]
    term = np.einsum("pi,pi->p", _mv(problem.G.eval(problem.T, W[:, -1]), xT), xT)
    return 0.5 * (run * dt + term)


def summarize(values: np.ndarray, keep: bool = True) -> CostReport:
    values = np.asarray(values, dtype=float)
    P = values.size
    se = float(values.std(ddof=1) / np.sqrt(P)) if P > 1 else 0.0
    return CostReport(float(values.mean()), se, P, values if keep else None)


def evaluate_cost(problem: LQProblem, bundle: TrajectoryBundle, controls=None,
                  keep_per_path: bool = True) -> CostReport:
    X = bundle.paths
    if X is None or X.shape[1] != bundle.grid.steps + 1:
        raise ValueError("bundle must retain full trajectories to evaluate the running cost")
    U = bundle.controls if controls is None else np.asarray(controls, dtype=float)
    if U is not None:
        U = np.broadcast_to(U, (X.shape[0], bundle.grid.steps, problem.control_dim))
    return summarize(path_costs(problem, bundle.grid, X, bundle.brownian, U), keep_per_path)


def write_trajectories_csv(bundle: TrajectoryBundle, path) -> None:
    """CSV dump with columns ``path, step, t, mode_1 .. mode_N``."""
    X = bundle.paths
    n = X.shape[-1]
    times = bundle.grid.times
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["path", "step", "t"] + [f"mode_{j + 1}" for j in range(n)])
        for p in range(X.shape[0]):
            for k in range(X.shape[1]):
                wr.writerow([bundle.path_offset + p, k, repr(float(times[k]))]
                            + [repr(float(v)) for v in X[p, k]])
