"""Solvers for ``x(t) = xi + int_0^t f(x(s), s) ds``.

Three methods share one time grid: Picard successive approximation, explicit
Euler, and classical RK4 (the numerical reference).  The grid is uniform
inside every interval between field breakpoints, so no step ever straddles a
jump in time.  On piecewise-constant fields every stage of a step evaluates
the field at the step midpoint, which selects the piece the step lies in.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .core import Trajectory, VectorField
from .errors import DimensionError, DivergenceError, DomainDivergenceError, HorizonError

METHODS = ("picard", "euler", "rk4_reference")
REFERENCE_FACTOR = 8


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4_reference"
    time_steps: int = 256
    picard_iterations: int = 30
    picard_tolerance: float = 1e-10
    align_kinks: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if int(self.time_steps) < 1:
            raise ValueError("time_steps must be >= 1")
        if int(self.picard_iterations) < 1:
            raise ValueError("picard_iterations must be >= 1")
        if not self.picard_tolerance > 0:
            raise ValueError("picard_tolerance must be > 0")

    def reference(self, factor=REFERENCE_FACTOR):
        """RK4 at ``factor`` times the step count: the truth used by checks."""
        return replace(self, method="rk4_reference", time_steps=self.time_steps * factor)

    def to_dict(self):
        return {
            "method": self.method,
            "time_steps": self.time_steps,
            "picard_iterations": self.picard_iterations,
            "picard_tolerance": self.picard_tolerance,
            "align_kinks": self.align_kinks,
        }


def time_grid(T, n_steps, nodes=()):
    """Grid on ``[0, T]`` hitting every node, uniform between nodes.

    Returns ``(times, dts)`` with ``len(times) == len(dts) + 1``.  Each
    interval between consecutive nodes gets ``ceil(length / (T/n_steps))``
    equal steps.  Without nodes the times are ``k * (T / n_steps)`` exactly.
    """
    T = float(T)
    if not T > 0:
        raise HorizonError("horizon must be positive")
    nodes = np.asarray(nodes, dtype=float).ravel()
    nodes = nodes[(nodes > 0.0) & (nodes < T)]
    edges = np.unique(np.concatenate([[0.0], nodes, [T]]))
    seg = np.diff(edges)
    h = T / int(n_steps)
    n_sub = np.maximum(1, np.ceil(seg / h * (1.0 - 1e-12))).astype(np.int64)
    dt = seg / n_sub
    dts = np.repeat(dt, n_sub)
    first = np.concatenate([[0], np.cumsum(n_sub)[:-1]])
    offs = np.arange(dts.size) - np.repeat(first, n_sub)
    times = np.repeat(edges[:-1], n_sub) + offs * dts
    return np.append(times, T), dts


def _alignment_nodes(f: VectorField, cfg: SolverConfig, record_times):
    parts = [np.asarray(f.breakpoints, dtype=float)]
    if cfg.align_kinks and len(f.kinks):
        parts.append(np.asarray(f.kinks, dtype=float))
    if record_times is not None:
        parts.append(np.asarray(record_times, dtype=float))
    return np.concatenate(parts) if parts else np.zeros(0)


def _stage_times(f, grid, dts):
    t0 = grid[:-1]
    t1 = grid[1:]
    tm = t0 + 0.5 * dts
    if f.piecewise_constant:
        return tm, tm, tm
    return t0, tm, t1


def _kernel_tables(f, grid, dts, method):
    c = f.controls
    t0, tm, t1 = _stage_times(f, grid, dts)
    S = dts.size
    if c.is_piecewise:
        pi = c.piece_index(tm)
        idx = pi if method == "euler" else np.repeat(pi[:, None], 3, axis=1)
        return c.alpha, c.beta, c.gamma, idx
    if method == "euler":
        a, b, g = c.values_at(t0)
        return a, b, g, np.arange(S)
    a, b, g = c.values_at(np.concatenate([t0, tm, t1]))
    idx = np.arange(3 * S).reshape(3, S).T
    return a, b, g, idx


def _raise_divergence(grid, fail, index=None):
    raise DivergenceError(grid[min(fail + 1, len(grid) - 1)], index=index)


def _integrate_kernel(f, X0, grid, dts, save, method):
    At, Bt, Gt, idx = _kernel_tables(f, grid, dts, method)
    sig = f.controls.sigma
    run = kernels.euler_neuron if method == "euler" else kernels.rk4_neuron
    out, fail = run(X0, dts, At, Bt, Gt, idx, sig.code, float(sig.k), save)
    if fail >= 0:
        _raise_divergence(grid, fail)
    return out


def _diverged(X):
    return not np.all(np.abs(X) <= kernels.DIVERGENCE_THRESHOLD)


def _integrate_generic(f, X0, grid, dts, save, method):
    t0, tm, t1 = _stage_times(f, grid, dts)
    X = np.array(X0, dtype=float)
    out = [X.copy()]
    F = f.func
    for s in range(dts.size):
        h = dts[s]
        if method == "euler":
            X = X + h * F(X, t0[s])
        else:
            k1 = F(X, t0[s])
            k2 = F(X + 0.5 * h * k1, tm[s])
            k3 = F(X + 0.5 * h * k2, tm[s])
            k4 = F(X + h * k3, t1[s])
            X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if _diverged(X):
            _raise_divergence(grid, s)
        if save[s]:
            out.append(X.copy())
    return np.array(out)


def solve_batch(f: VectorField, X0, T, cfg: SolverConfig = SolverConfig(), record_times=None):
    """Integrate a batch of initial points; returns ``(times, states)``.

    ``states`` has shape ``(len(times), B, N)``.  ``record_times`` restricts
    the output to those times (they become grid nodes, so they are hit
    exactly); by default every grid time is returned.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if X0.shape[1] != f.dimension:
        raise DimensionError(f"initial points have dimension {X0.shape[1]}, field has {f.dimension}")
    T = float(T)
    grid, dts = time_grid(T, cfg.time_steps, _alignment_nodes(f, cfg, record_times))
    if record_times is None:
        save = np.ones(dts.size, dtype=bool)
    else:
        rt = np.asarray(record_times, dtype=float)
        if np.any(rt < 0) or np.any(rt > T):
            raise HorizonError("record_times outside [0, T]")
        save = np.isin(grid[1:], rt)
    if cfg.method == "picard":
        iterates, _ = _picard_on_grid(f, X0, grid, dts, cfg.picard_iterations, cfg.picard_tolerance)
        states = iterates[-1]
        keep = np.concatenate([[True], save])
        return grid[keep], states[keep]
    if f.controls is not None:
        states = _integrate_kernel(f, X0, grid, dts, save, cfg.method)
    else:
        states = _integrate_generic(f, X0, grid, dts, save, cfg.method)
    times = np.concatenate([[0.0], grid[1:][save]])
    return times, states


def solve_flow(f: VectorField, xi, T, cfg: SolverConfig = SolverConfig(), record_times=None) -> Trajectory:
    """Trajectory of ``x' = f(x, t)``, ``x(0) = xi`` on ``[0, T]``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    times, states = solve_batch(f, xi[None], T, cfg, record_times)
    return Trajectory(times, states[:, 0, :], xi)


# --------------------------------------------------------------------------
# Picard successive approximation


def _one_sided_times(f, grid):
    """Times at which the integrand is sampled left/right of each interior node."""
    tk = grid[1:-1]
    if f.piecewise_constant:
        return 0.5 * (grid[:-2] + tk), 0.5 * (tk + grid[2:])
    return tk, tk


def _eval_over_times(f, X, times):
    # X (K, B, N) states at the matching times
    if f.static:
        K, B, N = X.shape
        return f.func(X.reshape(K * B, N), 0.0).reshape(K, B, N)
    return np.stack([f.func(X[i], t) for i, t in enumerate(times)])


def _picard_step(f, prev, grid, dts, xi):
    """One Picard map on the grid via composite midpoint quadrature.

    Node ``t_{k+1}`` is reached from ``t_{k-1}`` by the midpoint rule on
    ``[t_{k-1}, t_{k+1}]`` with the previous iterate at ``t_k``, which gives
    two interleaved chains.  The odd chain starts with a one-step midpoint
    rule on ``[0, t_1]`` using the interpolated state.
    """
    K = grid.size - 1
    new = np.empty_like(prev)
    new[0] = xi
    tm0 = 0.5 * (grid[0] + grid[1])
    new[1] = xi + dts[0] * f.func(0.5 * (xi + prev[1]), tm0)
    if K == 1:
        return new
    left_t, right_t = _one_sided_times(f, grid)
    mid_states = prev[1:-1]
    Fl = _eval_over_times(f, mid_states, left_t)
    if f.piecewise_constant:
        Fr = _eval_over_times(f, mid_states, right_t)
    else:
        Fr = Fl
    inc = dts[:-1, None, None] * Fl + dts[1:, None, None] * Fr  # inc[k-1] moves t_{k-1} -> t_{k+1}
    even = inc[0::2]
    odd = inc[1::2]
    new[2::2] = xi + np.cumsum(even, axis=0)[: new[2::2].shape[0]]
    new[3::2] = new[1] + np.cumsum(odd, axis=0)[: new[3::2].shape[0]]
    return new


def _picard_on_grid(f, X0, grid, dts, n_max, tol=None):
    K = grid.size - 1
    x = np.broadcast_to(X0, (K + 1,) + X0.shape).copy()
    iterates = [x]
    gaps = []
    for _ in range(int(n_max)):
        nxt = _picard_step(f, iterates[-1], grid, dts, X0)
        if _diverged(nxt):
            bad = np.nonzero(~np.all(np.abs(nxt) <= kernels.DIVERGENCE_THRESHOLD, axis=(1, 2)))[0]
            raise DivergenceError(grid[bad[0]])
        gap = float(np.linalg.norm(nxt - iterates[-1], axis=-1).max())
        iterates.append(nxt)
        gaps.append(gap)
        if tol is not None and gap < tol:
            break
    return iterates, gaps


@dataclass
class PicardResult:
    iterates: list          # Trajectory per iterate, x_0 .. x_n
    gaps: np.ndarray        # (n, K+1): |x_n(t_k) - x_{n-1}(t_k)|
    distances: np.ndarray   # sup_t |x_n(t) - reference(t)| per iterate
    reference: Trajectory

    @property
    def grid(self):
        return self.iterates[0].times


def picard_iterates(f: VectorField, xi, T, n_max, grid=None, cfg: SolverConfig = SolverConfig()):
    """Picard iterates ``x_0 = xi``, ``x_n = xi + int_0^t f(x_{n-1}(s), s) ds``.

    ``grid`` defaults to the breakpoint-aligned grid of ``cfg.time_steps``.
    Distances are measured against an RK4 reference run at
    ``REFERENCE_FACTOR`` times the step count, recorded on the same grid.
    """
    if int(n_max) < 1:
        raise ValueError("n_max must be >= 1")
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if grid is None:
        grid, dts = time_grid(T, cfg.time_steps, f.breakpoints)
    else:
        grid = np.asarray(grid, dtype=float)
        if grid[0] != 0.0 or not math.isclose(grid[-1], T) or np.any(np.diff(grid) <= 0):
            raise HorizonError("grid must increase from 0 to T")
        dts = np.diff(grid)
    its, _ = _picard_on_grid(f, xi[None], grid, dts, n_max)
    states = [x[:, 0, :] for x in its]
    gaps = np.array([np.linalg.norm(states[i] - states[i - 1], axis=1) for i in range(1, len(states))])
    ref_cfg = SolverConfig("rk4_reference", max(cfg.time_steps, grid.size - 1) * REFERENCE_FACTOR)
    ref = solve_flow(f, xi, T, ref_cfg, record_times=grid)
    dist = np.array([float(np.linalg.norm(s - ref.states, axis=1).max()) for s in states])
    trajs = [Trajectory(grid, s, xi) for s in states]
    return PicardResult(trajs, gaps, dist, ref)


def picard_gap_bound(F0, lip, times, n):
    """Factorial bound ``F0 Lip^{n-1} t^n / n!`` on the ``n``-th Picard gap."""
    t = np.asarray(times, dtype=float)
    return F0 * lip ** (n - 1) * t ** n / math.factorial(n)


# --------------------------------------------------------------------------
# domain sweeps


@dataclass
class DomainFlow:
    """Trajectories from every grid point of a domain, in lexicographic order."""

    points: np.ndarray      # (B, N)
    indices: list           # grid index tuples, same order as points
    times: np.ndarray       # (K,)
    states: np.ndarray      # (K, B, N)

    def __len__(self):
        return len(self.indices)

    def __getitem__(self, key):
        i = self.indices.index(tuple(key)) if not isinstance(key, int) else key
        return Trajectory(self.times, self.states[:, i, :], self.points[i])

    def items(self):
        for i, ix in enumerate(self.indices):
            yield ix, self[i]

    @property
    def final(self):
        return self.states[-1]


def _chunks(n, workers):
    size = max(1, math.ceil(n / max(1, workers)))
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def solve_points(f, X0, T, cfg, record_times=None, workers=1):
    """:func:`solve_batch` over chunks of points, optionally in a thread pool.

    Output order never depends on scheduling.  Divergent points are located
    individually and reported together.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    parts = _chunks(len(X0), workers)

    def run(sl):
        return solve_batch(f, X0[sl], T, cfg, record_times)

    try:
        if workers > 1 and len(parts) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(run, parts))
        else:
            results = [run(sl) for sl in parts]
    except DivergenceError:
        failures = []
        for i in range(len(X0)):
            try:
                solve_batch(f, X0[i:i + 1], T, cfg, record_times)
            except DivergenceError as exc:
                failures.append((i, exc))
        raise DomainDivergenceError(failures) from None
    times = results[0][0]
    return times, np.concatenate([r[1] for r in results], axis=1)


def flow_on_domain(f: VectorField, D, T, cfg: SolverConfig = SolverConfig(), record_times=None,
                   workers=1) -> DomainFlow:
    """One trajectory per grid point of ``D``."""
    X0 = D.grid()
    indices = D.grid_indices()
    try:
        times, states = solve_points(f, X0, T, cfg, record_times, workers)
    except DomainDivergenceError as exc:
        exc.failures = [(indices[i], e) for i, e in exc.failures]
        raise
    return DomainFlow(X0, indices, times, states)
