"""Smoothing of piecewise-constant controls by convolution with a scaled bump.

Controls are zero-extended outside ``[0, T]``, so a piecewise-constant
control is a sum of jumps ``J_j H(t - t_j)`` (including the jumps at 0 and
T) and its mollification is ``sum_j J_j Phi((t - t_j) / delta)`` with
``Phi`` the cumulative bump.  Only jumps within ``delta`` of ``t`` need the
quadrature; the rest contribute ``J_j`` or 0 exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .bounds import BoundReport, DEFAULT_SOLVER, m1_certificate, m2_certificate, stage3_constants
from .core import SAMPLED, Domain, NeuronControls
from .errors import HorizonError, SearchFailure
from .solver import SolverConfig, solve_batch

QUADRATURE_POINTS = 32
SAMPLES_PER_DELTA = 8     # grid step delta/8 near jumps
DELTA_FLOOR = 1e-9        # relative to T
GAP_GAUSS = 4             # Gauss points per segment for L1 gaps


def _bump_raw(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def bump_normalizer():
    val, _ = quad(lambda s: float(_bump_raw(np.array(s))), -1.0, 1.0, epsabs=1e-14, epsrel=1e-14)
    return val


def bump(s):
    """``exp(-1/(1-s^2)) / Z`` on ``(-1, 1)``, zero elsewhere; unit integral."""
    return _bump_raw(s) / bump_normalizer()


@lru_cache(maxsize=4)
def _gauss(n):
    return np.polynomial.legendre.leggauss(n)


def _half_mass(v, n):
    # int_0^v bump by n-point Gauss-Legendre on [0, v]
    x, w = _gauss(n)
    half = 0.5 * v
    return half * (bump(half[..., None] * (x + 1.0)) @ w)


@lru_cache(maxsize=4)
def _half_total(n):
    return float(_half_mass(np.array(1.0), n))


def bump_cdf(u, n=QUADRATURE_POINTS):
    """``Phi(u) = int_{-1}^{u} bump`` via ``n``-point Gauss-Legendre on ``[0, |u|]``.

    Written as ``1/2 + sign(u) I(|u|)`` with ``I`` rescaled so ``I(1) = 1/2``,
    which makes ``Phi`` odd about 1/2 and exactly 0 and 1 at the ends.
    """
    u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
    v = np.abs(u)
    inner = 0.5 * _half_mass(v, n) / _half_total(n)
    return np.where(u >= 0, 0.5 + inner, 0.5 - inner)


@dataclass(frozen=True)
class Mollifier:
    delta: float
    quadrature_points: int = QUADRATURE_POINTS

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    def kernel(self, t):
        return bump(np.asarray(t) / self.delta) / self.delta

    def cdf(self, u):
        return bump_cdf(u, self.quadrature_points)


# --------------------------------------------------------------------------
# convolution of step functions


def _jumps(times, values):
    """Jump locations and sizes of the zero-extended step function."""
    P = values.shape[0]
    zero = np.zeros((1,) + values.shape[1:])
    v = np.concatenate([zero, values, zero])
    return np.asarray(times, dtype=float), np.diff(v, axis=0)   # P + 1 jumps


def convolve_steps(times, values, s, delta, n=QUADRATURE_POINTS):
    """Exact-in-structure mollification of a step function at sample times ``s``.

    ``values[l]`` holds on ``(times[l], times[l+1]]`` and the function is zero
    outside ``[times[0], times[-1]]``.
    """
    tj, J = _jumps(times, values)
    flatJ = J.reshape(J.shape[0], -1)
    # sum of the first k jumps is the padded piece value k, taken exactly
    zero = np.zeros((1, flatJ.shape[1]))
    padded = np.concatenate([zero, values.reshape(values.shape[0], -1), zero])
    s = np.asarray(s, dtype=float)
    lo = np.searchsorted(tj, s - delta, side="right")   # jumps with t_j <= s - delta are fully on
    hi = np.searchsorted(tj, s + delta, side="left")    # jumps with t_j >= s + delta are off
    out = padded[lo].copy()
    count = hi - lo
    if count.sum():
        rows = np.repeat(np.arange(s.size), count)
        first = np.repeat(lo - np.concatenate([[0], np.cumsum(count)[:-1]]), count)
        js = np.arange(rows.size) + first
        phi = bump_cdf((s[rows] - tj[js]) / delta, n)
        np.add.at(out, rows, phi[:, None] * flatJ[js])
    return out.reshape((s.size,) + values.shape[1:])


def sample_grid(times, delta, T):
    """Sample times: step <= delta/8 within delta of every jump, plus the jump-free gaps' ends.

    Between covered windows the mollified control is exactly constant, so
    linear interpolation there is exact.
    """
    tj = np.asarray(times, dtype=float)
    h = delta / SAMPLES_PER_DELTA
    lo = np.maximum(tj - delta, 0.0)
    hi = np.minimum(tj + delta, T)
    # merge overlapping windows
    order = np.argsort(lo)
    lo, hi = lo[order], hi[order]
    merged = []
    a, b = lo[0], hi[0]
    for x, y in zip(lo[1:], hi[1:]):
        if x <= b:
            b = max(b, y)
        else:
            merged.append((a, b))
            a, b = x, y
    merged.append((a, b))
    pts = [np.array([0.0, T])]
    for a, b in merged:
        k = max(1, int(np.ceil((b - a) / h - 1e-9)))
        pts.append(a + (b - a) * np.arange(k + 1) / k)
    return np.unique(np.concatenate(pts))


def mollify_controls(c: NeuronControls, delta, quadrature_points=QUADRATURE_POINTS) -> NeuronControls:
    """Sampled-continuous controls ``eta_delta * c`` (each control zero-extended)."""
    if not c.is_piecewise:
        raise ValueError("mollify_controls expects piecewise-constant controls")
    T = c.horizon
    if not delta > 0:
        raise ValueError("delta must be positive")
    if delta > T:
        raise HorizonError(f"delta={delta} exceeds the horizon T={T}")
    s = sample_grid(c.times, delta, T)
    a = convolve_steps(c.times, c.alpha, s, delta, quadrature_points)
    b = convolve_steps(c.times, c.beta, s, delta, quadrature_points)
    g = convolve_steps(c.times, c.gamma, s, delta, quadrature_points)
    return NeuronControls(a, b, g, c.sigma, T, SAMPLED, s)


# --------------------------------------------------------------------------
# L1 gaps


def l1_gaps(c: NeuronControls, cd: NeuronControls):
    """``||alpha_d - alpha||_{L1}``, same for beta (spectral norm) and gamma.

    Integrates the sampled (linearly interpolated) representation against the
    step function on every segment between nodes of either, with Gauss points.
    """
    T = c.horizon
    nodes = np.union1d(c.times, cd.times)
    x, w = _gauss(GAP_GAUSS)
    a, b = nodes[:-1], nodes[1:]
    t = (0.5 * (a + b))[:, None] + (0.5 * (b - a))[:, None] * x
    wt = (0.5 * (b - a))[:, None] * w
    # keep only segments where the smoothed control may differ
    differs = _nonconstant_segments(c, cd, a, b)
    t = t[differs].ravel()
    wt = wt[differs].ravel()
    if t.size == 0:
        return 0.0, 0.0, 0.0
    pa, pb, pg = c.values_at(np.clip(t, 0, T))
    da, db, dg = cd.values_at(np.clip(t, 0, T))
    ga = float(np.linalg.norm(da - pa, axis=-1) @ wt)
    gb = float(np.linalg.norm(db - pb, ord=2, axis=(-2, -1)) @ wt)
    gg = float(np.linalg.norm(dg - pg, axis=-1) @ wt)
    return ga, gb, gg


def _nonconstant_segments(c, cd, a, b):
    # a segment contributes nothing when both endpoint samples equal the piece value
    mid = 0.5 * (a + b)
    pa, pb, pg = c.values_at(mid)
    out = np.zeros(a.size, dtype=bool)
    for t in (a, b):
        da, db, dg = cd.values_at(t)
        out |= np.any(da != pa, axis=-1) | np.any(db != pb, axis=(-2, -1)) | np.any(dg != pg, axis=-1)
    return out


def choose_delta(c: NeuronControls, eps_prime, quadrature_points=QUADRATURE_POINTS, start=None):
    """Largest ``delta = T/4, T/8, ...`` whose three L1 gaps are all ``< eps_prime``.

    Returns ``(delta, smoothed_controls, gaps)``.
    """
    if not eps_prime > 0:
        raise ValueError("eps_prime must be positive")
    T = c.horizon
    delta = T / 4 if start is None else float(start)
    best = None
    while delta >= DELTA_FLOOR * T:
        cd = mollify_controls(c, delta, quadrature_points)
        gaps = l1_gaps(c, cd)
        best = gaps
        if max(gaps) < eps_prime:
            return delta, cd, gaps
        delta *= 0.5
    raise SearchFailure(f"delta fell below {DELTA_FLOOR:g}*T without L1 gaps < {eps_prime:.3e}", best)


# --------------------------------------------------------------------------
# flow error


def stage3_report_inputs(c: NeuronControls, D: Domain, gaps):
    M1, inputs = m1_certificate(c, D)
    M2, R2 = m2_certificate(c, M1)
    M3, M4 = stage3_constants(M1, M2, c.alpha_sup, c.beta_sup, c.sigma.lipschitz)
    eps_prime = max(gaps)
    return dict(inputs, M1=M1, M2=M2, R2=R2, M3=M3, M4=M4, eps_prime=eps_prime,
                l1_alpha=gaps[0], l1_beta=gaps[1], l1_gamma=gaps[2])


def mollified_flow_error(c: NeuronControls, cd: NeuronControls, D: Domain, T=None,
                         cfg: SolverConfig = DEFAULT_SOLVER, n_record=64, gaps=None):
    """``sup_t ||S_{h_delta}(t) - S_{h_L}(t)||_{C^0(D)}`` against ``M3 eps' e^{M4 T}``.

    ``eps'`` is the largest measured L1 gap between the two control sets.
    """
    T = c.horizon if T is None else float(T)
    if cd.horizon != c.horizon or cd.sigma != c.sigma:
        raise ValueError("control sets must share horizon and activation")
    if gaps is None:
        gaps = l1_gaps(c, cd) if not cd.is_piecewise else _piecewise_gaps(c, cd)
    inputs = stage3_report_inputs(c, D, gaps)
    with np.errstate(over="ignore"):
        cert = inputs["M3"] * inputs["eps_prime"] * np.exp(inputs["M4"] * T)
    rec = np.linspace(0.0, T, n_record + 1)
    X0 = D.grid()
    _, s1 = solve_batch(cd.field(), X0, T, cfg, rec)
    _, s0 = solve_batch(c.field(), X0, T, cfg, rec)
    meas = float(np.linalg.norm(s1 - s0, axis=2).max())
    return BoundReport("mollified_flow", float(cert), meas, inputs)


def _piecewise_gaps(c, cd):
    # both piecewise constant: integrate on the merged breakpoints, one midpoint per segment
    nodes = np.union1d(c.times, cd.times)
    mid = 0.5 * (nodes[:-1] + nodes[1:])
    w = np.diff(nodes)
    pa, pb, pg = c.values_at(mid)
    da, db, dg = cd.values_at(mid)
    return (float(np.linalg.norm(da - pa, axis=-1) @ w),
            float(np.linalg.norm(db - pb, ord=2, axis=(-2, -1)) @ w),
            float(np.linalg.norm(dg - pg, axis=-1) @ w))
