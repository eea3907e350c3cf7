"""Finite-depth residual networks read off continuous neuron controls.

Layer ``l`` is the Euler step ``x + dt * alpha_l ⊙ sigma(beta_l x + gamma_l)``
with the controls sampled at the left endpoint ``t_l = l T / L``.  The
forward pass runs through the same Euler kernel as the solver, so a ResNet
and an Euler solve on identical samples agree bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .bounds import resnet_error_envelope
from .core import Activation, Domain, NeuronControls
from .errors import DimensionError, DivergenceError, PreconditionError
from .solver import SolverConfig, solve_batch, time_grid


@dataclass(frozen=True, eq=False)
class ResNetModel:
    alpha: np.ndarray    # (L, N)
    beta: np.ndarray     # (L, N, N)
    gamma: np.ndarray    # (L, N)
    sigma: Activation
    step: float
    horizon: float

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 2 or np.shape(self.beta) != a.shape + (a.shape[1],) or np.shape(self.gamma) != a.shape:
            raise DimensionError("layers need alpha (L,N), beta (L,N,N), gamma (L,N)")

    @property
    def depth(self):
        return self.alpha.shape[0]

    @property
    def dimension(self):
        return self.alpha.shape[1]

    def layer(self, l):
        return self.alpha[l], self.beta[l], self.gamma[l]

    def forward_batch(self, X0, use_numba=None):
        """States of every layer, shape ``(L + 1, B, N)``."""
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        if X0.shape[1] != self.dimension:
            raise DimensionError(f"input dimension {X0.shape[1]} != {self.dimension}")
        L = self.depth
        dts = np.full(L, self.step)
        out, fail = kernels.euler_neuron(X0, dts, self.alpha, self.beta, self.gamma, np.arange(L),
                                         self.sigma.code, float(self.sigma.k), np.ones(L, dtype=bool),
                                         use_numba)
        if fail >= 0:
            raise DivergenceError((fail + 1) * self.step, f"ResNet state blew up at layer {fail}", index=fail)
        return out

    def __call__(self, X0):
        return self.forward_batch(X0)[-1]


def extract_resnet(c: NeuronControls, L) -> ResNetModel:
    """Sample continuous controls at ``t_l = l T / L``, ``l = 0..L-1``."""
    if int(L) < 1:
        raise ValueError("depth must be >= 1")
    if c.is_piecewise:
        raise PreconditionError("piecewise-constant controls are not continuous; "
                                "mollify them first (mollify.mollify_controls)")
    L = int(L)
    grid, dts = time_grid(c.horizon, L)
    a, b, g = c.values_at(grid[:-1])
    return ResNetModel(a, b, g, c.sigma, float(dts[0]), c.horizon)


def forward(model: ResNetModel, xi):
    """``(x_L, [x_0, ..., x_L])`` for a single input."""
    states = model.forward_batch(np.atleast_1d(np.asarray(xi, dtype=float))[None])[:, 0, :]
    return states[-1], list(states)


# --------------------------------------------------------------------------
# depth study


@dataclass
class DepthResult:
    L: int
    error: float          # sup over the D grid of |resnet(xi) - S_h(T) xi|
    omega: float          # measured modulus of t -> h(x(t), t) at lag T/L
    envelope: float
    C: float

    def to_dict(self):
        return {"L": self.L, "error": self.error, "omega": self.omega, "envelope": self.envelope,
                "C": self.C, "within_envelope": bool(self.error <= self.envelope * (1 + 1e-6))}


def resnet_constant(c: NeuronControls):
    """``C = M_alpha M_beta Lip(sigma)`` (Euclidean / spectral sup norms)."""
    return c.alpha_sup * c.beta_sup * c.sigma.lipschitz


def envelope(C, T, L, omega):
    if C > 0:
        return resnet_error_envelope(C, T, L, omega)
    return T * omega          # C -> 0 limit of the unrolled recursion


def modulus_along_flow(c: NeuronControls, times, states, lag):
    """``max |h(x(s),s) - h(x(t),t)|`` over recorded pairs with ``|s - t| <= lag``."""
    H = np.empty_like(states)
    for k, t in enumerate(times):
        a, b, g = c.values_at(t)
        H[k] = a * c.sigma(states[k] @ b.T + g)
    best = 0.0
    d = 1
    while d < len(times):
        if np.min(times[d:] - times[:-d]) > lag * (1 + 1e-12):
            break
        ok = (times[d:] - times[:-d]) <= lag * (1 + 1e-12)
        diff = np.linalg.norm(H[d:] - H[:-d], axis=2).max(axis=1)
        best = max(best, float(diff[ok].max(initial=0.0)))
        d += 1
    return best


def reference_flow(c: NeuronControls, X0, n_record, cfg: SolverConfig = None):
    T = c.horizon
    rec = np.linspace(0.0, T, n_record + 1)
    if cfg is None:
        cfg = SolverConfig("rk4_reference", n_record)
    times, states = solve_batch(c.field(), X0, T, cfg, rec)
    return times, states


def depth_convergence_study(c: NeuronControls, D: Domain, depths, cfg: SolverConfig = None, fine=8):
    """Per-depth sup error of the extracted ResNet against the flow of ``c``.

    The reference flow is recorded on a grid ``fine`` times finer than the
    deepest network; the modulus is measured on that grid.
    """
    depths = [int(L) for L in depths]
    if any(b <= a for a, b in zip(depths, depths[1:])):
        raise ValueError("depths must be increasing")
    X0 = D.grid()
    T = c.horizon
    n_rec = fine * depths[-1]
    times, states = reference_flow(c, X0, n_rec, cfg)
    target = states[-1]
    C = resnet_constant(c)
    out = []
    for L in depths:
        model = extract_resnet(c, L)
        err = float(np.linalg.norm(model(X0) - target, axis=1).max())
        om = modulus_along_flow(c, times, states, T / L)
        out.append(DepthResult(L, err, om, envelope(C, T, L, om), C))
    return out


def is_nonincreasing(values, rtol=0.1):
    return all(b <= a * (1 + rtol) + 1e-15 for a, b in zip(values, values[1:]))
