"""Shallow sums ``sum_i alpha_i ⊙ sigma(beta_i x + gamma_i)`` fitted by random features.

Each output component is fitted on its own (random hidden weights, ridge
least squares for the outer weights) and the fits are stacked row by row,
zero-padded to a common width, so component ``j`` of the stacked field only
ever sees fit ``j``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Activation, Domain, VectorField
from .errors import ApproximationFailure, ConditioningError, DimensionError

RCOND = 1e-12
MAX_ESCALATIONS = 6


@dataclass(frozen=True)
class FitConfig:
    width_per_component: int = 16
    feature_scale: float = 2.0
    ridge: float = 1e-8
    seed: int = 0
    target_sup_error: float = 1e-2

    def __post_init__(self):
        if int(self.width_per_component) < 1:
            raise ValueError("width_per_component must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be >= 0")
        if not self.feature_scale > 0:
            raise ValueError("feature_scale must be > 0")
        if not self.target_sup_error > 0:
            raise ValueError("target_sup_error must be > 0")

    def to_dict(self):
        return {
            "width_per_component": self.width_per_component,
            "feature_scale": self.feature_scale,
            "ridge": self.ridge,
            "seed": self.seed,
            "target_sup_error": self.target_sup_error,
        }


def _preactivation(X, betas, gammas):
    # gammas + sum_m X[:, m] * betas[..., m], accumulated in a fixed order
    Z = np.broadcast_to(gammas, (X.shape[0],) + gammas.shape).copy()
    extra = (None,) * (betas.ndim - 1)
    for m in range(X.shape[1]):
        Z += X[(slice(None), m) + extra] * betas[..., m]
    return Z


def _accumulate(terms):
    # sequential sum over axis 1 so trailing zero terms never change rounding
    acc = np.zeros((terms.shape[0],) + terms.shape[2:])
    for i in range(terms.shape[1]):
        acc = acc + terms[:, i]
    return acc


@dataclass(frozen=True, eq=False)
class ScalarFit:
    """One output component: ``sum_i alphas[i] * sigma(betas[i] . x + gammas[i])``."""

    alphas: np.ndarray   # (K,)
    betas: np.ndarray    # (K, N)
    gammas: np.ndarray   # (K,)
    sigma: Activation
    train_sup_error: float = float("nan")

    @property
    def width(self):
        return self.alphas.size

    @property
    def terms(self):
        return [(float(a), b.copy(), float(g)) for a, b, g in zip(self.alphas, self.betas, self.gammas)]

    def evaluate(self, X):
        X = np.atleast_2d(X)
        Z = _preactivation(X, self.betas, self.gammas)
        return _accumulate(self.sigma(Z) * self.alphas)


@dataclass(frozen=True, eq=False)
class ShallowField:
    """Vector field ``sum_{i<K} alpha_i ⊙ sigma(beta_i x + gamma_i)``."""

    alpha: np.ndarray    # (K, N)
    beta: np.ndarray     # (K, N, N)
    gamma: np.ndarray    # (K, N)
    sigma: Activation

    def __post_init__(self):
        a, b, g = (np.asarray(v, dtype=float) for v in (self.alpha, self.beta, self.gamma))
        if a.ndim != 2 or a.shape[0] < 1 or g.shape != a.shape or b.shape != a.shape + (a.shape[1],):
            raise DimensionError("ShallowField needs alpha (K,N), beta (K,N,N), gamma (K,N) with K >= 1")
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "gamma", g)

    @property
    def width(self):
        return self.alpha.shape[0]

    @property
    def dimension(self):
        return self.alpha.shape[1]

    @classmethod
    def zeros(cls, n, sigma):
        return cls(np.zeros((1, n)), np.zeros((1, n, n)), np.zeros((1, n)), sigma)

    def term(self, i, X):
        """Single term ``alpha_i ⊙ sigma(beta_i x + gamma_i)``."""
        X = np.atleast_2d(X)
        return self.alpha[i] * self.sigma(_preactivation(X, self.beta[i], self.gamma[i]))

    def evaluate(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dimension:
            raise DimensionError(f"expected dimension {self.dimension}, got {X.shape[1]}")
        Z = _preactivation(X, self.beta, self.gamma)        # (B, K, N)
        return _accumulate(self.sigma(Z) * self.alpha)

    __call__ = evaluate

    def field(self, name="shallow"):
        lip = float(sum(np.abs(a).max() * np.linalg.norm(b, 2) for a, b in zip(self.alpha, self.beta)))
        return VectorField(self.dimension, lambda X, t: self.evaluate(X), lip * self.sigma.lipschitz,
                           static=True, name=name)

    def is_zero(self):
        return not np.any(self.alpha)


# --------------------------------------------------------------------------
# fitting


def _draw_features(rng, width, n, scale, radius):
    betas = rng.uniform(-scale, scale, size=(width, n))
    gammas = rng.uniform(-scale * radius, scale * radius, size=width)
    return betas, gammas


def _ridge_solve(Phi, y, ridge):
    U, s, Vt = np.linalg.svd(Phi, full_matrices=False)
    if ridge == 0:
        if s.size == 0 or s[-1] <= RCOND * s[0] or Phi.shape[0] < Phi.shape[1]:
            raise ConditioningError(
                "normal equations are singular for ridge=0 "
                f"(condition {s[0] / max(s[-1], 1e-300):.2e}); use ridge > 0")
        return Vt.T @ ((U.T @ y) / s)
    return Vt.T @ ((s / (s * s + ridge)) * (U.T @ y))


def fit_scalar(fj, D: Domain, cfg: FitConfig, sigma: Activation = Activation("tanh"), component=0,
               extra_features=None, width=None) -> ScalarFit:
    """Random-feature ridge fit of a scalar function on the grid of ``D``.

    Hidden weights: rows of ``beta`` uniform on ``[-s, s]^N`` and ``gamma``
    uniform on ``[-s r, s r]`` (``s = feature_scale``, ``r`` = coordinate
    radius of ``D``), drawn from a generator seeded by
    ``(seed, component, width)``.  ``extra_features`` is an optional pair
    ``(betas (E, N), gammas (E,))`` placed before the random ones.
    """
    X = D.grid()
    y = np.asarray(fj(X), dtype=float).reshape(-1)
    if not np.all(np.isfinite(y)):
        raise ValueError("target is not finite on the grid")
    width = cfg.width_per_component if width is None else int(width)
    rng = np.random.default_rng([int(cfg.seed), int(component), width])
    betas, gammas = _draw_features(rng, width, D.dimension, cfg.feature_scale, D.coordinate_radius)
    if extra_features is not None:
        eb, eg = extra_features
        betas = np.vstack([np.atleast_2d(np.asarray(eb, dtype=float)), betas])
        gammas = np.concatenate([np.atleast_1d(np.asarray(eg, dtype=float)), gammas])
    Phi = sigma(_preactivation(X, betas, gammas))
    alphas = _ridge_solve(Phi, y, cfg.ridge)
    fit = ScalarFit(alphas, betas, gammas, sigma)
    err = float(np.max(np.abs(fit.evaluate(X) - y), initial=0.0))
    return ScalarFit(alphas, betas, gammas, sigma, err)


def stack_components(fits) -> ShallowField:
    """Pack ``N`` scalar fits into one field of width ``max K_j`` (zero padded)."""
    fits = list(fits)
    n = len(fits)
    if n < 1:
        raise DimensionError("need at least one component fit")
    sigma = fits[0].sigma
    for j, fit in enumerate(fits):
        if fit.betas.ndim != 2 or fit.betas.shape[1] != n:
            raise DimensionError(f"fit {j} has input dimension {fit.betas.shape[-1]}, expected {n}")
        if fit.sigma != sigma:
            raise ValueError("all fits must share the activation")
    K = max(f.width for f in fits)
    alpha = np.zeros((K, n))
    beta = np.zeros((K, n, n))
    gamma = np.zeros((K, n))
    for j, fit in enumerate(fits):
        k = fit.width
        alpha[:k, j] = fit.alphas
        beta[:k, j, :] = fit.betas
        gamma[:k, j] = fit.gammas
    return ShallowField(alpha, beta, gamma, sigma)


def sup_error(g: ShallowField, f: VectorField, X):
    return float(np.max(np.linalg.norm(g.evaluate(X) - f.evaluate(X, 0.0), axis=1), initial=0.0))


def fit_vector_field(f: VectorField, D: Domain, cfg: FitConfig, sigma: Activation = Activation("tanh"),
                     target=None, max_escalations=MAX_ESCALATIONS):
    """Fit a static field on ``D``, doubling the width until the target is met.

    Returns ``(ShallowField, achieved_sup_error)`` where the error is measured
    on a validation grid twice as fine as the training grid.
    """
    target = cfg.target_sup_error if target is None else float(target)
    Xv = D.refine(2).grid()
    fv = f.evaluate(Xv, 0.0)
    if not np.any(fv) and not np.any(f.evaluate(D.grid(), 0.0)):
        return ShallowField.zeros(f.dimension, sigma), 0.0
    best = (None, np.inf)
    for e in range(max_escalations + 1):
        width = cfg.width_per_component * 2 ** e
        fits = [fit_scalar(lambda X, j=j: f.evaluate(X, 0.0)[:, j], D, cfg, sigma, component=j, width=width)
                for j in range(f.dimension)]
        g = stack_components(fits)
        err = float(np.max(np.linalg.norm(g.evaluate(Xv) - fv, axis=1)))
        if err < best[1]:
            best = (g, err)
        if err <= target:
            return g, err
    raise ApproximationFailure(f"target {target:.3e} not met up to width {width}", best[1])
