"""Shared domain objects: boxes, activations, vector fields, neuron controls."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial.distance import pdist

from . import kernels
from .errors import DimensionError, HorizonError

_ACT_CODES = {
    "tanh": kernels.ACT_TANH,
    "sigmoid": kernels.ACT_SIGMOID,
    "relu": kernels.ACT_RELU,
    "softplus": kernels.ACT_SOFTPLUS,
    "truncated_power": kernels.ACT_TRUNCATED_POWER,
}


# --------------------------------------------------------------------------
# domain


@dataclass(frozen=True, eq=False)
class Domain:
    """Axis-aligned box ``[lower, upper]`` with a uniform sample grid."""

    lower: np.ndarray
    upper: np.ndarray
    samples_per_axis: int = 11

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise DimensionError("lower/upper must be equal-length vectors")
        if not np.all(lo < hi):
            raise ValueError("need lower[i] < upper[i] on every axis")
        if int(self.samples_per_axis) < 1:
            raise ValueError("samples_per_axis must be positive")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "samples_per_axis", int(self.samples_per_axis))

    @classmethod
    def cube(cls, n, lo=-1.0, hi=1.0, samples_per_axis=11):
        return cls(np.full(n, lo), np.full(n, hi), samples_per_axis)

    @property
    def dimension(self):
        return self.lower.size

    def axes(self):
        if self.samples_per_axis == 1:
            return [np.array([0.5 * (a + b)]) for a, b in zip(self.lower, self.upper)]
        return [np.linspace(a, b, self.samples_per_axis) for a, b in zip(self.lower, self.upper)]

    def grid(self):
        """Grid points in lexicographic order of their axis indices, shape (n**N, N)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def grid_indices(self):
        shape = (self.samples_per_axis,) * self.dimension
        return [tuple(int(i) for i in ix) for ix in np.ndindex(*shape)]

    @property
    def coordinate_radius(self):
        return float(np.max(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    @property
    def max_norm(self):
        """``max |xi|`` over the box (attained at a corner)."""
        return float(np.linalg.norm(np.maximum(np.abs(self.lower), np.abs(self.upper))))

    def expand(self, radius, samples_per_axis=None):
        """Box grown by ``radius`` on every side (superset of the Euclidean tube)."""
        n = self.samples_per_axis if samples_per_axis is None else samples_per_axis
        return Domain(self.lower - radius, self.upper + radius, n)

    def refine(self, factor):
        return Domain(self.lower, self.upper, (self.samples_per_axis - 1) * factor + 1)

    def contains(self, X, atol=0.0):
        X = np.atleast_2d(X)
        return np.all((X >= self.lower - atol) & (X <= self.upper + atol), axis=1)

    def distance_to(self, X):
        """Euclidean distance from each row of ``X`` to the box."""
        X = np.atleast_2d(X)
        gap = np.maximum(self.lower - X, 0.0) + np.maximum(X - self.upper, 0.0)
        return np.linalg.norm(gap, axis=1)

    def to_dict(self):
        return {
            "lower": self.lower.tolist(),
            "upper": self.upper.tolist(),
            "samples_per_axis": self.samples_per_axis,
        }


# --------------------------------------------------------------------------
# activation


@dataclass(frozen=True)
class Activation:
    """Scalar activation applied componentwise.

    ``truncated_power`` with ``k >= 2`` is only locally Lipschitz; its
    declared constant ``k * radius**(k-1)`` holds on ``[-radius, radius]``.
    """

    kind: str = "tanh"
    k: int = 1
    radius: float | None = None

    def __post_init__(self):
        if self.kind not in _ACT_CODES:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "truncated_power":
            if int(self.k) < 1:
                raise ValueError("truncated_power needs k >= 1")
            if self.k > 1 and (self.radius is None or self.radius <= 0):
                raise ValueError("truncated_power with k > 1 needs a positive radius")

    @property
    def code(self):
        return _ACT_CODES[self.kind]

    @property
    def lipschitz(self):
        if self.kind == "sigmoid":
            return 0.25
        if self.kind == "truncated_power" and self.k > 1:
            return float(self.k * self.radius ** (self.k - 1))
        return 1.0

    def __call__(self, z):
        return kernels.activation_np(z, self.code, float(self.k))

    def sup_abs(self, r):
        """``max |sigma(a)|`` over ``|a| <= r`` (all built-ins are monotone)."""
        r = float(r)
        return float(np.max(np.abs(self(np.array([-r, r])))))

    def vector_sup(self, r, n):
        """Upper bound on ``|sigma(y)|`` over the Euclidean ball ``|y| <= r`` in R^n."""
        return float(np.sqrt(n) * self.sup_abs(r))

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "truncated_power":
            d["k"] = int(self.k)
            if self.radius is not None:
                d["radius"] = float(self.radius)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d.get("k", 1)), d.get("radius"))


def hadamard(a, b):
    """Componentwise product; shapes must agree exactly."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    return a * b


# --------------------------------------------------------------------------
# vector fields


@dataclass(frozen=True, eq=False)
class VectorField:
    """Time-dependent field ``f(x, t)`` with a Lipschitz certificate in ``x``.

    ``func`` takes a batch ``x`` of shape (B, N) and a scalar ``t``.
    ``breakpoints`` are interior times where ``f`` may jump in ``t``; when
    ``piecewise_constant`` is set the field is constant between them with the
    value on ``(t_{l-1}, t_l]``.  ``kinks`` are optional alignment times where
    ``f`` is continuous but not smooth in ``t``.
    """

    dimension: int
    func: Callable
    lipschitz_x: float
    breakpoints: tuple = ()
    piecewise_constant: bool = False
    static: bool = False
    kinks: tuple = ()
    name: str = "field"
    controls: object = None
    params: dict = field(default_factory=dict)

    @property
    def time_regularity(self):
        if self.piecewise_constant:
            return ("piecewise_constant", tuple(self.breakpoints))
        return ("continuous",)

    def evaluate(self, x, t):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        if X.shape[1] != self.dimension:
            raise DimensionError(f"{self.name}: expected dimension {self.dimension}, got {X.shape[1]}")
        out = np.asarray(self.func(X, float(t)), dtype=float)
        if out.shape != X.shape:
            raise DimensionError(f"{self.name}: output shape {out.shape} != input {X.shape}")
        return out[0] if single else out

    __call__ = evaluate


def static_slice(f: VectorField, t: float, name=None) -> VectorField:
    """Freeze ``f`` at time ``t``."""
    t = float(t)
    return VectorField(
        f.dimension,
        lambda X, _s, _f=f.func, _t=t: _f(X, _t),
        f.lipschitz_x,
        static=True,
        name=name or f"{f.name}@{t:g}",
    )


def difference_norm(f: VectorField, g: VectorField, X, times):
    """``max |f(x,t) - g(x,t)|`` over the sample points and times."""
    best = 0.0
    for t in np.atleast_1d(times):
        d = np.linalg.norm(f.evaluate(X, t) - g.evaluate(X, t), axis=1)
        best = max(best, float(d.max(initial=0.0)))
    return best


def sample_times(T, n, breakpoints=(), piecewise_constant=False):
    """Time samples for sup-norm estimates: a uniform grid plus every piece.

    For piecewise-constant fields the sample in each piece is its midpoint,
    so values on ``(t_{l-1}, t_l]`` are never missed.
    """
    ts = np.linspace(0.0, T, max(int(n), 1) + 1)
    if len(breakpoints):
        b = np.concatenate([[0.0], np.asarray(breakpoints, dtype=float), [T]])
        mids = 0.5 * (b[:-1] + b[1:])
        ts = np.union1d(ts, mids) if piecewise_constant else np.union1d(ts, b)
    return ts


def estimate_lipschitz(f: VectorField, D: Domain, t_samples: int = 5, T: float = 1.0,
                       max_points: int = 1500, seed: int = 0):
    """Largest sampled quotient ``|f(z,t)-f(w,t)| / |z-w|`` over grid pairs.

    This is a LOWER bound on ``Lip(f)``; it is used to sanity-check the
    declared certificate ``f.lipschitz_x``, which must be at least as large.
    """
    X = D.grid()
    if len(X) < 2:
        return 0.0
    if len(X) > max_points:
        rng = np.random.default_rng(seed)
        X = X[rng.choice(len(X), max_points, replace=False)]
    dx = pdist(X)
    keep = dx > 0
    if f.static:
        times = [0.0]
    else:
        times = sample_times(T, max(t_samples - 1, 0), f.breakpoints, f.piecewise_constant)
        if len(times) > t_samples and not len(f.breakpoints):
            times = np.linspace(0.0, T, t_samples)
    best = 0.0
    for t in times:
        df = pdist(f.evaluate(X, t))
        best = max(best, float(np.max(df[keep] / dx[keep], initial=0.0)))
    return best


# --------------------------------------------------------------------------
# neuron controls


PIECEWISE = "piecewise_constant"
SAMPLED = "sampled_continuous"


@dataclass(frozen=True, eq=False)
class NeuronControls:
    """Control trajectories ``t -> (alpha, beta, gamma)`` for ``alpha ⊙ sigma(beta x + gamma)``.

    ``piecewise_constant``: ``times`` holds ``P + 1`` breakpoints
    ``0 = t_0 < ... < t_P = T`` and row ``l`` is the value on
    ``(t_l, t_{l+1}]`` (row 0 also at ``t = 0``).

    ``sampled_continuous``: ``times`` holds ``P`` sample times from 0 to T
    and values are linearly interpolated between them.
    """

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    sigma: Activation
    horizon: float
    representation: str = PIECEWISE
    times: np.ndarray = None

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        b = np.asarray(self.beta, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        if a.ndim != 2 or g.shape != a.shape or b.shape != (a.shape[0], a.shape[1], a.shape[1]):
            raise DimensionError(f"control shapes inconsistent: alpha {a.shape}, beta {b.shape}, gamma {g.shape}")
        T = float(self.horizon)
        if not T > 0:
            raise HorizonError("horizon must be positive")
        P = a.shape[0]
        if self.representation == PIECEWISE:
            ts = np.linspace(0.0, T, P + 1) if self.times is None else np.asarray(self.times, dtype=float)
            if ts.shape != (P + 1,):
                raise DimensionError("piecewise controls need P + 1 breakpoints")
        elif self.representation == SAMPLED:
            ts = np.asarray(self.times, dtype=float)
            if ts.shape != (P,) or P < 2:
                raise DimensionError("sampled controls need one time per sample (at least 2)")
        else:
            raise ValueError(f"unknown representation {self.representation!r}")
        if ts[0] != 0.0 or ts[-1] != T or np.any(np.diff(ts) <= 0):
            raise HorizonError("control times must increase strictly from 0 to T")
        for name, v in (("alpha", a), ("beta", b), ("gamma", g), ("times", ts)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "horizon", T)

    # -- shape helpers
    @property
    def dimension(self):
        return self.alpha.shape[1]

    @property
    def n_pieces(self):
        return self.alpha.shape[0]

    @property
    def is_piecewise(self):
        return self.representation == PIECEWISE

    @classmethod
    def constant(cls, alpha, beta, gamma, sigma, horizon):
        a = np.atleast_1d(np.asarray(alpha, dtype=float))
        n = a.size
        b = np.asarray(beta, dtype=float).reshape(n, n)
        g = np.atleast_1d(np.asarray(gamma, dtype=float))
        return cls(a[None], b[None], g[None], sigma, horizon)

    def piece_index(self, t):
        """Index of the piece whose interval ``(t_{l-1}, t_l]`` contains ``t``."""
        i = np.searchsorted(self.times, t, side="left") - 1
        return np.clip(i, 0, self.n_pieces - 1)

    def values_at(self, t):
        """Control values at time(s) ``t``; leading axes follow ``t``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0.0) or np.any(t > self.horizon):
            raise HorizonError(f"t outside [0, {self.horizon}]")
        if self.is_piecewise:
            i = self.piece_index(t)
            return self.alpha[i], self.beta[i], self.gamma[i]
        ts = self.times
        i = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        wa = w[..., None]
        alpha = self.alpha[i] + wa * (self.alpha[i + 1] - self.alpha[i])
        beta = self.beta[i] + wa[..., None] * (self.beta[i + 1] - self.beta[i])
        gamma = self.gamma[i] + wa * (self.gamma[i + 1] - self.gamma[i])
        return alpha, beta, gamma

    # -- norms (sup over t; Euclidean for vectors, spectral for beta)
    @property
    def alpha_sup(self):
        return float(np.linalg.norm(self.alpha, axis=1).max())

    @property
    def beta_sup(self):
        return float(np.linalg.norm(self.beta, ord=2, axis=(1, 2)).max())

    @property
    def gamma_sup(self):
        return float(np.linalg.norm(self.gamma, axis=1).max())

    @property
    def lipschitz_x(self):
        """``sup|alpha|_inf * sup||beta||_2 * Lip(sigma)`` (valid certificate)."""
        return float(np.abs(self.alpha).max() * self.beta_sup * self.sigma.lipschitz)

    def field(self, name="neuron") -> VectorField:
        interior = tuple(self.times[1:-1].tolist())
        if self.is_piecewise:
            kw = dict(breakpoints=interior, piecewise_constant=True)
        else:
            kw = dict(kinks=interior)
        return VectorField(
            self.dimension,
            lambda X, t, _c=self: eval_neuron_field(_c, X, t),
            self.lipschitz_x,
            name=name,
            controls=self,
            **kw,
        )


def eval_neuron_field(c: NeuronControls, x, t):
    """``alpha(t) ⊙ sigma(beta(t) x + gamma(t))`` for one point or a batch."""
    t = float(t)
    if not 0.0 <= t <= c.horizon:
        raise HorizonError(f"t={t} outside [0, {c.horizon}]")
    a, b, g = c.values_at(t)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != c.dimension:
        raise DimensionError(f"expected dimension {c.dimension}, got {x.shape[-1]}")
    return a * c.sigma(x @ b.T + g)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled solution path of ``x' = f(x, t)``."""

    times: np.ndarray
    states: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.times, dtype=float)
        xs = np.asarray(self.states, dtype=float)
        if xs.ndim != 2 or xs.shape[0] != ts.shape[0]:
            raise DimensionError("one state per time required")
        if ts[0] != 0.0 or np.any(np.diff(ts) <= 0):
            raise HorizonError("trajectory times must start at 0 and increase")
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "states", xs)
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))

    @property
    def final(self):
        return self.states[-1]

    @property
    def horizon(self):
        return float(self.times[-1])
