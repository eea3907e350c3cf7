"""Built-in vector fields with known Lipschitz constants (and often closed-form flows)."""
import numpy as np

from .core import VectorField
from .errors import ConfigError


def zero(n=1):
    return VectorField(n, lambda X, t: np.zeros_like(X), 0.0, static=True, name="zero",
                       params={"n": n})


def constant(c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return VectorField(c.size, lambda X, t: np.broadcast_to(c, X.shape).copy(), 0.0,
                       static=True, name="constant", params={"c": c.tolist()})


def linear(A, b=None):
    """``x -> A x + b``; Lipschitz constant is the spectral norm of ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    b = np.zeros(n) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    lip = float(np.linalg.norm(A, 2))
    return VectorField(n, lambda X, t: X @ A.T + b, lip, static=True, name="linear",
                       params={"A": A.tolist(), "b": b.tolist()})


def neg_tanh(n=1, scale=1.0):
    """``x -> -scale * tanh(x)``: an autonomous contraction toward 0."""
    return VectorField(n, lambda X, t: -scale * np.tanh(X), abs(scale), static=True,
                       name="neg_tanh", params={"n": n, "scale": scale})


def tanh_linear(A, b=None):
    """``x -> tanh(A x + b)`` (Lipschitz constant ``||A||_2``)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    b = np.zeros(n) if b is None else np.atleast_1d(np.asarray(b, dtype=float))
    return VectorField(n, lambda X, t: np.tanh(X @ A.T + b), float(np.linalg.norm(A, 2)),
                       static=True, name="tanh_linear", params={"A": A.tolist(), "b": b.tolist()})


def _rotation(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def tanh_rotation(omega=1.0, scale=1.0, phase=0.0):
    """2-D ``f(x,t) = scale * tanh(R(omega t + phase) x)``; rotations are isometries."""
    def func(X, t):
        return scale * np.tanh(X @ _rotation(omega * t + phase).T)

    return VectorField(2, func, abs(scale), static=(omega == 0), name="tanh_rotation",
                       params={"omega": omega, "scale": scale, "phase": phase})


def time_linear(n=1, rate=1.0):
    """``f(x,t) = rate * t`` in every component (independent of ``x``)."""
    return VectorField(n, lambda X, t: np.full_like(X, rate * t), 0.0, name="time_linear",
                       params={"n": n, "rate": rate})


def periodic_scalar(a=0.0, b=1.0, omega=2 * np.pi, n=1):
    """``f(x,t) = (a + b sin(omega t)) * tanh(x)``."""
    return VectorField(n, lambda X, t: (a + b * np.sin(omega * t)) * np.tanh(X), abs(a) + abs(b),
                       name="periodic_scalar", params={"a": a, "b": b, "omega": omega, "n": n})


def switched(fields, period, horizon, name="switched"):
    """Periodic piecewise-constant field cycling through static ``fields``.

    Field ``i`` is active on ``(k*period + i*w, k*period + (i+1)*w]`` with
    ``w = period / len(fields)``; its breakpoints cover ``[0, horizon]``.
    """
    fields = list(fields)
    K = len(fields)
    n = fields[0].dimension
    w = period / K
    count = int(round(horizon / w))
    bps = np.arange(1, count) * w
    bps = bps[bps < horizon * (1 - 1e-12)]

    def func(X, t):
        j = int(np.ceil(t / w - 1e-9)) - 1
        j = max(j, 0)
        return fields[j % K].func(X, t)

    lip = max(f.lipschitz_x for f in fields)
    return VectorField(n, func, lip, breakpoints=tuple(bps.tolist()), piecewise_constant=True,
                       name=name, params={"period": period, "K": K})


def average_of(fields, name="average"):
    """Time-average of the switched field built from ``fields``."""
    fields = list(fields)
    K = len(fields)

    def func(X, t):
        return sum(f.func(X, t) for f in fields) / K

    return VectorField(fields[0].dimension, func, max(f.lipschitz_x for f in fields),
                       static=True, name=name)


def sign_alternation(period, horizon, amplitude=1.0):
    """1-D mean-zero alternation ``+a`` then ``-a`` on each period."""
    return switched([constant([amplitude]), constant([-amplitude])], period, horizon,
                    name="sign_alternation")


BUILTINS = {
    "zero": lambda p: zero(int(p.get("n", 1))),
    "constant": lambda p: constant(p["c"]),
    "linear": lambda p: linear(p["A"], p.get("b")),
    "neg_tanh": lambda p: neg_tanh(int(p.get("n", 1)), float(p.get("scale", 1.0))),
    "tanh_linear": lambda p: tanh_linear(p["A"], p.get("b")),
    "tanh_rotation": lambda p: tanh_rotation(float(p.get("omega", 1.0)), float(p.get("scale", 1.0)),
                                             float(p.get("phase", 0.0))),
    "time_linear": lambda p: time_linear(int(p.get("n", 1)), float(p.get("rate", 1.0))),
    "periodic_scalar": lambda p: periodic_scalar(float(p.get("a", 0.0)), float(p.get("b", 1.0)),
                                                 float(p.get("omega", 2 * np.pi)), int(p.get("n", 1))),
}


def build(name, params=None):
    """Look up a built-in field by name."""
    try:
        maker = BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown built-in field {name!r}; choose from {sorted(BUILTINS)}") from None
    try:
        return maker(dict(params or {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad parameters for field {name!r}: {exc}") from exc
