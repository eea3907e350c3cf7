"""Hot inner loops: time stepping of neuron fields ``a * sigma(B x + g)``.

Each kernel exists twice, a numba version (``*_nb``) and a numpy version
(``*_np``) vectorised over the batch of initial points.  The public names
dispatch according to :data:`odenet_uap._accel.USE_NUMBA`.

Control values are passed as lookup tables ``At (R, N)``, ``Bt (R, N, N)``,
``Gt (R, N)`` plus an index array telling which table row each RK stage of
each step uses.  Piecewise-constant controls reuse one row per piece; sampled
controls get one row per stage.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

ACT_TANH = 0
ACT_SIGMOID = 1
ACT_RELU = 2
ACT_SOFTPLUS = 3
ACT_TRUNCATED_POWER = 4

DIVERGENCE_THRESHOLD = 1e12


# --------------------------------------------------------------------------
# activations


def activation_np(z, code, k=1.0):
    z = np.asarray(z, dtype=float)
    if code == ACT_TANH:
        return np.tanh(z)
    if code == ACT_SIGMOID:
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if code == ACT_RELU:
        return np.maximum(z, 0.0)
    if code == ACT_SOFTPLUS:
        return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    if code == ACT_TRUNCATED_POWER:
        return np.where(z > 0, np.maximum(z, 0.0) ** k, 0.0)
    raise ValueError(f"unknown activation code {code}")


@njit
def _act_nb(z, code, k):
    if code == 0:
        return math.tanh(z)
    elif code == 1:
        if z >= 0:
            return 1.0 / (1.0 + math.exp(-z))
        ez = math.exp(z)
        return ez / (1.0 + ez)
    elif code == 2:
        return z if z > 0 else 0.0
    elif code == 3:
        return max(z, 0.0) + math.log1p(math.exp(-abs(z)))
    else:
        return z ** k if z > 0 else 0.0


# --------------------------------------------------------------------------
# numba kernels


@njit
def _neuron_rhs_nb(X, At, Bt, Gt, i, code, k, out):
    # batch rhs; points are independent, so the activation calls pipeline
    nb, n = X.shape
    for p in range(nb):
        for j in range(n):
            z = Gt[i, j]
            for m in range(n):
                z += Bt[i, j, m] * X[p, m]
            out[p, j] = At[i, j] * _act_nb(z, code, k)


@njit
def _count_saves(save):
    c = 1
    for s in range(save.shape[0]):
        if save[s]:
            c += 1
    return c


@njit
def _bad(X):
    nb, n = X.shape
    for p in range(nb):
        for j in range(n):
            if not (abs(X[p, j]) <= DIVERGENCE_THRESHOLD):
                return True
    return False


@njit
def rk4_neuron_nb(X0, dts, At, Bt, Gt, idx, code, k, save):
    nb, n = X0.shape
    out = np.empty((_count_saves(save), nb, n))
    X = X0.copy()
    Y = np.empty_like(X)
    k1 = np.empty_like(X)
    k2 = np.empty_like(X)
    k3 = np.empty_like(X)
    k4 = np.empty_like(X)
    out[0] = X
    r = 1
    for s in range(dts.shape[0]):
        h = dts[s]
        _neuron_rhs_nb(X, At, Bt, Gt, idx[s, 0], code, k, k1)
        for p in range(nb):
            for j in range(n):
                Y[p, j] = X[p, j] + 0.5 * h * k1[p, j]
        _neuron_rhs_nb(Y, At, Bt, Gt, idx[s, 1], code, k, k2)
        for p in range(nb):
            for j in range(n):
                Y[p, j] = X[p, j] + 0.5 * h * k2[p, j]
        _neuron_rhs_nb(Y, At, Bt, Gt, idx[s, 1], code, k, k3)
        for p in range(nb):
            for j in range(n):
                Y[p, j] = X[p, j] + h * k3[p, j]
        _neuron_rhs_nb(Y, At, Bt, Gt, idx[s, 2], code, k, k4)
        for p in range(nb):
            for j in range(n):
                X[p, j] = X[p, j] + (h / 6.0) * (k1[p, j] + 2.0 * k2[p, j] + 2.0 * k3[p, j] + k4[p, j])
        if _bad(X):
            return out[:r].copy(), s
        if save[s]:
            out[r] = X
            r += 1
    return out, -1


@njit
def euler_neuron_nb(X0, dts, At, Bt, Gt, idx, code, k, save):
    nb, n = X0.shape
    out = np.empty((_count_saves(save), nb, n))
    X = X0.copy()
    k1 = np.empty_like(X)
    out[0] = X
    r = 1
    for s in range(dts.shape[0]):
        _neuron_rhs_nb(X, At, Bt, Gt, idx[s], code, k, k1)
        for p in range(nb):
            for j in range(n):
                X[p, j] = X[p, j] + dts[s] * k1[p, j]
        if _bad(X):
            return out[:r].copy(), s
        if save[s]:
            out[r] = X
            r += 1
    return out, -1


# --------------------------------------------------------------------------
# numpy kernels


def _neuron_rhs_np(X, a, b, g, code, k):
    # X (B, N); explicit loop over m mirrors the numba summation order
    n = X.shape[1]
    z = np.broadcast_to(g, X.shape).copy()
    for m in range(n):
        z += b[:, m] * X[:, m:m + 1]
    return a * activation_np(z, code, k)


def _diverged(X):
    return not np.all(np.abs(X) <= DIVERGENCE_THRESHOLD)


def rk4_neuron_np(X0, dts, At, Bt, Gt, idx, code, k, save):
    X = np.array(X0, dtype=float)
    out = [X.copy()]
    for s in range(dts.shape[0]):
        h = dts[s]
        i0, i1, i2 = idx[s]
        k1 = _neuron_rhs_np(X, At[i0], Bt[i0], Gt[i0], code, k)
        k2 = _neuron_rhs_np(X + 0.5 * h * k1, At[i1], Bt[i1], Gt[i1], code, k)
        k3 = _neuron_rhs_np(X + 0.5 * h * k2, At[i1], Bt[i1], Gt[i1], code, k)
        k4 = _neuron_rhs_np(X + h * k3, At[i2], Bt[i2], Gt[i2], code, k)
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if _diverged(X):
            return np.array(out), s
        if save[s]:
            out.append(X.copy())
    return np.array(out), -1


def euler_neuron_np(X0, dts, At, Bt, Gt, idx, code, k, save):
    X = np.array(X0, dtype=float)
    out = [X.copy()]
    for s in range(dts.shape[0]):
        i0 = idx[s]
        X = X + dts[s] * _neuron_rhs_np(X, At[i0], Bt[i0], Gt[i0], code, k)
        if _diverged(X):
            return np.array(out), s
        if save[s]:
            out.append(X.copy())
    return np.array(out), -1


def _prep(X0, dts, At, Bt, Gt, idx, save):
    return (
        np.ascontiguousarray(X0, dtype=np.float64),
        np.ascontiguousarray(dts, dtype=np.float64),
        np.ascontiguousarray(At, dtype=np.float64),
        np.ascontiguousarray(Bt, dtype=np.float64),
        np.ascontiguousarray(Gt, dtype=np.float64),
        np.ascontiguousarray(idx, dtype=np.int64),
        np.ascontiguousarray(save, dtype=np.bool_),
    )


def rk4_neuron(X0, dts, At, Bt, Gt, idx, code, k, save, use_numba=None):
    """Classical RK4 over the given steps; returns ``(saved_states, fail_step)``.

    ``saved_states[0]`` is ``X0``; a row follows for every step with
    ``save[s]`` true.  ``fail_step`` is -1 unless some state left the
    divergence threshold.
    """
    args = _prep(X0, dts, At, Bt, Gt, idx, save)
    if use_numba is None:
        use_numba = USE_NUMBA
    X0, dts, At, Bt, Gt, idx, save = args
    if use_numba:
        return rk4_neuron_nb(X0, dts, At, Bt, Gt, idx, int(code), float(k), save)
    return rk4_neuron_np(X0, dts, At, Bt, Gt, idx, int(code), float(k), save)


def euler_neuron(X0, dts, At, Bt, Gt, idx, code, k, save, use_numba=None):
    """Explicit Euler counterpart of :func:`rk4_neuron` (``idx`` is 1-D)."""
    args = _prep(X0, dts, At, Bt, Gt, idx, save)
    if use_numba is None:
        use_numba = USE_NUMBA
    X0, dts, At, Bt, Gt, idx, save = args
    if use_numba:
        return euler_neuron_nb(X0, dts, At, Bt, Gt, idx, int(code), float(k), save)
    return euler_neuron_np(X0, dts, At, Bt, Gt, idx, int(code), float(k), save)
