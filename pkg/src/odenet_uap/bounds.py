"""Closed-form Gronwall certificates next to their measured counterparts.

Every public function returns a :class:`BoundReport` holding ``certified``
(the formula) and ``measured`` (an RK4 oracle run).  Sup norms over tubes are
approximated on sample grids; no safety factor is applied.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Domain, NeuronControls, VectorField, sample_times
from .errors import PreconditionError
from .solver import SolverConfig, solve_batch

RTOL = 1e-6
ATOL = 1e-9
DEFAULT_SOLVER = SolverConfig("rk4_reference", 512)


@dataclass
class BoundReport:
    name: str
    certified: float
    measured: float
    inputs: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.certified - self.measured

    def holds(self, rtol=RTOL, atol=ATOL):
        return bool(self.measured <= self.certified * (1 + rtol) + atol)

    def to_dict(self):
        return {
            "name": self.name,
            "certified": float(self.certified),
            "measured": float(self.measured),
            "slack": float(self.slack),
            "holds": self.holds(),
            "inputs": {k: _plain(v) for k, v in self.inputs.items()},
        }


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


# --------------------------------------------------------------------------
# sampling helpers


def field_times(f: VectorField, T, n_times=64):
    if f.static:
        return np.array([0.0])
    return sample_times(T, n_times, f.breakpoints, f.piecewise_constant)


def sup_norm(f: VectorField, X, times):
    """``max |f(x, t)|`` over sample points and times."""
    best = 0.0
    for t in np.atleast_1d(times):
        best = max(best, float(np.linalg.norm(f.evaluate(X, t), axis=1).max(initial=0.0)))
    return best


def sup_difference(f: VectorField, g: VectorField, X, times):
    best = 0.0
    for t in np.atleast_1d(times):
        d = np.linalg.norm(f.evaluate(X, t) - g.evaluate(X, t), axis=1)
        best = max(best, float(d.max(initial=0.0)))
    return best


def tube_radius(f: VectorField, D: Domain, T, n_times=64):
    """``||f||_{L^inf(0,T;C^0(D))} T e^{Lip(f) T}``: how far any flow from D can move."""
    F = sup_norm(f, D.grid(), field_times(f, T, n_times))
    return F * T * math.exp(f.lipschitz_x * T), F


def tube_samples(D: Domain, radius, samples_per_axis=None):
    if samples_per_axis is None:
        samples_per_axis = {1: 81, 2: 31, 3: 13}.get(D.dimension, 7)
    return D.expand(radius, samples_per_axis).grid()


def _flows(f, X0, T, cfg, record=None):
    times, states = solve_batch(f, X0, T, cfg, record)
    return times, states


# --------------------------------------------------------------------------
# Gronwall certificates


def solution_range_bound(f: VectorField, xi0, T, cfg: SolverConfig = DEFAULT_SOLVER, n_times=None):
    """``|S_f(t) xi0 - xi0| <= F0 T e^{Lip(f) T}`` with ``F0 = max_t |f(xi0, t)|``."""
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    nt = cfg.time_steps if n_times is None else n_times
    F0 = sup_norm(f, xi0[None], field_times(f, T, nt))
    lip = f.lipschitz_x
    cert = F0 * T * math.exp(lip * T)
    _, states = _flows(f, xi0[None], T, cfg)
    meas = float(np.linalg.norm(states[:, 0, :] - xi0, axis=1).max())
    return BoundReport("solution_range", cert, meas, {"F0": F0, "lip": lip, "T": T, "M": cert})


def flow_distance_bound(f: VectorField, g: VectorField, D: Domain, T, cfg: SolverConfig = DEFAULT_SOLVER,
                        n_times=64, tube_grid=None):
    """``sup_t ||S_f(t) - S_g(t)||_{C^0(D)} <= ||f - g||_{E} T e^{Lip(f) T}``.

    ``E`` is ``D`` grown by the solution-range radius of ``g``; the sup over
    ``E`` is sampled on a box grid plus the actual ``g`` trajectories.
    """
    X0 = D.grid()
    Mg, Fg = tube_radius(g, D, T, n_times)
    tg, sg = _flows(g, X0, T, cfg)
    _, sf = _flows(f, X0, T, cfg)
    times = np.union1d(field_times(f, T, n_times), field_times(g, T, n_times))
    E = tube_samples(D, Mg, tube_grid)
    diff = sup_difference(f, g, E, times)
    # trajectory states of g lie in E by construction
    for k in range(0, len(tg), max(1, len(tg) // 64)):
        diff = max(diff, sup_difference(f, g, sg[k], [tg[k]]))
    lip = f.lipschitz_x
    cert = diff * T * math.exp(lip * T)
    meas = float(np.linalg.norm(sf - sg, axis=2).max())
    return BoundReport("flow_distance", cert, meas,
                       {"sup_diff_E": diff, "lip_f": lip, "T": T, "tube_radius": Mg, "Fg": Fg})


def tube_bound_check(f: VectorField, g: VectorField, D: Domain, a, T, cfg: SolverConfig = DEFAULT_SOLVER,
                     pairs=None, n_pairs=100, seed=0, offset_fraction=0.9, tube_grid=None):
    """Tube estimate for static fields: both hypotheses are checked, then the conclusion measured.

    ``B_0`` is ``D`` grown by the solution-range radius of ``f``; ``B_a`` is
    that box grown by ``a``.  Hypotheses: ``||f - g||_{B_a} < a / (2T e^{LT})``
    and ``|xi - xibar| < a / (2 e^{LT})``.  Conclusion (measured):
    ``S_g(t) xibar`` stays in ``B_a`` and ``|S_f(t) xi - S_g(t) xibar| <= a``.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    lip = f.lipschitz_x
    growth = math.exp(lip * T)
    M0, _ = tube_radius(f, D, T)
    Ba = D.expand(M0 + a)
    diff = sup_difference(f, g, tube_samples(Ba, 0.0, tube_grid), [0.0])
    field_budget = a / (2 * T * growth)
    point_budget = a / (2 * growth)
    if not diff < field_budget:
        raise PreconditionError(f"||f-g|| on B_a = {diff:.3e} is not < a/(2Te^(LT)) = {field_budget:.3e}")
    if pairs is None:
        rng = np.random.default_rng(seed)
        X = D.grid()
        xi = X[rng.integers(0, len(X), n_pairs)]
        u = rng.normal(size=xi.shape)
        u /= np.maximum(np.linalg.norm(u, axis=1, keepdims=True), 1e-300)
        r = offset_fraction * point_budget * rng.uniform(0, 1, size=(n_pairs, 1))
        xib = np.clip(xi + r * u, D.lower, D.upper)
    else:
        xi = np.array([p[0] for p in pairs], dtype=float).reshape(len(pairs), -1)
        xib = np.array([p[1] for p in pairs], dtype=float).reshape(len(pairs), -1)
    offs = np.linalg.norm(xi - xib, axis=1)
    if np.any(offs >= point_budget):
        raise PreconditionError(f"|xi - xibar| = {offs.max():.3e} is not < a/(2e^(LT)) = {point_budget:.3e}")
    _, sf = _flows(f, xi, T, cfg)
    _, sg = _flows(g, xib, T, cfg)
    meas = float(np.linalg.norm(sf - sg, axis=2).max())
    escape = float(Ba.distance_to(sg.reshape(-1, sg.shape[-1])).max())
    rep = BoundReport("tube", float(a), meas,
                      {"a": a, "lip_f": lip, "T": T, "sup_diff_Ba": diff, "field_budget": field_budget,
                       "point_budget": point_budget, "B0_radius": M0, "escape_from_Ba": escape})
    return rep


def m1_certificate(c: NeuronControls, D: Domain):
    """Solution bound for any mollification of ``c`` (control sup norms only)."""
    T = c.horizon
    n = c.dimension
    a, b, g = c.alpha_sup, c.beta_sup, c.gamma_sup
    lip = c.sigma.lipschitz
    xmax = D.max_norm
    R = b * xmax + g
    s = c.sigma.vector_sup(R, n)
    M1 = xmax + T * a * s * math.exp(a * b * lip * T)
    return M1, {"alpha_sup": a, "beta_sup": b, "gamma_sup": g, "R_tilde": R, "sigma_sup_R": s,
                "max_xi": xmax, "lip_sigma": lip, "T": T}


def m2_certificate(c: NeuronControls, M1):
    R2 = c.beta_sup * M1 + c.gamma_sup
    return c.sigma.vector_sup(R2, c.dimension), R2


def mollified_control_bounds(c: NeuronControls, delta, D: Domain, cfg: SolverConfig = DEFAULT_SOLVER,
                             c_delta: NeuronControls = None):
    """``(M1 report, M2 report)`` for the flow of the ``delta``-mollified controls.

    The certificates depend only on sup norms of ``c`` (mollification does
    not increase them), so they hold for every ``delta``.
    """
    from .mollify import mollify_controls

    if not delta > 0:
        raise ValueError("delta must be positive")
    if c_delta is None:
        c_delta = mollify_controls(c, delta)
    M1, inputs = m1_certificate(c, D)
    M2, R2 = m2_certificate(c, M1)
    X0 = D.grid()
    h = c_delta.field()
    times, states = _flows(h, X0, c.horizon, cfg)
    meas1 = float(np.linalg.norm(states, axis=2).max())
    meas2 = 0.0
    for k, t in enumerate(times):
        _, b, g = c_delta.values_at(t)
        y = c.sigma(states[k] @ b.T + g)
        meas2 = max(meas2, float(np.linalg.norm(y, axis=1).max()))
    inputs = dict(inputs, delta=delta)
    return (BoundReport("M1", M1, meas1, inputs),
            BoundReport("M2", M2, meas2, dict(inputs, M1=M1, R2=R2)))


def stage3_constants(M1, M2, alpha_sup, beta_sup, lip_sigma):
    """``M3 = M2 + (M1 + 1)|alpha| Lip(sigma)`` and ``M4 = |alpha| |beta| Lip(sigma)``."""
    M3 = M2 + (M1 + 1.0) * alpha_sup * lip_sigma
    M4 = alpha_sup * beta_sup * lip_sigma
    return M3, M4


def mollified_flow_certificate(M3, M4, eps_prime, T):
    return M3 * eps_prime * math.exp(M4 * T)


def resnet_error_envelope(C, T, L, eps):
    """Depth-independent bound ``e^{CT} eps / C`` on the Euler/flow gap."""
    if not (C > 0 and T > 0 and eps >= 0):
        raise ValueError("need C > 0, T > 0, eps >= 0")
    if int(L) < 1:
        raise ValueError("L must be >= 1")
    return math.exp(C * T) * eps / C


def resnet_recursion(C, T, L, eps, z0=0.0):
    """Unrolled ``z_{l+1} = (1 + C dt) z_l + dt eps``; returns ``z_0 .. z_L``."""
    dt = T / L
    z = np.empty(L + 1)
    z[0] = z0
    for l in range(L):
        z[l + 1] = (1 + C * dt) * z[l] + dt * eps
    return z


def budget_sequence(eps, lip, tau, L):
    """``b_l = eps / (3 (4 e^{Lip tau})^{L-l})`` for ``l = 0..L``."""
    q = 4.0 * math.exp(lip * tau)
    return np.array([eps / (3.0 * q ** (L - l)) for l in range(L + 1)])


# --------------------------------------------------------------------------
# random corpus


def shifted(f: VectorField, c) -> VectorField:
    """``f + c`` for a constant vector ``c``."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return VectorField(f.dimension, lambda X, t: f.func(X, t) + c, f.lipschitz_x, static=f.static,
                       breakpoints=f.breakpoints, piecewise_constant=f.piecewise_constant,
                       name=f"{f.name}+c")


def random_case(index, seed=0):
    """One corpus case: a random linear or tanh field plus random piecewise controls."""
    from . import fields
    from .core import Activation

    rng = np.random.default_rng([seed, index])
    n = 1 + index % 3
    kind = "linear" if (index // 3) % 2 == 0 else "tanh_linear"
    make = fields.BUILTINS[kind]
    A = 0.6 * rng.normal(size=(n, n))
    b = 0.3 * rng.normal(size=n)
    f = make({"A": A, "b": b})
    g = make({"A": A + 0.1 * rng.normal(size=(n, n)), "b": b + 0.05 * rng.normal(size=n)})
    T = float(rng.uniform(0.5, 1.5))
    D = Domain.cube(n, -1.0, 1.0, {1: 11, 2: 7, 3: 4}[n])
    P = 4
    cuts = np.sort(rng.uniform(0.1, 0.9, P - 1)) * T
    c = NeuronControls(0.7 * rng.normal(size=(P, n)), 0.7 * rng.normal(size=(P, n, n)),
                       0.5 * rng.normal(size=(P, n)), Activation("tanh"), T,
                       times=np.concatenate([[0.0], cuts, [T]]))
    return {"index": index, "kind": kind, "n": n, "f": f, "g": g, "T": T, "D": D, "controls": c,
            "xi0": rng.uniform(-1, 1, n), "a": float(rng.uniform(0.05, 0.5)),
            "shift_dir": rng.normal(size=n), "delta": float(T * rng.uniform(0.02, 0.2)), "seed": seed}


def case_reports(case, cfg: SolverConfig = DEFAULT_SOLVER):
    """Every certificate for one corpus case, as a list of BoundReports."""
    from .mollify import l1_gaps, mollified_flow_error, mollify_controls

    f, T, D = case["f"], case["T"], case["D"]
    out = [solution_range_bound(f, case["xi0"], T, cfg),
           flow_distance_bound(f, case["g"], D, T, cfg)]
    a = case["a"]
    budget = a / (2 * T * math.exp(f.lipschitz_x * T))
    u = case["shift_dir"]
    out.append(tube_bound_check(f, shifted(f, 0.5 * budget * u / np.linalg.norm(u)), D, a, T, cfg,
                                n_pairs=20, seed=case["index"]))
    c = case["controls"]
    cd = mollify_controls(c, case["delta"])
    out.extend(mollified_control_bounds(c, case["delta"], D, cfg, cd))
    out.append(mollified_flow_error(c, cd, D, T, cfg, gaps=l1_gaps(c, cd)))
    for r in out:
        r.inputs.setdefault("case", case["index"])
    return out


def certificate_corpus(n_cases=50, seed=0, cfg: SolverConfig = DEFAULT_SOLVER):
    reports = []
    for i in range(n_cases):
        reports.extend(case_reports(random_case(i, seed), cfg))
    return reports
