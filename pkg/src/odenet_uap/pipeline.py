"""Three-stage construction of single-neuron controls approximating a flow.

Stage 1 freezes ``f`` on ``L`` time slices.  Stage 2 fits every frozen
slice by a shallow sum and replaces the sum by fast cyclic switching among
its amplified terms (time multiplexing), choosing the fit tolerance and the
switching rate from the per-slice budgets ``b_l``.  The slices concatenate
into one piecewise-constant control schedule ``h_L``.  Stage 3 (mollify.py)
smooths that schedule.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bounds import budget_sequence, tube_radius, tube_samples
from .core import PIECEWISE, Activation, Domain, NeuronControls, VectorField
from .errors import ApproximationFailure, SearchFailure, StageFailure
from .shallow import FitConfig, ShallowField, fit_vector_field
from .solver import SolverConfig, solve_batch

L_MAX = 2 ** 16
M_MAX = 2 ** 14
STEPS_PER_PIECE = 2


# --------------------------------------------------------------------------
# stage 1: time slicing


@dataclass
class SliceSchedule:
    f: VectorField
    T: float
    L: int
    gap: float = float("nan")   # measured sup |f - f_L| over the tube

    @property
    def tau(self):
        return self.T / self.L

    @property
    def times(self):
        return np.arange(self.L + 1) * self.tau

    def slice_time_of(self, l):
        """Freeze time of slice ``l`` (1-based), its right endpoint."""
        return l * self.tau if l < self.L else self.T

    def slice_field(self, l) -> VectorField:
        t = self.slice_time_of(l)
        f = self.f
        return VectorField(f.dimension, lambda X, _s, _t=t: f.func(X, _t), f.lipschitz_x,
                           static=True, name=f"{f.name}[{l}]")

    @property
    def slice_fields(self):
        return [self.slice_field(l) for l in range(1, self.L + 1)]

    def field(self) -> VectorField:
        """``f_L(x, t) = f(x, t_l)`` on ``(t_{l-1}, t_l]``."""
        f = self.f
        if f.static or self.L == 1 and f.static:
            return f
        L, tau, T = self.L, self.tau, self.T
        ends = np.array([self.slice_time_of(l) for l in range(1, L + 1)])

        def func(X, t):
            l = min(max(int(math.ceil(t / tau - 1e-9)), 1), L)
            return f.func(X, ends[l - 1])

        return VectorField(f.dimension, func, f.lipschitz_x, breakpoints=tuple(ends[:-1].tolist()),
                           piecewise_constant=True, name=f"{f.name}_L{L}")


def slice_gap(f: VectorField, X, T, L, per_slice=None):
    """``sup |f(x,t) - f_L(x,t)|`` over sample points and times inside each slice."""
    if f.static:
        return 0.0
    tau = T / L
    q = per_slice or max(2, 256 // L)
    best = 0.0
    for l in range(1, L + 1):
        end = l * tau if l < L else T
        ref = f.func(X, end)
        for k in range(q):
            t = (l - 1) * tau + k * tau / q
            best = max(best, float(np.linalg.norm(f.func(X, t) - ref, axis=1).max()))
    return best


def slice_time(f: VectorField, T, L, D: Domain = None, tube=None):
    """Schedule of ``L`` frozen slices, with the measured slice gap over the tube."""
    if int(L) < 1:
        raise ValueError("L must be >= 1")
    sched = SliceSchedule(f, float(T), int(L))
    if D is not None:
        if tube is None:
            M0, _ = tube_radius(f, D, T)
            tube = tube_samples(D, M0)
        sched.gap = slice_gap(f, tube, T, L)
    return sched


def slice_threshold(f, T, eps):
    return eps / (3 * T * math.exp(f.lipschitz_x * T))


def choose_L(f: VectorField, D: Domain, T, eps, L_max=L_MAX):
    """Smallest power of two ``L`` with slice gap below ``eps / (3 T e^{Lip T})``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    thr = slice_threshold(f, T, eps)
    if f.static:
        return 1
    M0, _ = tube_radius(f, D, T)
    tube = tube_samples(D, M0)
    L = 1
    gap = np.inf
    while L <= L_max:
        gap = slice_gap(f, tube, T, L)
        if gap < thr:
            return L
        L *= 2
    raise SearchFailure(f"slice gap {gap:.3e} still >= {thr:.3e} at L={L_max}", gap)


# --------------------------------------------------------------------------
# stage 2: multiplexing


@dataclass
class MultiplexedSlice:
    """One slice of switched controls: ``K*m`` equal pieces cycling the ``K`` terms."""

    source: ShallowField
    m: int
    tau: float
    alpha: np.ndarray     # (K*m, N) amplified K * alpha_i
    beta: np.ndarray
    gamma: np.ndarray

    @property
    def K(self):
        return self.source.width

    @property
    def n_pieces(self):
        return self.alpha.shape[0]

    def local_times(self, t0=0.0, t1=None):
        t1 = t0 + self.tau if t1 is None else t1
        P = self.n_pieces
        ts = t0 + (t1 - t0) * (np.arange(P + 1) / P)
        ts[-1] = t1
        return ts

    def controls(self) -> NeuronControls:
        """The slice alone on ``[0, tau]``."""
        return NeuronControls(self.alpha, self.beta, self.gamma, self.source.sigma, self.tau,
                              PIECEWISE, self.local_times())

    def time_average(self, X):
        """Exact time average of the switched field (equal-width pieces)."""
        acc = np.zeros(np.atleast_2d(X).shape)
        for a, b, g in zip(self.alpha, self.beta, self.gamma):
            acc = acc + a * self.source.sigma(np.atleast_2d(X) @ b.T + g)
        return acc / self.n_pieces


def multiplex_slice(g: ShallowField, tau, m) -> MultiplexedSlice:
    """Cycle ``(K alpha_i, beta_i, gamma_i)``, ``i = 1..K``, ``m`` times over ``[0, tau]``.

    With ``K = 1`` the field is already a single neuron and ``m`` is ignored.
    """
    if int(m) < 1:
        raise ValueError("m must be >= 1")
    K = g.width
    m = 1 if K == 1 else int(m)
    a = np.tile(K * g.alpha, (m, 1))
    b = np.tile(g.beta, (m, 1, 1))
    c = np.tile(g.gamma, (m, 1))
    return MultiplexedSlice(g, m, float(tau), a, b, c)


@dataclass
class MultiplexedControls:
    slices: list
    T: float

    def controls(self) -> NeuronControls:
        """Concatenation into one piecewise-constant schedule on ``[0, T]``."""
        L = len(self.slices)
        tau = self.T / L
        times = [np.array([0.0])]
        for l, s in enumerate(self.slices, start=1):
            t0 = (l - 1) * tau
            t1 = l * tau if l < L else self.T
            times.append(s.local_times(t0, t1)[1:])
        sig = self.slices[0].source.sigma
        return NeuronControls(np.concatenate([s.alpha for s in self.slices]),
                              np.concatenate([s.beta for s in self.slices]),
                              np.concatenate([s.gamma for s in self.slices]),
                              sig, self.T, PIECEWISE, np.concatenate(times))


# --------------------------------------------------------------------------
# averaging


def compress_time(g: VectorField, period, m, horizon=None) -> VectorField:
    """``g_m(x, t) = g(x, m t)`` for a ``period``-periodic ``g`` on ``[0, horizon]``."""
    if g.static:
        return g
    horizon = period if horizon is None else horizon
    inner = np.asarray([b for b in g.breakpoints if 0 < b < period], dtype=float)
    n_per = int(math.ceil(m * horizon / period - 1e-9))
    base = np.concatenate([inner, [period]])
    bps = (np.arange(n_per)[:, None] * period + base[None, :]).ravel() / m
    bps = bps[bps < horizon * (1 - 1e-12)]

    def func(X, t):
        s = (m * t) % period
        if s == 0.0 and t > 0:
            s = period     # right-continuous convention: end of a period belongs to it
        return g.func(X, s)

    return VectorField(g.dimension, func, g.lipschitz_x, breakpoints=tuple(bps.tolist()),
                       piecewise_constant=g.piecewise_constant, name=f"{g.name}_x{m}")


def time_average_field(g: VectorField, period, n_quad=64) -> VectorField:
    """``bar g(x) = (1/period) int_0^period g(x, t) dt``.

    Piecewise-constant fields are averaged exactly over their pieces; others
    by Gauss-Legendre on every breakpoint interval.
    """
    if g.static:
        return g
    edges = np.unique(np.concatenate([[0.0], [b for b in g.breakpoints if 0 < b < period], [period]]))
    if g.piecewise_constant:
        nodes = 0.5 * (edges[:-1] + edges[1:])
        weights = np.diff(edges) / period
    else:
        x, w = np.polynomial.legendre.leggauss(n_quad)
        a, b = edges[:-1, None], edges[1:, None]
        nodes = (0.5 * (a + b) + 0.5 * (b - a) * x).ravel()
        weights = (0.5 * (b - a) * w).ravel() / period

    def func(X, t):
        acc = np.zeros_like(X)
        for s, wgt in zip(nodes, weights):
            acc = acc + wgt * g.func(X, s)
        return acc

    return VectorField(g.dimension, func, g.lipschitz_x, static=True, name=f"avg({g.name})")


def averaging_distance(fast: VectorField, slow: VectorField, X0, horizon, cfg: SolverConfig, record=None,
                       oracle=None):
    """Sup over record times of ``|S_fast(t) xi - S_slow(t) xi|``.

    ``oracle(times, X0) -> (K, B, N)`` replaces the solve of ``slow`` when given.
    """
    n_b = len(fast.breakpoints)
    steps = max(cfg.time_steps, STEPS_PER_PIECE * (n_b + 1))
    c = SolverConfig("rk4_reference", steps)
    if record is None:
        record = np.union1d(np.linspace(0.0, horizon, 129), np.asarray(fast.breakpoints, dtype=float)[:2 ** 16])
    times, a = solve_batch(fast, X0, horizon, c, record)
    if oracle is None:
        _, b = solve_batch(slow, X0, horizon, c, record)
    else:
        b = oracle(times, X0)
    return float(np.linalg.norm(a - b, axis=2).max())


def averaging_experiment(g: VectorField, xi, tau, m_list, cfg: SolverConfig = SolverConfig(), workers=1,
                         horizon=None, oracle=None):
    """``[(m, sup_t |S_{g_m}(t) xi - S_{bar g}(t) xi|)]`` for a ``tau``-periodic ``g``.

    ``oracle`` gives the averaged flow in closed form (see ``averaging_distance``).
    """
    m_list = [int(m) for m in m_list]
    if any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise ValueError("m_list must be increasing")
    horizon = tau if horizon is None else horizon
    X0 = np.atleast_2d(np.asarray(xi, dtype=float))
    gbar = time_average_field(g, tau)

    def run(m):
        return m, averaging_distance(compress_time(g, tau, m, horizon), gbar, X0, horizon, cfg, oracle=oracle)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, m_list))
    return [run(m) for m in m_list]


def loglog_slope(ms, dists):
    ms = np.asarray(ms, dtype=float)
    d = np.asarray(dists, dtype=float)
    keep = d > 0
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(ms[keep]), np.log(d[keep]), 1)[0])


def multiplex_distance(g: ShallowField, zetas, tau, m, cfg: SolverConfig = SolverConfig()):
    """Sup over ``t`` and ``zetas`` of switched-vs-averaged flow distance for one slice."""
    sl = multiplex_slice(g, tau, m)
    fast = sl.controls().field()
    return averaging_distance(fast, g.field(), zetas, tau, cfg)


def choose_m(g: ShallowField, zetas, tau, budget, cfg: SolverConfig = SolverConfig(), m_max=M_MAX):
    """Smallest power of two ``m`` whose switched flow stays within ``budget`` of the averaged one.

    Returns ``(m, distance)``.
    """
    if not budget > 0:
        raise ValueError("budget must be positive")
    if g.width == 1:
        return 1, 0.0
    zetas = np.atleast_2d(zetas)
    m = 1
    best = np.inf
    while m <= m_max:
        d = multiplex_distance(g, zetas, tau, m, cfg)
        best = min(best, d)
        if d <= budget:
            return m, d
        m *= 2
    raise SearchFailure(f"averaging distance {best:.3e} > budget {budget:.3e} at m={m_max}", best)


# --------------------------------------------------------------------------
# assembly


@dataclass
class StageReport:
    name: str
    measured: float
    budget: float
    certified: float = None
    details: dict = field(default_factory=dict)
    slices: list = field(default_factory=list)
    curve: tuple = None        # (t, sup-over-D error) for CSV export

    @property
    def passed(self):
        return bool(self.measured < self.budget)

    def to_dict(self):
        d = {"name": self.name, "measured": float(self.measured), "budget": float(self.budget),
             "certified": None if self.certified is None else float(self.certified),
             "passed": self.passed, "details": _plain_dict(self.details)}
        if self.slices:
            d["slices"] = [_plain_dict(s) for s in self.slices]
        return d


def _plain_dict(d):
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        elif isinstance(v, np.ndarray):
            v = v.tolist()
        elif isinstance(v, dict):
            v = _plain_dict(v)
        out[k] = v
    return out


def default_fit_samples(n):
    return {1: 161, 2: 41, 3: 17}.get(n, 9)


def flow_gap_curve(f: VectorField, g: VectorField, X0, T, cfg: SolverConfig, n_record=128):
    """``(t, max over X0 of |S_f(t) xi - S_g(t) xi|)`` on a uniform record grid."""
    rec = np.linspace(0.0, T, n_record + 1)
    pieces = len(f.breakpoints) + len(g.breakpoints) + 1
    c = SolverConfig("rk4_reference", max(cfg.time_steps, STEPS_PER_PIECE * pieces))
    _, a = solve_batch(f, X0, T, c, rec)
    _, b = solve_batch(g, X0, T, c, rec)
    err = np.linalg.norm(a - b, axis=2).max(axis=1)
    return rec, err


def assemble_h_L(f: VectorField, D: Domain, T, eps, cfg: FitConfig = FitConfig(),
                 sigma: Activation = Activation("tanh"), solver: SolverConfig = SolverConfig(),
                 L=None, fit_samples=None):
    """Piecewise-constant single-neuron controls ``h_L`` with ``||S_{f_L} - S_{h_L}|| <= eps/3``.

    Returns ``(controls, stage2_report, stage1_report)``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    T = float(T)
    X0 = D.grid()
    M0, F0 = tube_radius(f, D, T)
    thr = slice_threshold(f, T, eps)
    if L is None:
        L = choose_L(f, D, T, eps)
    sched = slice_time(f, T, L, D)
    tau = sched.tau
    lip = f.lipschitz_x
    b = budget_sequence(eps, lip, tau, L)
    growth = math.exp(lip * tau)
    n_fit = fit_samples or default_fit_samples(D.dimension)

    zeta = X0.copy()
    xi = X0.copy()
    slices = []
    records = []
    for l in range(1, L + 1):
        fl = sched.slice_field(l)
        tol = b[l] / (4 * tau * growth)
        box = D.expand(M0 + b[l], n_fit)
        try:
            g, fit_err = fit_vector_field(fl, box, cfg, sigma, target=tol)
        except ApproximationFailure as exc:
            raise StageFailure("fit", str(exc), l, exc.best_error, tol) from exc
        try:
            m, avg = choose_m(g, zeta, tau, 0.5 * b[l], solver)
        except SearchFailure as exc:
            raise StageFailure("multiplex", str(exc), l, exc.achieved, 0.5 * b[l]) from exc
        sl = multiplex_slice(g, tau, m)
        slices.append(sl)
        steps = max(solver.time_steps, STEPS_PER_PIECE * sl.n_pieces)
        c = SolverConfig("rk4_reference", steps)
        chain_in = float(np.linalg.norm(xi - zeta, axis=1).max())
        _, zs = solve_batch(sl.controls().field(), zeta, tau, c, [tau])
        _, xs = solve_batch(fl, xi, tau, c, [tau])
        zeta, xi = zs[-1], xs[-1]
        chain_out = float(np.linalg.norm(xi - zeta, axis=1).max())
        records.append({"l": l, "K": g.width, "m": sl.m, "fit_tolerance": tol,
                        "fit_tolerance_tube_form": b[l] / (2 * tau * growth),
                        "fit_error": fit_err, "b_prev": b[l - 1], "b": b[l], "averaging_distance": avg,
                        "averaging_budget": 0.5 * b[l], "chain_in": chain_in, "chain_out": chain_out,
                        "fit_box": box.to_dict()})

    controls = MultiplexedControls(slices, T).controls()
    hL = controls.field("h_L")
    fL = sched.field()
    t2, e2 = flow_gap_curve(fL, hL, X0, T, solver)
    stage2 = StageReport("multiplex", float(e2.max()), eps / 3, details={
        "L": L, "tau": tau, "lip_f": lip, "budgets": b, "n_pieces": controls.n_pieces,
        "tube_radius": M0, "F0": F0}, slices=records, curve=(t2, e2))
    t1, e1 = flow_gap_curve(f, fL, X0, T, solver) if not f.static else (t2, np.zeros_like(t2))
    stage1 = StageReport("slice", float(e1.max()), eps / 3,
                         certified=float(sched.gap * T * math.exp(lip * T)),
                         details={"L": L, "slice_gap": sched.gap, "threshold": thr}, curve=(t1, e1))
    return controls, stage2, stage1


# --------------------------------------------------------------------------
# stage 3 and the full construction


def mollify_stage(c: NeuronControls, D: Domain, eps, solver: SolverConfig = SolverConfig(), delta=None):
    """Pick ``delta`` and smooth ``c``; returns ``(smoothed, delta, report)``.

    First tries the certified route: ``delta`` from the L1 target
    ``eps' = eps / (3 M3 e^{M4 T})``.  When that target is below what the
    halving search can reach, falls back to halving ``delta`` from ``T/4``
    until the measured flow distance is below ``eps/3``.  The report always
    carries the honest certificate ``M3 eps' e^{M4 T}`` built from the
    measured L1 gaps at the chosen ``delta``.
    """
    from .mollify import DELTA_FLOOR, choose_delta, l1_gaps, mollified_flow_error, mollify_controls, \
        stage3_report_inputs

    T = c.horizon
    probe = stage3_report_inputs(c, D, (1.0, 1.0, 1.0))
    denom = 3 * probe["M3"] * math.exp(min(probe["M4"] * T, 700.0))
    eps_theory = eps / denom if denom > 0 else math.inf     # zero controls: nothing to smooth
    mode = "given"
    if delta is None:
        try:
            if not eps_theory > 0:
                raise SearchFailure("L1 target underflows", 0.0)
            delta, cd, gaps = choose_delta(c, eps_theory)
            mode = "certified"
        except SearchFailure:
            mode = "measured"
            delta = T / 4
            while True:
                cd = mollify_controls(c, delta)
                rep = mollified_flow_error(c, cd, D, T, solver)
                if rep.measured < eps / 3 or delta < DELTA_FLOOR * T:
                    break
                delta *= 0.5
    if mode != "measured":
        cd = mollify_controls(c, delta)
        rep = mollified_flow_error(c, cd, D, T, solver)
    stage = StageReport("mollify", rep.measured, eps / 3, certified=rep.certified,
                        details=dict(rep.inputs, delta=delta, mode=mode, eps_prime_theory=eps_theory))
    return cd, delta, stage, rep


@dataclass
class Construction:
    controls_L: NeuronControls         # piecewise constant h_L
    controls: NeuronControls           # mollified h
    delta: float
    stages: list
    bound_reports: list
    total: float                       # sup_D |S_f(T) - S_h(T)|
    total_resnet: float = None         # sup_D |S_f(T) - resnet(.)|
    resnet_depth: int = None
    lp: float = None
    final_curve: tuple = None

    @property
    def passed(self):
        ok = all(s.passed for s in self.stages) and self.total < sum(s.budget for s in self.stages[:3])
        return bool(ok)


def grid_lp(err, D: Domain, p):
    vol = float(np.prod(D.upper - D.lower))
    return float((vol * np.mean(np.abs(err) ** p)) ** (1.0 / p))


def construct(f: VectorField, D: Domain, T, eps, fit: FitConfig = FitConfig(),
              sigma: Activation = Activation("tanh"), solver: SolverConfig = SolverConfig(),
              resnet_depth=256, p=2.0, L=None, delta=None):
    """Slice, fit, multiplex, mollify and (optionally) extract a ResNet; measure every stage."""
    from .resnet import extract_resnet

    cL, s2, s1 = assemble_h_L(f, D, T, eps, fit, sigma, solver, L=L)
    cd, delta, s3, rep3 = mollify_stage(cL, D, eps, solver, delta)
    X0 = D.grid()
    h = cd.field("h")
    tt, et = flow_gap_curve(f, h, X0, T, solver)
    c = SolverConfig("rk4_reference", max(solver.time_steps * 8, STEPS_PER_PIECE * (cL.n_pieces + 1)))
    _, xf = solve_batch(f, X0, T, c, [T])
    _, xh = solve_batch(h, X0, T, c, [T])
    err = np.linalg.norm(xf[-1] - xh[-1], axis=1)
    out = Construction(cL, cd, delta, [s1, s2, s3], [rep3], float(err.max()), lp=grid_lp(err, D, p),
                       final_curve=(tt, et))
    if resnet_depth:
        model = extract_resnet(cd, resnet_depth)
        out.total_resnet = float(np.linalg.norm(model(X0) - xf[-1], axis=1).max())
        out.resnet_depth = int(resnet_depth)
    return out
