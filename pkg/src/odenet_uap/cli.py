"""Command-line runner: YAML config in, controls / layer table / report / CSV out.

Every output is a function of the config and the seed.  Reports carry a
timestamp in ``provenance`` which is the only field allowed to differ
between identical runs.
"""
from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.linalg import expm

from . import __version__, fields, io
from ._accel import backend_name
from .bounds import certificate_corpus
from .core import Activation, Domain, NeuronControls, VectorField
from .errors import ConfigError, StageFailure, UAPError
from .pipeline import averaging_experiment, construct, loglog_slope
from .resnet import depth_convergence_study, extract_resnet, is_nonincreasing
from .shallow import FitConfig
from .solver import SolverConfig, solve_batch

log = logging.getLogger("odenet_uap")

DEFAULT_M_LIST = (4, 8, 16, 32, 64, 128, 256)
DEFAULT_DEPTHS = (32, 64, 128, 256)


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    target: dict = field(default_factory=lambda: {"field": "neg_tanh", "params": {"n": 1}})
    domain: Domain = field(default_factory=lambda: Domain.cube(1, -1.0, 1.0, 21))
    horizon: float = 1.0
    epsilon: float = 0.3
    activation: Activation = field(default_factory=Activation)
    fit: FitConfig = field(default_factory=lambda: FitConfig(64, 2.0, 1e-6))
    solver: SolverConfig = field(default_factory=SolverConfig)
    slices: int = None            # L override; None searches
    delta: float = None           # mollifier width override
    resnet: dict = field(default_factory=lambda: {"depth": 256, "depths": list(DEFAULT_DEPTHS)})
    lp: float = 2.0
    averaging: dict = field(default_factory=lambda: {"family": "sign_alternation",
                                                     "m_list": list(DEFAULT_M_LIST), "tau": 1.0,
                                                     "bound": 1e-2})
    counterexample: dict = field(default_factory=lambda: {"samples": 1000, "scale": 3.0,
                                                          "pipeline_rates": [1.0]})
    verify: dict = field(default_factory=lambda: {"cases": 50})
    output_dir: str = "out"
    seed: int = 0
    workers: int = 1
    base_dir: str = field(default=".", repr=False)

    def to_dict(self):
        """Everything that can change results (output location and worker count excluded)."""
        return {
            "target": self.target,
            "domain": self.domain.to_dict(),
            "horizon": self.horizon,
            "epsilon": self.epsilon,
            "activation": self.activation.to_dict(),
            "fit": self.fit.to_dict(),
            "solver": self.solver.to_dict(),
            "slices": self.slices,
            "delta": self.delta,
            "resnet": self.resnet,
            "lp": self.lp,
            "averaging": self.averaging,
            "counterexample": self.counterexample,
            "verify": self.verify,
            "seed": self.seed,
        }

    def build_target(self) -> VectorField:
        if "controls" in self.target:
            return io.read_controls(self._path(self.target["controls"])).field("target")
        return fields.build(self.target["field"], self.target.get("params"))

    def _path(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p


_TOP_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"base_dir"}
_SUB_KEYS = {
    "resnet": {"depth", "depths"},
    "averaging": {"family", "m_list", "tau", "bound"},
    "counterexample": {"samples", "scale", "pipeline_rates"},
    "verify": {"cases"},
}


def _sub(cls, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"{name} must be a mapping")
    allowed = {f.name for f in dataclasses.fields(cls)}
    bad = set(d) - allowed
    if bad:
        raise ConfigError(f"unknown {name} keys: {sorted(bad)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {name}: {exc}") from exc


def config_from_dict(raw, base_dir=".", seed=None, out=None, workers=None) -> RunConfig:
    raw = dict(raw or {})
    bad = set(raw) - _TOP_KEYS
    if bad:
        raise ConfigError(f"unknown config keys: {sorted(bad)}")
    cfg = RunConfig(base_dir=str(base_dir))
    for k in ("horizon", "epsilon", "lp"):
        if k in raw:
            setattr(cfg, k, float(raw[k]))
    for k in ("seed", "workers"):
        if k in raw:
            setattr(cfg, k, int(raw[k]))
    for k in ("slices",):
        if raw.get(k) is not None:
            cfg.slices = int(raw[k])
    if raw.get("delta") is not None:
        cfg.delta = float(raw["delta"])
    if "output_dir" in raw:
        cfg.output_dir = str(raw["output_dir"])
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.output_dir = str(out)
    if workers is not None:
        cfg.workers = int(workers)
    if "target" in raw:
        t = raw["target"]
        if not isinstance(t, dict) or (("field" in t) == ("controls" in t)):
            raise ConfigError("target needs exactly one of 'field' or 'controls'")
        if set(t) - {"field", "params", "controls"}:
            raise ConfigError(f"unknown target keys: {sorted(set(t) - {'field', 'params', 'controls'})}")
        cfg.target = dict(t)
    if "domain" in raw:
        d = raw["domain"]
        try:
            cfg.domain = Domain(d["lower"], d["upper"], int(d.get("samples_per_axis", 11)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad domain: {exc}") from exc
    if "activation" in raw:
        try:
            cfg.activation = Activation.from_dict(raw["activation"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad activation: {exc}") from exc
    fit = dict(raw.get("fit") or {})
    fit.setdefault("seed", cfg.seed)
    base = cfg.fit.to_dict()
    base.update(fit)
    cfg.fit = _sub(FitConfig, base, "fit")
    if "solver" in raw:
        cfg.solver = _sub(SolverConfig, raw["solver"], "solver")
    for k, allowed in _SUB_KEYS.items():
        if k in raw:
            v = raw[k]
            if not isinstance(v, dict) or set(v) - allowed:
                raise ConfigError(f"{k} accepts only {sorted(allowed)}")
            getattr(cfg, k).update(v)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if not cfg.epsilon > 0:
        raise ConfigError("epsilon must be > 0")
    if not cfg.horizon > 0:
        raise ConfigError("horizon must be > 0")
    if not cfg.lp >= 1:
        raise ConfigError("lp must be >= 1")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    if "controls" in cfg.target and not cfg._path(cfg.target["controls"]).is_file():
        raise ConfigError(f"control file {cfg.target['controls']} not found")
    if "field" in cfg.target and cfg.target["field"] not in fields.BUILTINS:
        raise ConfigError(f"unknown built-in field {cfg.target['field']!r}")
    if cfg.delta is not None and not 0 < cfg.delta <= cfg.horizon:
        raise ConfigError("delta must lie in (0, horizon]")
    if cfg.slices is not None and cfg.slices < 1:
        raise ConfigError("slices must be >= 1")


def load_config(path=None, seed=None, out=None, workers=None) -> RunConfig:
    if path is None:
        return config_from_dict({}, ".", seed, out, workers)
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(raw, path.parent, seed, out, workers)


# --------------------------------------------------------------------------
# report assembly


def _clean(v):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def new_report(command, cfg: RunConfig):
    conf = _clean(cfg.to_dict())
    return {
        "schema_version": io.REPORT_SCHEMA_VERSION,
        "command": command,
        "success": False,
        "config": conf,
        "provenance": {"config_hash": io.config_hash(conf), "seed": int(cfg.seed), "backend": backend_name(),
                       "package_version": __version__,
                       "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")},
        "stages": [],
        "total_measured": {"flow": None, "resnet": None, "resnet_depth": None, "budget": None},
        "l_p_measured": None,
        "bound_reports": [],
        "failure": None,
        "extra": {},
    }


def _finish(report, out_dir, name="report.json"):
    report = _clean(report)
    io.write_report(Path(out_dir) / name, report)
    return report


# --------------------------------------------------------------------------
# runners


def run_pipeline(cfg: RunConfig):
    """Full construction; writes controls, layer table, report and stage curves."""
    out = Path(cfg.output_dir)
    report = new_report("fit", cfg)
    report["total_measured"]["budget"] = cfg.epsilon
    f = cfg.build_target()
    if f.dimension != cfg.domain.dimension:
        raise ConfigError(f"target dimension {f.dimension} != domain dimension {cfg.domain.dimension}")
    depth = int(cfg.resnet.get("depth") or 0)
    try:
        res = construct(f, cfg.domain, cfg.horizon, cfg.epsilon, cfg.fit, cfg.activation, cfg.solver,
                        resnet_depth=depth, p=cfg.lp, L=cfg.slices, delta=cfg.delta)
    except StageFailure as exc:
        report["failure"] = {"stage": exc.stage, "message": str(exc), "slice_index": exc.slice_index,
                             "achieved": exc.achieved, "required": exc.required}
        return _finish(report, out)

    report["stages"] = [s.to_dict() for s in res.stages]
    report["bound_reports"] = [r.to_dict() for r in res.bound_reports]
    report["total_measured"].update(flow=res.total, resnet=res.total_resnet, resnet_depth=res.resnet_depth)
    report["l_p_measured"] = {"p": cfg.lp, "value": res.lp}
    report["extra"] = {"delta": res.delta, "n_pieces": res.controls_L.n_pieces,
                       "n_samples": res.controls.n_pieces}
    ok = res.passed
    if res.total_resnet is not None:
        ok = ok and res.total_resnet < cfg.epsilon
    report["success"] = bool(ok)

    io.write_controls(out / "controls_piecewise.json", res.controls_L)
    io.write_controls(out / "controls.json", res.controls)
    if depth:
        io.write_resnet(out / "resnet.json", extract_resnet(res.controls, depth))
    curves = {s.name: s.curve for s in res.stages if s.curve is not None}
    curves["total"] = res.final_curve
    io.write_curves(out / "stages.csv", curves)
    return _finish(report, out)


def run_simulate(cfg: RunConfig, n_record=64):
    """Flow of the target from every grid point; trajectories to CSV."""
    out = Path(cfg.output_dir)
    report = new_report("simulate", cfg)
    f = cfg.build_target()
    X0 = cfg.domain.grid()
    rec = np.linspace(0.0, cfg.horizon, n_record + 1)
    times, states = solve_batch(f, X0, cfg.horizon, cfg.solver, rec)
    n = f.dimension
    rows = []
    for b in range(len(X0)):
        for k, t in enumerate(times):
            rows.append([b, float(t)] + [float(x) for x in states[k, b]])
    io.write_rows(out / "trajectories.csv", ["point", "t"] + [f"x{i}" for i in range(n)], rows)
    disp = np.linalg.norm(states - X0, axis=2).max()
    report["extra"] = {"points": len(X0), "max_displacement": float(disp)}
    report["success"] = True
    return _finish(report, out)


def _two_field_family(horizon):
    A1 = np.array([[-1.0, 2.0], [0.0, -0.5]])
    A2 = np.array([[-0.5, 0.0], [-2.0, -1.0]])
    g = fields.switched([fields.linear(A1), fields.linear(A2)], 1.0, horizon, name="two_field")
    Abar = 0.5 * (A1 + A2)

    def oracle(times, X0):
        return np.stack([X0 @ expm(t * Abar).T for t in times])

    return g, np.array([[1.0, 0.5]]), oracle


def averaging_family(name, tau=1.0):
    """``(g, xi, oracle)`` for a named periodic family on ``[0, tau]``."""
    if name == "constant":
        return fields.neg_tanh(1), np.array([[0.5]]), None
    if name == "sign_alternation":
        return fields.sign_alternation(tau, tau), np.array([[0.0]]), None
    if name == "two_field":
        if tau != 1.0:
            raise ConfigError("two_field uses tau = 1")
        return _two_field_family(tau)
    raise ConfigError(f"unknown averaging family {name!r}; use constant, sign_alternation or two_field")


def run_averaging(field_family, m_list, out, tau=1.0, workers=1, bound=None):
    """``[(m, distance)]`` rows to ``out`` (CSV) plus the log-log slope."""
    g, xi, oracle = averaging_family(field_family, tau)
    rows = averaging_experiment(g, xi, tau, m_list, workers=workers, oracle=oracle)
    ms = [m for m, _ in rows]
    ds = [d for _, d in rows]
    io.write_rows(out, ["m", "distance"], [(m, float(d)) for m, d in rows])
    slope = loglog_slope(ms, ds)
    ratios = [b / a if a > 0 else 0.0 for a, b in zip(ds, ds[1:])]
    return {"family": field_family, "m": ms, "distance": ds, "slope": slope, "halving_ratios": ratios,
            "bound": bound, "within_bound": bound is None or ds[-1] < bound}


def _average_command(cfg: RunConfig):
    a = cfg.averaging
    out = Path(cfg.output_dir)
    report = new_report("average", cfg)
    res = run_averaging(a["family"], a["m_list"], out / "averaging.csv", float(a.get("tau", 1.0)),
                        cfg.workers, a.get("bound"))
    report["stages"] = [{"name": "averaging", "measured": res["distance"][-1], "certified": None,
                         "budget": res["bound"], "passed": bool(res["within_bound"]), "details": {}}]
    report["extra"] = res
    report["success"] = bool(res["within_bound"])
    return _finish(report, out)


def run_resnet(cfg: RunConfig, controls_path=None):
    """Depth study of a sampled control file."""
    out = Path(cfg.output_dir)
    report = new_report("resnet", cfg)
    path = controls_path or cfg.target.get("controls")
    if path is None:
        raise ConfigError("resnet needs a control-schedule file (--controls or target.controls)")
    c = io.read_controls(cfg._path(path) if controls_path is None else path)
    if c.is_piecewise:
        raise ConfigError("resnet needs sampled_continuous controls; mollify first (the fit command writes them)")
    depths = [int(L) for L in cfg.resnet.get("depths", DEFAULT_DEPTHS)]
    results = depth_convergence_study(c, cfg.domain, depths)
    rows = [r.to_dict() for r in results]
    io.write_rows(out / "resnet_depths.csv", ["L", "error", "omega", "envelope"],
                  [(r.L, r.error, r.omega, r.envelope) for r in results])
    io.write_resnet(out / "resnet.json", extract_resnet(c, depths[-1]))
    errs = [r.error for r in results]
    within = all(d["within_envelope"] for d in rows)
    report["stages"] = [{"name": f"resnet_L{r.L}", "measured": r.error, "certified": r.envelope,
                         "budget": None, "passed": d["within_envelope"], "details": d}
                        for r, d in zip(results, rows)]
    report["extra"] = {"depths": depths, "errors": errs, "nonincreasing": is_nonincreasing(errs)}
    report["success"] = bool(within and is_nonincreasing(errs))
    return _finish(report, out)


def run_verify(cfg: RunConfig):
    out = Path(cfg.output_dir)
    report = new_report("verify", cfg)
    reps = certificate_corpus(int(cfg.verify.get("cases", 50)), cfg.seed)
    report["bound_reports"] = [r.to_dict() for r in reps]
    report["success"] = all(r.holds() for r in reps)
    return _finish(report, out)


def _reflection_error(xT, X0):
    return float(np.abs(xT + X0).max())


def _crossing_gap(states, i_minus, i_plus):
    return float((states[:, i_plus, 0] - states[:, i_minus, 0]).min())


def run_counterexample(T=1.0, cfg: RunConfig = None):
    """Try to realise ``xi -> -xi`` on ``[-1, 1]`` by flows; report the best error and crossing gaps."""
    cfg = cfg or RunConfig()
    ce = cfg.counterexample
    D = Domain.cube(1, -1.0, 1.0, 21)
    X0 = D.grid()
    i_minus, i_plus = 0, len(X0) - 1
    rec = np.linspace(0.0, T, 257)
    solver = SolverConfig("rk4_reference", 256)
    runs = []

    # (a) pipeline aimed at the best monotone stand-in: contraction toward 0
    for rate in ce.get("pipeline_rates", [1.0]):
        f = fields.neg_tanh(1, float(rate))
        try:
            res = construct(f, D, T, cfg.epsilon, cfg.fit, cfg.activation, cfg.solver, resnet_depth=0)
        except StageFailure as exc:
            runs.append({"source": "pipeline", "rate": float(rate), "failed_stage": exc.stage})
            continue
        _, st = solve_batch(res.controls.field(), X0, T, solver, rec)
        runs.append({"source": "pipeline", "rate": float(rate), "error": _reflection_error(st[-1, :, 0], X0[:, 0]),
                     "min_gap": _crossing_gap(st, i_minus, i_plus)})

    # (b) random constant single-neuron controls
    rng = np.random.default_rng([cfg.seed, 3])
    s = float(ce.get("scale", 3.0))
    params = rng.uniform(-s, s, size=(int(ce.get("samples", 1000)), 3))

    def one(p):
        c = NeuronControls.constant([p[0]], [[p[1]]], [p[2]], cfg.activation, T)
        _, st = solve_batch(c.field(), X0, T, solver, rec)
        return _reflection_error(st[-1, :, 0], X0[:, 0]), _crossing_gap(st, i_minus, i_plus)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            search = list(pool.map(one, params))
    else:
        search = [one(p) for p in params]
    errs = np.array([e for e, _ in search])
    gaps = np.array([g for _, g in search])
    k = int(np.argmin(errs))
    done = [r for r in runs if "error" in r]
    best = min([r["error"] for r in done] + [float(errs.min())])
    min_gap = min([r["min_gap"] for r in done] + [float(gaps.min())])
    return {
        "best_error": best,
        "min_gap": min_gap,
        "non_crossing": bool(min_gap > 0),
        "pipeline_runs": runs,
        "search": {"samples": len(params), "best_error": float(errs[k]), "best_controls": params[k].tolist(),
                   "min_gap": float(gaps.min()), "median_error": float(np.median(errs))},
        "threshold": 0.9,
        "success": bool(best >= 0.9 and min_gap > 0),
    }


def _counterexample_command(cfg: RunConfig):
    out = Path(cfg.output_dir)
    report = new_report("counterexample", cfg)
    res = run_counterexample(cfg.horizon, cfg)
    report["stages"] = [{"name": "reflection", "measured": res["best_error"], "certified": None,
                         "budget": None, "passed": res["success"], "details": {"min_gap": res["min_gap"]}}]
    report["extra"] = res
    report["success"] = res["success"]
    return _finish(report, out)


# --------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="odenet-uap", description="Constructive neuron-control flows and ResNets.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in [("fit", "run the full construction"), ("simulate", "integrate the target field"),
                        ("average", "fast-switching averaging experiment"),
                        ("resnet", "depth study of a sampled control file"),
                        ("verify", "check every certificate on a random corpus"),
                        ("counterexample", "attempt the reflection map xi -> -xi")]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="YAML run configuration")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--workers", type=int, help="thread pool size")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "resnet":
            s.add_argument("--controls", help="sampled control-schedule JSON")
        if name == "average":
            s.add_argument("--family", help="constant | sign_alternation | two_field")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, args.seed, args.out, args.workers)
        if args.command == "average" and args.family:
            cfg.averaging["family"] = args.family
        if args.command == "fit":
            report = run_pipeline(cfg)
        elif args.command == "simulate":
            report = run_simulate(cfg)
        elif args.command == "average":
            report = _average_command(cfg)
        elif args.command == "resnet":
            report = run_resnet(cfg, args.controls)
        elif args.command == "verify":
            report = run_verify(cfg)
        else:
            report = _counterexample_command(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except UAPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    status = "budgets met" if report["success"] else "budgets NOT met"
    print(f"{args.command}: {status} -> {Path(cfg.output_dir) / 'report.json'}")
    return 0 if report["success"] else 1


if __name__ == "__main__":
    sys.exit(main())
