"""File formats: control schedules, ResNet layer tables, error reports, CSV curves.

JSON floats are written with ``repr`` (shortest round-trip form), keys are
sorted and separators fixed, so write -> read -> write reproduces the bytes.
"""
from __future__ import annotations

import csv
import hashlib
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .core import PIECEWISE, SAMPLED, Activation, NeuronControls
from .errors import ConfigError
from .shallow import ShallowField

SCHEDULE_FORMAT = "odenet_uap.control_schedule"
LAYERS_FORMAT = "odenet_uap.resnet_layers"
REPORT_SCHEMA_VERSION = "1.0"


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1, separators=(",", ": "), allow_nan=False) + "\n"


def _write(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = dumps(obj)
    path.write_text(data, encoding="utf-8")
    return data


def _read(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _flat(a):
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


# --------------------------------------------------------------------------
# control schedules


def controls_to_dict(c: NeuronControls):
    P, n = c.alpha.shape
    return {
        "format": SCHEDULE_FORMAT,
        "version": 1,
        "representation": c.representation,
        "horizon": float(c.horizon),
        "dimension": n,
        "count": P,
        "activation": c.sigma.to_dict(),
        "times": _flat(c.times),
        "alpha": _flat(c.alpha),
        "beta": _flat(c.beta),
        "gamma": _flat(c.gamma),
    }


def controls_from_dict(d) -> NeuronControls:
    if d.get("format") != SCHEDULE_FORMAT:
        raise ConfigError("not a control-schedule document")
    rep = d["representation"]
    if rep not in (PIECEWISE, SAMPLED):
        raise ConfigError(f"unknown representation {rep!r}")
    n, P = int(d["dimension"]), int(d["count"])
    return NeuronControls(
        np.array(d["alpha"], dtype=float).reshape(P, n),
        np.array(d["beta"], dtype=float).reshape(P, n, n),
        np.array(d["gamma"], dtype=float).reshape(P, n),
        Activation.from_dict(d["activation"]),
        float(d["horizon"]),
        rep,
        np.array(d["times"], dtype=float),
    )


def write_controls(path, c: NeuronControls):
    return _write(path, controls_to_dict(c))


def read_controls(path) -> NeuronControls:
    return controls_from_dict(_read(path))


def shallow_to_dict(g: ShallowField):
    K, n = g.alpha.shape
    return {
        "format": SCHEDULE_FORMAT,
        "version": 1,
        "representation": "shallow_sum",
        "dimension": n,
        "count": K,
        "activation": g.sigma.to_dict(),
        "alpha": _flat(g.alpha),
        "beta": _flat(g.beta),
        "gamma": _flat(g.gamma),
    }


def shallow_from_dict(d) -> ShallowField:
    if d.get("representation") != "shallow_sum":
        raise ConfigError("not a shallow-sum document")
    n, K = int(d["dimension"]), int(d["count"])
    return ShallowField(np.array(d["alpha"]).reshape(K, n), np.array(d["beta"]).reshape(K, n, n),
                        np.array(d["gamma"]).reshape(K, n), Activation.from_dict(d["activation"]))


# --------------------------------------------------------------------------
# ResNet layer table


def resnet_to_dict(model):
    return {
        "format": LAYERS_FORMAT,
        "version": 1,
        "depth": model.depth,
        "dimension": model.dimension,
        "step": float(model.step),
        "horizon": float(model.horizon),
        "activation": model.sigma.to_dict(),
        "layers": [{"alpha": _flat(a), "beta": np.asarray(b, dtype=float).tolist(), "gamma": _flat(g)}
                   for a, b, g in zip(model.alpha, model.beta, model.gamma)],
    }


def resnet_from_dict(d):
    from .resnet import ResNetModel

    if d.get("format") != LAYERS_FORMAT:
        raise ConfigError("not a layer-table document")
    layers = d["layers"]
    return ResNetModel(np.array([l["alpha"] for l in layers], dtype=float),
                       np.array([l["beta"] for l in layers], dtype=float),
                       np.array([l["gamma"] for l in layers], dtype=float),
                       Activation.from_dict(d["activation"]), float(d["step"]), float(d["horizon"]))


def write_resnet(path, model):
    return _write(path, resnet_to_dict(model))


def read_resnet(path):
    return resnet_from_dict(_read(path))


# --------------------------------------------------------------------------
# reports


def report_schema():
    text = resources.files("odenet_uap").joinpath("report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_report(report):
    import jsonschema

    jsonschema.validate(report, report_schema())


def write_report(path, report):
    validate_report(report)
    return _write(path, report)


def read_report(path):
    return _read(path)


def config_hash(cfg_dict):
    return hashlib.sha256(dumps(cfg_dict).encode("utf-8")).hexdigest()


def strip_volatile(report):
    """Copy of a report without timestamp fields (for determinism checks)."""
    out = json.loads(json.dumps(report))
    out.get("provenance", {}).pop("timestamp", None)
    return out


def write_curves(path, curves):
    """CSV rows ``stage,t,error`` for ``{stage: (t, err)}``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "t", "error"])
        for name, (t, e) in curves.items():
            for a, b in zip(t, e):
                w.writerow([name, repr(float(a)), repr(float(b))])


def write_rows(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])
