import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from odenet_uap import Activation, ConfigError, NeuronControls, ShallowField, extract_resnet, mollify_controls
from odenet_uap import io
from odenet_uap.core import SAMPLED

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False, allow_subnormal=True)


@st.composite
def controls(draw):
    n = draw(st.integers(1, 3))
    P = draw(st.integers(1, 6))
    a = draw(arrays(float, (P, n), elements=finite))
    b = draw(arrays(float, (P, n, n), elements=finite))
    g = draw(arrays(float, (P, n), elements=finite))
    T = draw(st.floats(1e-3, 1e3))
    cuts = np.sort(draw(arrays(float, (P - 1,), elements=st.floats(0.0, 1.0), unique=True)))
    times = np.concatenate([[0.0], cuts * T, [T]])
    if np.any(np.diff(times) <= 0):
        times = np.linspace(0, T, P + 1)
        times[-1] = T
    kind = draw(st.sampled_from(["tanh", "relu", "sigmoid"]))
    return NeuronControls(a, b, g, Activation(kind), T, times=times)


@given(c=controls())
def test_control_files_round_trip_bit_exactly(c, tmp_path_factory):
    d = tmp_path_factory.mktemp("rt")
    first = io.write_controls(d / "a.json", c)
    back = io.read_controls(d / "a.json")
    second = io.write_controls(d / "b.json", back)
    assert first == second
    assert (d / "a.json").read_bytes() == (d / "b.json").read_bytes()
    for name in ("alpha", "beta", "gamma", "times"):
        assert np.array_equal(getattr(back, name), getattr(c, name))
    assert back.sigma == c.sigma and back.horizon == c.horizon


def test_sampled_controls_round_trip(tmp_path):
    c = NeuronControls.constant([1.0, -2.0], np.eye(2), [0.1, 0.2], Activation(), 1.0)
    cd = mollify_controls(c, 0.1)
    io.write_controls(tmp_path / "c.json", cd)
    back = io.read_controls(tmp_path / "c.json")
    assert back.representation == SAMPLED
    assert io.dumps(io.controls_to_dict(back)) == (tmp_path / "c.json").read_text()
    d = json.loads((tmp_path / "c.json").read_text())
    assert d["representation"] == "sampled_continuous" and len(d["beta"]) == cd.n_pieces * 4


def test_layer_table_round_trip(tmp_path):
    c = mollify_controls(NeuronControls.constant([1.0], [[2.0]], [0.5], Activation(), 1.0), 0.2)
    m = extract_resnet(c, 8)
    io.write_resnet(tmp_path / "r.json", m)
    back = io.read_resnet(tmp_path / "r.json")
    assert np.array_equal(back(np.array([[0.3]])), m(np.array([[0.3]])))
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["depth"] == 8 and d["activation"] == {"kind": "tanh"} and len(d["layers"]) == 8


def test_shallow_round_trip():
    rng = np.random.default_rng(0)
    g = ShallowField(rng.normal(size=(3, 2)), rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2)), Activation())
    back = io.shallow_from_dict(json.loads(io.dumps(io.shallow_to_dict(g))))
    assert np.array_equal(back.beta, g.beta)


def test_wrong_format_rejected():
    with pytest.raises(ConfigError):
        io.controls_from_dict({"format": "other"})


def test_schema_rejects_missing_fields():
    with pytest.raises(jsonschema.ValidationError):
        io.validate_report({"schema_version": "1.0"})


def test_csv_format(tmp_path):
    io.write_curves(tmp_path / "s.csv", {"a": ([0.0, 0.5], [1e-20, 0.25])})
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines == ["stage,t,error", "a,0.0,1e-20", "a,0.5,0.25"]
