import numpy as np
import pytest
from hypothesis import given, strategies as st

from odenet_uap import Activation, DimensionError, Domain, HorizonError, NeuronControls
from odenet_uap.core import PIECEWISE, SAMPLED, estimate_lipschitz, sample_times
from odenet_uap import fields


def test_domain_grid_order_and_corners():
    D = Domain([-1, 0], [1, 2], 3)
    X = D.grid()
    assert X.shape == (9, 2)
    assert np.array_equal(X[0], [-1, 0]) and np.array_equal(X[-1], [1, 2])
    assert np.array_equal(X[1], [-1, 1])          # last axis fastest
    assert D.grid_indices()[1] == (0, 1)
    assert D.max_norm == pytest.approx(np.sqrt(5))


def test_domain_rejects_bad_boxes():
    with pytest.raises(ValueError):
        Domain([1.0], [0.0])
    with pytest.raises(DimensionError):
        Domain([0.0, 0.0], [1.0])


def test_expand_and_distance():
    D = Domain.cube(2)
    E = D.expand(0.5)
    assert np.all(E.lower == -1.5)
    assert D.distance_to([[2.0, 0.0]])[0] == pytest.approx(1.0)
    assert D.contains(D.grid()).all()


@pytest.mark.parametrize("kind", ["tanh", "sigmoid", "relu", "softplus"])
def test_activation_lipschitz(kind):
    s = Activation(kind)
    z = np.linspace(-5, 5, 2001)
    slopes = np.abs(np.diff(s(z)) / np.diff(z))
    assert slopes.max() <= s.lipschitz + 1e-12


def test_truncated_power_needs_radius():
    with pytest.raises(ValueError):
        Activation("truncated_power", 2)
    a = Activation("truncated_power", 2, 3.0)
    assert a.lipschitz == 6.0
    assert Activation.from_dict(a.to_dict()) == a


def test_piecewise_right_continuous_convention():
    c = NeuronControls(np.array([[1.0], [2.0]]), np.ones((2, 1, 1)), np.zeros((2, 1)), Activation(), 1.0)
    a, _, _ = c.values_at(np.array([0.0, 0.5, 0.5000001, 1.0]))
    assert a[:, 0].tolist() == [1.0, 1.0, 2.0, 2.0]
    with pytest.raises(HorizonError):
        c.values_at(1.5)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=8), st.floats(0, 1))
def test_sampled_interpolation_stays_between_neighbours(vals, u):
    P = len(vals)
    ts = np.linspace(0, 1, P)
    c = NeuronControls(np.array(vals)[:, None], np.ones((P, 1, 1)), np.zeros((P, 1)), Activation(), 1.0,
                       SAMPLED, ts)
    a = c.values_at(u)[0][0]
    i = min(int(np.searchsorted(ts, u, side="right")) - 1, P - 2)
    lo, hi = sorted((vals[i], vals[i + 1]))
    assert lo - 1e-12 <= a <= hi + 1e-12


def test_control_times_validated():
    with pytest.raises(HorizonError):
        NeuronControls(np.ones((2, 1)), np.ones((2, 1, 1)), np.zeros((2, 1)), Activation(), 1.0,
                       PIECEWISE, np.array([0.0, 0.7, 0.6]))


def test_neuron_field_matches_formula():
    rng = np.random.default_rng(1)
    a, b, g = rng.normal(size=2), rng.normal(size=(2, 2)), rng.normal(size=2)
    c = NeuronControls.constant(a, b, g, Activation(), 1.0)
    X = rng.normal(size=(5, 2))
    assert np.allclose(c.field()(X, 0.3), a * np.tanh(X @ b.T + g))


def test_lipschitz_certificate_dominates_estimate():
    f = fields.tanh_linear([[0.5, -1.0], [2.0, 0.1]])
    est = estimate_lipschitz(f, Domain.cube(2, samples_per_axis=7))
    assert est <= f.lipschitz_x + 1e-12


def test_sample_times_include_breakpoints():
    ts = sample_times(1.0, 8, (0.3, 0.6), piecewise_constant=True)
    assert ts[0] >= 0 and ts[-1] <= 1
    assert len(ts) >= 3
