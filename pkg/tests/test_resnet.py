import numpy as np
import pytest

from odenet_uap import (Activation, DivergenceError, Domain, NeuronControls, PreconditionError, SolverConfig,
                        depth_convergence_study, extract_resnet, mollify_controls, solve_batch)
from odenet_uap.core import SAMPLED
from odenet_uap.resnet import ResNetModel, envelope, forward, is_nonincreasing


def smooth_controls(n=2, P=65, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, P)
    w = rng.normal(size=(3, n))
    a = np.cos(np.outer(t, w[0]) * 3)
    g = np.sin(np.outer(t, w[1]) * 2)
    b = np.stack([np.eye(n) * (1 + 0.5 * np.sin(2 * s)) for s in t])
    return NeuronControls(a, b, g, Activation(), 1.0, SAMPLED, t)


def test_resnet_equals_euler_solve_bitwise():
    c = smooth_controls()
    X0 = Domain.cube(2, samples_per_axis=4).grid()
    for L in (7, 32):
        model = extract_resnet(c, L)
        _, ref = solve_batch(c.field(), X0, 1.0, SolverConfig("euler", L, align_kinks=False))
        assert np.array_equal(model(X0), ref[-1])


def test_forward_single_input():
    model = extract_resnet(smooth_controls(), 16)
    x, states = forward(model, [0.1, -0.2])
    assert len(states) == 17
    assert np.array_equal(x, states[-1])
    assert np.array_equal(states[0], [0.1, -0.2])


def test_piecewise_controls_rejected():
    c = NeuronControls.constant([1.0], [[1.0]], [0.0], Activation(), 1.0)
    with pytest.raises(PreconditionError):
        extract_resnet(c, 8)
    cd = mollify_controls(c, 0.1)
    assert extract_resnet(cd, 8).depth == 8


def test_divergence_names_layer():
    L = 4
    m = ResNetModel(np.full((L, 1), 1e7), np.ones((L, 1, 1)), np.zeros((L, 1)), Activation("relu"), 1.0, 4.0)
    with pytest.raises(DivergenceError) as exc:
        m(np.array([[1.0]]))
    assert exc.value.index is not None


def test_depth_study_converges_within_envelope():
    c = smooth_controls(seed=3)
    res = depth_convergence_study(c, Domain.cube(2, samples_per_axis=3), [8, 16, 32, 64])
    errs = [r.error for r in res]
    assert is_nonincreasing(errs, rtol=0.0)
    assert errs[-1] < errs[0] / 4                  # first order in 1/L
    assert all(r.error <= r.envelope for r in res)


def test_envelope_zero_constant():
    assert envelope(0.0, 2.0, 10, 0.1) == pytest.approx(0.2)
    assert envelope(1.0, 1.0, 10, 0.1) == pytest.approx(np.e * 0.1)
