import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from odenet_uap import Activation, Domain, HorizonError, NeuronControls, SearchFailure
from odenet_uap.core import SAMPLED
from odenet_uap.mollify import (Mollifier, bump, bump_cdf, choose_delta, convolve_steps, l1_gaps,
                                mollified_flow_error, mollify_controls, sample_grid)


def step_controls(values=(1.0, -1.0), cuts=(0.5,), T=1.0):
    P = len(values)
    a = np.array(values, dtype=float)[:, None]
    return NeuronControls(a, np.ones((P, 1, 1)), np.zeros((P, 1)), Activation(), T,
                          times=np.array([0.0, *cuts, T]))


def test_bump_has_unit_mass_and_support():
    mass, _ = quad(lambda s: float(bump(np.array(s))), -1, 1, epsabs=1e-13)
    assert mass == pytest.approx(1.0, abs=1e-12)
    assert bump(np.array([-1.0, 1.0, 1.5])).tolist() == [0.0, 0.0, 0.0]


def test_cdf_endpoints_exact():
    assert bump_cdf(np.array([-1.0, 0.0, 1.0])).tolist() == [0.0, 0.5, 1.0]


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_cdf_monotone_and_symmetric(u, v):
    lo, hi = sorted((u, v))
    assert bump_cdf(lo) <= bump_cdf(hi)
    assert bump_cdf(u) + bump_cdf(-u) == pytest.approx(1.0, abs=1e-15)


def test_cdf_against_adaptive_quadrature():
    for u in (-0.7, -0.2, 0.3, 0.9):
        ref, _ = quad(lambda s: float(bump(np.array(s))), -1, u, epsabs=1e-13)
        assert float(bump_cdf(u)) == pytest.approx(ref, abs=1e-10)


def test_kernel_scaling():
    m = Mollifier(0.1)
    mass, _ = quad(lambda t: float(m.kernel(np.array(t))), -0.1, 0.1)
    assert mass == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        Mollifier(0.0)


def test_step_convolution_values():
    c = step_controls()
    s = np.array([0.2, 0.5, 0.8])
    out = convolve_steps(c.times, c.alpha, s, 0.1)[:, 0]
    assert out.tolist() == [1.0, 0.0, -1.0]       # exact away from jumps, mean at the jump


def test_sample_grid_resolves_jumps():
    g = sample_grid(np.array([0.0, 0.5, 1.0]), 0.08, 1.0)
    near = g[np.abs(g - 0.5) <= 0.08]
    assert np.diff(near).max() <= 0.01 + 1e-15
    assert g[0] == 0.0 and g[-1] == 1.0


def test_mollified_controls_are_continuous_and_bounded():
    c = step_controls((2.0, -1.0, 0.5), (0.3, 0.6))
    cd = mollify_controls(c, 0.05)
    assert cd.representation == SAMPLED
    assert cd.alpha_sup <= c.alpha_sup + 1e-12
    a = cd.values_at(np.linspace(0, 1, 4001))[0][:, 0]
    assert np.abs(np.diff(a)).max() < 0.05
    assert cd.values_at(0.0)[0][0] == 1.0      # zero extension: half the first value at t = 0


def test_mollify_rejects_bad_inputs():
    c = step_controls()
    with pytest.raises(HorizonError):
        mollify_controls(c, 2.0)
    with pytest.raises(ValueError):
        mollify_controls(mollify_controls(c, 0.1), 0.1)


@pytest.mark.parametrize("cuts", [(0.5,), (0.3, 0.7)])
def test_l1_gaps_halve_with_delta(cuts):
    vals = (1.0, -1.0) if len(cuts) == 1 else (1.0, -1.0, 0.5)
    c = step_controls(vals, cuts)
    gaps = [l1_gaps(c, mollify_controls(c, 2.0 ** -k))[0] for k in range(3, 8)]
    ratios = np.array(gaps[1:]) / np.array(gaps[:-1])
    assert np.allclose(ratios, 0.5, atol=1e-6)


def test_choose_delta_meets_target():
    c = step_controls()
    delta, cd, gaps = choose_delta(c, 1e-3)
    assert max(gaps) < 1e-3
    assert l1_gaps(c, mollify_controls(c, 2 * delta))[0] >= 1e-3
    with pytest.raises(SearchFailure):
        choose_delta(c, 1e-14)


def test_flow_error_under_certificate():
    c = step_controls((1.0, -2.0), (0.4,))
    cd = mollify_controls(c, 0.05)
    r = mollified_flow_error(c, cd, Domain.cube(1, samples_per_axis=9))
    assert r.holds() and r.measured > 0
