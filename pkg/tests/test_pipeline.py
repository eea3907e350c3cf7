import numpy as np
import pytest
from hypothesis import given, strategies as st

from odenet_uap import Activation, Domain, FitConfig, ShallowField, SolverConfig, fields
from odenet_uap.pipeline import (MultiplexedControls, averaging_experiment, choose_L, choose_m, compress_time,
                                 construct, loglog_slope, multiplex_slice, slice_gap, slice_time,
                                 time_average_field)


def random_shallow(K, n, seed):
    rng = np.random.default_rng(seed)
    return ShallowField(rng.normal(size=(K, n)), rng.normal(size=(K, n, n)), rng.normal(size=(K, n)),
                        Activation())


@given(st.integers(1, 6), st.integers(1, 3), st.integers(1, 5), st.integers(0, 999))
def test_multiplexed_average_is_the_shallow_sum(K, n, m, seed):
    g = random_shallow(K, n, seed)
    sl = multiplex_slice(g, 0.3, m)
    assert sl.n_pieces == K * (m if K > 1 else 1)
    X = np.random.default_rng(seed + 1).normal(size=(5, n))
    assert np.allclose(sl.time_average(X), g(X), atol=1e-12)


def test_single_term_needs_no_switching():
    g = random_shallow(1, 2, 0)
    sl = multiplex_slice(g, 1.0, 64)
    assert sl.m == 1 and sl.n_pieces == 1
    assert choose_m(g, np.zeros((1, 2)), 1.0, 1e-9) == (1, 0.0)


def test_concatenated_schedule_times():
    s1 = multiplex_slice(random_shallow(2, 1, 0), 0.5, 2)
    s2 = multiplex_slice(random_shallow(3, 1, 1), 0.5, 1)
    c = MultiplexedControls([s1, s2], 1.0).controls()
    assert c.n_pieces == 7
    assert np.allclose(c.times, [0, 0.125, 0.25, 0.375, 0.5, 0.5 + 1 / 6, 0.5 + 2 / 6, 1.0])
    assert c.times[-1] == 1.0


def test_compress_time_is_time_rescaling():
    g = fields.periodic_scalar(0.2, 1.0, 2 * np.pi)
    gm = compress_time(g, 1.0, 3)
    X = np.array([[0.4]])
    for t in (0.1, 0.25, 0.9):
        assert np.allclose(gm(X, t), g(X, (3 * t) % 1.0))


def test_time_average_of_switched_linear_fields():
    A1, A2 = np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0, 0.0], [-1.0, 0.0]])
    g = fields.switched([fields.linear(A1), fields.linear(A2)], 1.0, 1.0)
    gbar = time_average_field(g, 1.0)
    X = np.array([[1.0, 2.0]])
    assert np.allclose(gbar(X, 0.0), X @ (0.5 * (A1 + A2)).T)


def test_sign_alternation_distance_is_half_piece():
    rows = averaging_experiment(fields.sign_alternation(1.0, 1.0), [[0.0]], 1.0, [2, 8, 32])
    for m, d in rows:
        assert d == pytest.approx(1.0 / (2 * m), rel=1e-9)
    assert loglog_slope([m for m, _ in rows], [d for _, d in rows]) == pytest.approx(-1.0, abs=1e-9)


def test_static_family_has_zero_distance():
    rows = averaging_experiment(fields.neg_tanh(1), [[0.5]], 1.0, [4, 8])
    assert [d for _, d in rows] == [0.0, 0.0]


def test_slicing_time_linear_field():
    f = fields.time_linear(1, 2.0)
    sched = slice_time(f, 1.0, 4, Domain.cube(1, samples_per_axis=3))
    assert sched.gap == pytest.approx(2.0 * 0.25, rel=1e-9)
    fL = sched.field()
    assert fL(np.zeros((1, 1)), 0.1)[0, 0] == pytest.approx(0.5)          # frozen at t_1 = 0.25
    assert slice_gap(f, np.zeros((1, 1)), 1.0, 8) < sched.gap


def test_choose_L_static_and_dynamic():
    D = Domain.cube(1, samples_per_axis=3)
    assert choose_L(fields.neg_tanh(1), D, 1.0, 0.1) == 1
    L = choose_L(fields.time_linear(1, 1.0), D, 1.0, 0.3)
    assert 1.0 / L < 0.1 and 2.0 / L >= 0.1         # gap = rate * tau against eps/(3T)


def test_construct_zero_field_is_exact():
    res = construct(fields.zero(1), Domain.cube(1, samples_per_axis=5), 1.0, 0.1, resnet_depth=16)
    assert res.passed
    assert res.total == 0.0 and res.total_resnet == 0.0
    assert all(s.measured == 0.0 for s in res.stages)


def test_construct_time_varying_field():
    D = Domain.cube(1, samples_per_axis=5)
    res = construct(fields.time_linear(1, 1.0), D, 1.0, 0.6, FitConfig(8), resnet_depth=0, L=4)
    s1, s2, s3 = res.stages
    assert s1.measured == pytest.approx(0.125, rel=1e-6)       # |t - t_l| <= tau, integrated over [0, T]
    assert s2.passed and s3.passed
    assert res.total < 0.6
    assert [r["l"] for r in s2.slices] == [1, 2, 3, 4]
    budgets = [r["b"] for r in s2.slices]
    assert np.all(np.diff(budgets) > 0)
