import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.linalg import expm

from odenet_uap import (Activation, DimensionError, DivergenceError, Domain, NeuronControls, SolverConfig,
                        VectorField, fields, solve_batch, solve_flow)
from odenet_uap import kernels
from odenet_uap.solver import flow_on_domain, picard_gap_bound, picard_iterates, solve_points, time_grid

A2 = np.array([[-0.3, 1.0], [-1.0, -0.2]])


def linear_err(method, steps):
    f = fields.linear(A2)
    xi = np.array([1.0, -0.5])
    tr = solve_flow(f, xi, 1.0, SolverConfig(method, steps))
    return np.linalg.norm(tr.states[-1] - expm(A2) @ xi)


def test_rk4_matches_matrix_exponential():
    assert linear_err("rk4_reference", 256) < 1e-10


@pytest.mark.parametrize("method,order", [("euler", 1), ("rk4_reference", 4)])
def test_convergence_order(method, order):
    e1, e2 = linear_err(method, 32), linear_err(method, 64)
    assert math.log2(e1 / e2) == pytest.approx(order, abs=0.15)


def test_time_grid_hits_nodes():
    grid, dts = time_grid(1.0, 10, [0.33, 0.5])
    assert 0.33 in grid and 0.5 in grid
    assert grid[-1] == 1.0 and np.all(dts > 0)
    assert np.allclose(np.cumsum(dts), grid[1:])
    g2, _ = time_grid(2.0, 8)
    assert np.array_equal(g2, np.arange(9) * 0.25)


@given(st.integers(2, 40), st.floats(0.1, 3.0))
def test_piecewise_constant_fields_integrate_exactly(m, amp):
    # x' = +-amp switched: RK4 on aligned steps is exact for a piecewise-linear solution
    g = fields.sign_alternation(1.0 / m, 1.0, amp)
    _, states = solve_batch(g, [[0.0]], 1.0, SolverConfig("rk4_reference", 4), [1.0])
    assert abs(states[-1, 0, 0]) < 1e-12 * max(1, m)


def test_record_times_are_hit_exactly():
    f = fields.neg_tanh(1)
    rec = [0.1, 0.37, 1.0]
    times, states = solve_batch(f, [[1.0]], 1.0, SolverConfig(), rec)
    assert times.tolist() == [0.0] + rec
    assert states.shape == (4, 1, 1)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        solve_batch(fields.zero(2), [[1.0]], 1.0)


def test_blowup_raises_divergence():
    f = VectorField(1, lambda X, t: X ** 2, 1e6, static=True)
    with pytest.raises(DivergenceError) as exc:
        solve_flow(f, [1.0], 2.0, SolverConfig("rk4_reference", 4000))
    assert 0.99 < exc.value.time < 1.01


def test_neuron_kernel_matches_generic_path():
    rng = np.random.default_rng(3)
    P = 5
    c = NeuronControls(rng.normal(size=(P, 2)), rng.normal(size=(P, 2, 2)), rng.normal(size=(P, 2)),
                       Activation(), 1.0)
    fk = c.field()
    fg = VectorField(2, fk.func, fk.lipschitz_x, breakpoints=fk.breakpoints, piecewise_constant=True)
    X0 = rng.uniform(-1, 1, size=(7, 2))
    for method in ("euler", "rk4_reference"):
        _, a = solve_batch(fk, X0, 1.0, SolverConfig(method, 64))
        _, b = solve_batch(fg, X0, 1.0, SolverConfig(method, 64))
        assert np.abs(a - b).max() < 1e-13


@pytest.mark.parametrize("code", [0, 1, 2, 3])
def test_numba_and_numpy_kernels_agree(code):
    rng = np.random.default_rng(code)
    X0 = rng.uniform(-1, 1, size=(9, 3))
    S = 50
    dts = np.full(S, 0.02)
    A, B, G = rng.normal(size=(4, 3)), rng.normal(size=(4, 3, 3)), rng.normal(size=(4, 3))
    idx = np.repeat((np.arange(S) * 4 // S)[:, None], 3, axis=1)
    save = np.ones(S, dtype=bool)
    a, fa = kernels.rk4_neuron(X0, dts, A, B, G, idx, code, 1.0, save, use_numba=True)
    b, fb = kernels.rk4_neuron(X0, dts, A, B, G, idx, code, 1.0, save, use_numba=False)
    assert fa == fb == -1
    assert np.abs(a - b).max() < 1e-12
    a, _ = kernels.euler_neuron(X0, dts, A, B, G, idx[:, 0], code, 1.0, save, use_numba=True)
    b, _ = kernels.euler_neuron(X0, dts, A, B, G, idx[:, 0], code, 1.0, save, use_numba=False)
    assert np.abs(a - b).max() < 1e-12


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, ODENET_UAP_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import odenet_uap; print(odenet_uap.backend_name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_worker_pool_does_not_change_results():
    f = fields.tanh_rotation(2.0)
    X0 = Domain.cube(2, samples_per_axis=6).grid()
    _, a = solve_points(f, X0, 1.0, SolverConfig(), workers=1)
    _, b = solve_points(f, X0, 1.0, SolverConfig(), workers=3)
    assert np.array_equal(a, b)


def test_flow_on_domain_indexing():
    D = Domain.cube(2, samples_per_axis=3)
    fl = flow_on_domain(fields.constant([1.0, 0.0]), D, 0.5)
    tr = fl[(0, 2)]
    assert np.array_equal(tr.initial, [-1.0, 1.0])
    assert np.allclose(tr.final, tr.initial + [0.5, 0.0])


def test_picard_converges_and_gaps_shrink():
    r = picard_iterates(fields.neg_tanh(1), [0.8], 1.0, 15, cfg=SolverConfig("picard", 512))
    assert r.distances[-1] < 1e-6
    assert np.all(np.diff(r.gaps.max(axis=1)[3:]) <= 0)


@given(st.integers(1, 8), st.floats(0.0, 2.0))
def test_picard_gap_bound_is_taylor_term(n, t):
    assert picard_gap_bound(1.0, 1.0, t, n) == pytest.approx(t ** n / math.factorial(n))


def test_picard_solver_method():
    _, st_ = solve_batch(fields.linear([[1.0]]), [[1.0]], 1.0, SolverConfig("picard", 1024, 20))
    assert abs(st_[-1, 0, 0] - math.e) < 1e-6
