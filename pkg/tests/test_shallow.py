import numpy as np
import pytest
from hypothesis import given, strategies as st

from odenet_uap import (Activation, ApproximationFailure, ConditioningError, DimensionError, Domain, FitConfig,
                        ShallowField, fields, fit_vector_field, stack_components)
from odenet_uap.shallow import fit_scalar

D1 = Domain.cube(1, samples_per_axis=41)


def test_fit_reaches_target_on_finer_grid():
    f = fields.neg_tanh(1)
    g, err = fit_vector_field(f, D1, FitConfig(target_sup_error=1e-4))
    Xv = D1.refine(2).grid()
    assert np.abs(g(Xv) - f(Xv, 0)).max() == pytest.approx(err)
    assert err <= 1e-4


def test_fit_is_deterministic_under_seed():
    f = fields.linear([[0.3, -0.7], [1.1, 0.2]])
    D = Domain.cube(2, samples_per_axis=11)
    g1, e1 = fit_vector_field(f, D, FitConfig(seed=5))
    g2, e2 = fit_vector_field(f, D, FitConfig(seed=5))
    g3, _ = fit_vector_field(f, D, FitConfig(seed=6))
    assert e1 == e2 and np.array_equal(g1.alpha, g2.alpha) and np.array_equal(g1.beta, g2.beta)
    assert not np.array_equal(g1.beta, g3.beta)


def test_zero_target_gives_zero_field():
    g, err = fit_vector_field(fields.zero(2), Domain.cube(2, samples_per_axis=5), FitConfig())
    assert err == 0.0 and g.is_zero() and g.width == 1


def test_ridge_zero_underdetermined_is_rejected():
    cfg = FitConfig(width_per_component=64, ridge=0.0)
    with pytest.raises(ConditioningError):
        fit_scalar(lambda X: X[:, 0], Domain.cube(1, samples_per_axis=5), cfg)


def test_unreachable_target_reports_best():
    cfg = FitConfig(width_per_component=2, target_sup_error=1e-12)
    with pytest.raises(ApproximationFailure) as exc:
        fit_vector_field(fields.neg_tanh(1, 5.0), D1, cfg, max_escalations=1)
    assert exc.value.best_error > 0


@given(st.integers(1, 3), st.integers(0, 10_000))
def test_stacking_decouples_components(n, seed):
    rng = np.random.default_rng(seed)
    D = Domain.cube(n, samples_per_axis=3)
    fits = [fit_scalar(lambda X, j=j: np.sin(X[:, j]), D, FitConfig(width_per_component=3 + j, seed=seed),
                       component=j) for j in range(n)]
    g = stack_components(fits)
    X = rng.uniform(-1, 1, size=(20, n))
    Y = g(X)
    for j, fit in enumerate(fits):
        assert np.array_equal(Y[:, j], fit.evaluate(X))


def test_stack_rejects_mismatched_dimension():
    a = fit_scalar(lambda X: X[:, 0], Domain.cube(2, samples_per_axis=3), FitConfig(width_per_component=2))
    with pytest.raises(DimensionError):
        stack_components([a])


def test_term_sum_equals_evaluate():
    rng = np.random.default_rng(0)
    g = ShallowField(rng.normal(size=(4, 2)), rng.normal(size=(4, 2, 2)), rng.normal(size=(4, 2)), Activation())
    X = rng.normal(size=(6, 2))
    assert np.allclose(sum(g.term(i, X) for i in range(4)), g(X), atol=1e-14)


def test_field_lipschitz_dominates():
    rng = np.random.default_rng(2)
    g = ShallowField(rng.normal(size=(3, 2)), rng.normal(size=(3, 2, 2)), rng.normal(size=(3, 2)), Activation())
    f = g.field()
    X, Y = rng.normal(size=(200, 2)), rng.normal(size=(200, 2))
    ratio = np.linalg.norm(f(X, 0) - f(Y, 0), axis=1) / np.linalg.norm(X - Y, axis=1)
    assert ratio.max() <= f.lipschitz_x
