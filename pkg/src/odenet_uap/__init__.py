"""Flows of single-neuron ODE fields as universal approximators, built constructively.

Typical use::

    from odenet_uap import Domain, construct, fields
    res = construct(fields.neg_tanh(1), Domain.cube(1, samples_per_axis=21), T=1.0, eps=0.3)
    res.total, [s.measured for s in res.stages]
"""
__version__ = "0.1.0"

from . import fields
from ._accel import backend_name
from .core import Activation, Domain, NeuronControls, VectorField
from .errors import (ApproximationFailure, ConditioningError, ConfigError, DimensionError, DivergenceError,
                     DomainDivergenceError, HorizonError, PreconditionError, SearchFailure, StageFailure,
                     UAPError)
from .shallow import FitConfig, ShallowField, fit_vector_field, stack_components
from .solver import SolverConfig, picard_iterates, solve_batch, solve_flow
from .pipeline import construct
from .mollify import choose_delta, mollify_controls
from .resnet import ResNetModel, depth_convergence_study, extract_resnet

__all__ = [
    "Activation", "ApproximationFailure", "ConditioningError", "ConfigError", "DimensionError",
    "DivergenceError", "Domain", "DomainDivergenceError", "FitConfig", "HorizonError", "NeuronControls",
    "PreconditionError", "ResNetModel", "SearchFailure", "ShallowField", "SolverConfig", "StageFailure",
    "UAPError", "VectorField", "backend_name", "choose_delta", "construct", "depth_convergence_study",
    "extract_resnet", "fields", "fit_vector_field", "mollify_controls", "picard_iterates", "solve_batch",
    "solve_flow", "stack_components",
]
