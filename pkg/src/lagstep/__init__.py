"""Predictor feedback for nonlinear plants with distinct per-channel input delays."""

from .delay_line import DelayLine, steps_in
from .errors import (ConfigurationError, DivergenceError, InputError, LagstepError, NumericError,
                     RangeError)
from .model import LinearModel, SystemModel, body_frame_position, make_linear, make_unicycle
from .predictor import (DIVERGENCE_LIMIT, PredictorResult, compute_predictors, compute_predictors_linear,
                        matrix_exponential, phi_transition, simpson_weights)
from .simulator import (IncompatibleHistoryWarning, Scenario, SimTrace, Simulation, compute_control, simulate,
                        simulate_nominal_from, simulate_uncompensated)

__all__ = [
    "ConfigurationError", "DelayLine", "DIVERGENCE_LIMIT", "DivergenceError", "IncompatibleHistoryWarning",
    "InputError", "LagstepError", "LinearModel", "NumericError", "PredictorResult", "RangeError", "Scenario",
    "SimTrace", "Simulation", "SystemModel", "body_frame_position", "compute_control", "compute_predictors",
    "compute_predictors_linear", "make_linear", "make_unicycle", "matrix_exponential", "phi_transition",
    "simpson_weights", "simulate", "simulate_nominal_from", "simulate_uncompensated", "steps_in",
]
