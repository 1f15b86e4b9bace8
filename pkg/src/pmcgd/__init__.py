"""Gradient-based feasibility synthesis for parametric Markov chains."""

__version__ = "0.1.0"

from .descent import DescentConfig, RunResult, feasibility_search
from .gradient import (PmcObjective, PolynomialObjective, expected_reward, finite_difference,
                       gradient_eqsys, gradient_via_derived, make_pmc_objective)
from .model import Pmc, RawModel, Region, derived_automaton, preprocess, reachability_to_reward
from .polynomial import ParameterSet, Polynomial
from .textio import parse_model, parse_property, parse_region, serialize_model

__all__ = [
    "DescentConfig", "ParameterSet", "Pmc", "PmcObjective", "Polynomial", "PolynomialObjective",
    "RawModel", "Region", "RunResult", "derived_automaton", "expected_reward", "feasibility_search",
    "finite_difference", "gradient_eqsys", "gradient_via_derived", "make_pmc_objective", "parse_model",
    "parse_property", "parse_region", "preprocess", "reachability_to_reward", "serialize_model",
]
