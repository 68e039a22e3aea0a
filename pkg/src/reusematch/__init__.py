"""Exact and simulated analysis of Greedy for online matching with reusable resources."""

__version__ = "0.1.0"

from .benchmark import evaluate_policy, evaluate_policy_detailed, opt_policy, solve_opt
from .coupling import Scheme, coupled_run, monte_carlo
from .instance import (
    FiniteSupport,
    Geometric,
    Instance,
    canonicalize,
    make_instance,
    p_min,
    random_instance,
    tight_example,
    validate,
)
from .oracle import enumerate_bernoulli, enumerate_stack, lemma1_check, proposition_checks
from .policies import NO_MATCH, alpha_threshold, greedy, measured_alpha

__all__ = [
    "FiniteSupport",
    "Geometric",
    "Instance",
    "NO_MATCH",
    "Scheme",
    "alpha_threshold",
    "canonicalize",
    "coupled_run",
    "enumerate_bernoulli",
    "enumerate_stack",
    "evaluate_policy",
    "evaluate_policy_detailed",
    "greedy",
    "lemma1_check",
    "make_instance",
    "measured_alpha",
    "monte_carlo",
    "opt_policy",
    "p_min",
    "proposition_checks",
    "random_instance",
    "solve_opt",
    "tight_example",
    "validate",
]
