"""Ancestral lineages in Bellman-Harris branching processes.

Simulation of age-dependent branching trees, three rules for picking an
ancestral line (uniform pick via marks, Palm/size-biased, leftmost
surviving), generating-function solvers and the resulting closed-form
lineage laws, plus exact enumeration for unit lifetimes.
"""
from .distributions import (Deterministic, Exponential, Gamma, LifetimeLaw,
                            OffspringDistribution, RngStream)
from .errors import (ConfigError, DegenerateConditioning, DomainError, LineageError,
                     NumericsError, PopulationCapExceeded)
from .experiment import ExperimentConfig, run_compare, simulate
from .genfun import GenFunTable, build_discrete, build_markov, build_table, build_volterra
from .sampling import LineageRecord, Scheme
from .simulator import Tree, simulate_tree

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateConditioning", "Deterministic", "DomainError", "Exponential",
    "ExperimentConfig", "Gamma", "GenFunTable", "LifetimeLaw", "LineageError", "LineageRecord",
    "NumericsError", "OffspringDistribution", "PopulationCapExceeded", "RngStream", "Scheme",
    "Tree", "build_discrete", "build_markov", "build_table", "build_volterra", "run_compare",
    "simulate", "simulate_tree",
]
