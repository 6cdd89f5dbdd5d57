"""Stackelberg games between a municipality and mobility service providers."""
from .game_core import (ActionSpace, EquilibriumRecord, MetricsTriple, Outcome, WelfareWeights, backward_induction,
                        dominance_filter, enumerate_pure_nash, is_equilibrium, select_welfare)

__version__ = "0.1.0"

__all__ = ["ActionSpace", "EquilibriumRecord", "MetricsTriple", "Outcome", "WelfareWeights", "backward_induction",
           "dominance_filter", "enumerate_pure_nash", "is_equilibrium", "select_welfare", "__version__"]
