"""Network mobility-system instance of the game."""
from .graph import Arc, MobilityMultigraph, PathResult, congestion_adjust, shortest_path_mode
from .model import (AlternativeOption, AmodSolution, Demand, IsolatedDemandError, NetworkOracle, NetworkScenario,
                    QpFailure, ReactionCurve, alternative_option, arc_costs, assemble_amod_qp,
                    build_reaction_curve, evaluate_profile, solve_amod)
from .tables import (ActionCatalog, AmodAction, CostTables, MmAction, MunicipalityAction, TaxiAction,
                     VotDistribution, action_space_catalog, pt_fare)

__all__ = [
    "Arc", "MobilityMultigraph", "PathResult", "congestion_adjust", "shortest_path_mode",
    "AlternativeOption", "AmodSolution", "Demand", "IsolatedDemandError", "NetworkOracle", "NetworkScenario",
    "QpFailure", "ReactionCurve", "alternative_option", "arc_costs", "assemble_amod_qp", "build_reaction_curve",
    "evaluate_profile", "solve_amod", "ActionCatalog", "AmodAction", "CostTables", "MmAction",
    "MunicipalityAction", "TaxiAction", "VotDistribution", "action_space_catalog", "pt_fare",
]
