"""Network mobility model: customers' alternatives, AMoD pricing QP and payoffs.

Players are indexed municipality (0), AMoD operator (1), micromobility
operator (2) and taxi company (3).
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..game_core import MetricsTriple, Outcome, WelfareWeights
from ..solvers import OPTIMAL, QpProblem, QpSolution, solve_qp
from .graph import MobilityMultigraph, PathResult, congestion_adjust, shortest_path_mode
from .tables import (ActionCatalog, AmodAction, CostTables, MmAction, MunicipalityAction, TaxiAction,
                     VotDistribution, pt_fare)

# smallest time advantage used in a reaction curve, hours
MIN_TIME_GAP_H = 1e-4
ALTERNATIVE_MODES = ("pt", "mm", "taxi", "walk")


class IsolatedDemandError(ValueError):
    pass


class QpFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class Demand:
    origin: str
    destination: str
    rate: float  # customers per hour

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError(f"demand rate must be positive, got {self.rate}")
        if self.origin == self.destination:
            raise ValueError(f"demand origin and destination coincide ({self.origin})")


@dataclass(frozen=True)
class AlternativeOption:
    mode: str
    time_h: float
    price: float
    path: PathResult


@dataclass(frozen=True)
class ReactionCurve:
    """Inverse demand p = slope * x + intercept for served flow x in [0, cap]."""

    slope: float
    intercept: float
    cap: float

    def __post_init__(self):
        if not self.slope < 0:
            raise ValueError("reaction curve slope must be negative")

    def price(self, x):
        return self.slope * x + self.intercept

    def served(self, price):
        return float(np.clip((price - self.intercept) / self.slope, 0.0, self.cap))


# -- alternatives and reaction curves ----------------------------------------------


def alternative_paths(graph: MobilityMultigraph, demand: Demand, tables: CostTables) -> dict:
    """Time-minimal itineraries of the non-AMoD modes (MM keyed per vehicle type)."""
    o, d = demand.origin, demand.destination
    out = {
        "pt": shortest_path_mode(graph, "pt", o, d, walk_speed_mph=tables.walk_speed_mph,
                                 pt_wait_h=tables.pt_wait_h),
        "taxi": shortest_path_mode(graph, "taxi", o, d, walk_speed_mph=tables.walk_speed_mph),
        "walk": shortest_path_mode(graph, "walk", o, d, walk_speed_mph=tables.walk_speed_mph),
    }
    for vehicle, spec in tables.micromobility.items():
        out[("mm", vehicle)] = shortest_path_mode(graph, "mm", o, d, walk_speed_mph=tables.walk_speed_mph,
                                                  mm_speed_mph=spec.speed_mph)
    return out


def alternative_option(demand: Demand, mm_action: MmAction, taxi_action: TaxiAction,
                       municipality_action: MunicipalityAction, tables: CostTables,
                       graph: Optional[MobilityMultigraph] = None, paths: Optional[dict] = None
                       ) -> AlternativeOption:
    """Cheapest non-AMoD option at the mean value of time.

    Ties resolve in the order pt, mm, taxi, walk.
    """
    if paths is None:
        if graph is None:
            raise ValueError("need either the graph or precomputed paths")
        paths = alternative_paths(graph, demand, tables)
    vot = tables.vot.mean
    options = []
    pt = paths.get("pt")
    if pt is not None:
        options.append(AlternativeOption("pt", pt.time_h, pt_fare(pt.miles_on("pt"), municipality_action), pt))
    mm = paths.get(("mm", mm_action.vehicle))
    if mm is not None:
        options.append(AlternativeOption(
            "mm", mm.time_h, mm_action.base_price + mm_action.variable_price * mm.miles_on("mm"), mm))
    taxi = paths.get("taxi")
    if taxi is not None:
        options.append(AlternativeOption(
            "taxi", taxi.time_h, taxi_action.base_price + taxi_action.variable_price * taxi.miles_on("taxi"), taxi))
    walk = paths.get("walk")
    if walk is not None:
        options.append(AlternativeOption("walk", walk.time_h, 0.0, walk))
    if not options:
        raise IsolatedDemandError(f"isolated demand {demand.origin}->{demand.destination}")
    return min(options, key=lambda opt: (opt.price + vot * opt.time_h, ALTERNATIVE_MODES.index(opt.mode)))


def build_reaction_curve(demand: Demand, t_amod: float, alt: tuple, vot: VotDistribution) -> ReactionCurve:
    """Linear AMoD demand from a uniform value-of-time population.

    A customer with value of time v rides AMoD at price p when
    ``v * t_amod + p <= v * t_alt + p_alt``. ``alt`` is ``(t_alt, p_alt)``.
    Equal times would give an all-or-nothing step; the time gap is floored
    at ``MIN_TIME_GAP_H`` so the curve stays steep but bounded.
    """
    t_alt, p_alt = alt
    gap = t_alt - t_amod
    if abs(gap) < MIN_TIME_GAP_H:
        gap = MIN_TIME_GAP_H
    spread = vot.high - vot.low
    slope = -spread * abs(gap) / demand.rate
    # the zero-demand price is set by the customer least inclined to ride
    intercept = p_alt + (vot.high if gap > 0 else vot.low) * gap
    return ReactionCurve(slope, intercept, demand.rate)


# -- AMoD pricing QP -----------------------------------------------------------------


@dataclass
class AmodQp:
    problem: Optional[QpProblem]
    n_demands: int
    arc_ids: tuple
    incidence: np.ndarray  # vertices x arcs, +1 at the tail, -1 at the head
    path_matrix: np.ndarray  # arcs x demands, shortest-path indicators
    vehicle_time: np.ndarray  # per demand, hours a vehicle is busy per customer
    arc_time: np.ndarray
    fleet_size: float


@dataclass
class AmodSolution:
    served: np.ndarray
    rebalancing: np.ndarray
    prices: np.ndarray
    profit: float
    qp: Optional[QpSolution]


def arc_costs(graph: MobilityMultigraph, amod: AmodAction, muni: MunicipalityAction, tables: CostTables):
    """Per-arc cost of an occupied and of an empty AMoD vehicle, taxes included."""
    per_mile = tables.cost_per_mile(amod.automation, amod.engine) + muni.mile_tax
    arcs = graph.mode_arcs("amod")
    occupied = np.array([per_mile * a.length_miles for a in arcs])
    empty = occupied + np.array([muni.empty_mile_tax * a.length_miles for a in arcs])
    return occupied, empty


def assemble_amod_qp(graph: MobilityMultigraph, paths: Sequence[Optional[PathResult]],
                     curves: Sequence[Optional[ReactionCurve]], occupied_cost, empty_cost,
                     fleet_size: float) -> AmodQp:
    """Profit-maximising AMoD QP, stored as minimisation of negated profit.

    Variables are the served flow per demand followed by the rebalancing
    flow per AMoD arc. Demands without a path or curve are pinned to zero.
    """
    arcs = graph.mode_arcs("amod")
    arc_ids = tuple(a.arc_id for a in arcs)
    col = {aid: k for k, aid in enumerate(arc_ids)}
    verts = graph.mode_vertices("amod")
    row = {v: k for k, v in enumerate(verts)}
    M, K = len(paths), len(arcs)
    B = np.zeros((len(verts), K))
    for k, a in enumerate(arcs):
        B[row[a.source], k] += 1.0
        B[row[a.target], k] -= 1.0
    F = np.zeros((K, M))
    for i, p in enumerate(paths):
        if p is not None:
            for aid in p.arcs:
                F[col[aid], i] += 1.0
    arc_time = np.array([a.time_h for a in arcs])
    vehicle_time = F.T @ arc_time
    qp = AmodQp(None, M, arc_ids, B, F, vehicle_time, arc_time, float(fleet_size))
    if fleet_size <= 0:
        return qp
    occupied_cost = np.asarray(occupied_cost, dtype=float)
    empty_cost = np.asarray(empty_cost, dtype=float)
    slopes = np.array([c.slope if c is not None else -1.0 for c in curves])
    intercepts = np.array([c.intercept if c is not None else 0.0 for c in curves])
    caps = np.array([c.cap if (c is not None and paths[i] is not None) else 0.0 for i, c in enumerate(curves)])
    path_cost = F.T @ occupied_cost
    P = np.zeros((M + K, M + K))
    P[np.arange(M), np.arange(M)] = -2.0 * slopes
    c = np.concatenate([-(intercepts - path_cost), empty_cost])
    A = np.hstack([B @ F, B])
    G = np.concatenate([vehicle_time, arc_time])[None, :]
    lb = np.zeros(M + K)
    ub = np.concatenate([caps, np.full(K, np.inf)])
    qp.problem = QpProblem(P=P, c=c, A=A, b=np.zeros(len(verts)), G=G, h=[float(fleet_size)], lb=lb, ub=ub)
    return qp


def solve_amod(qp: AmodQp, curves: Sequence[Optional[ReactionCurve]], tolerance: float = 1e-9) -> AmodSolution:
    M, K = qp.n_demands, len(qp.arc_ids)
    prices = np.array([c.intercept if c is not None else math.nan for c in curves])
    if qp.problem is None:
        return AmodSolution(np.zeros(M), np.zeros(K), prices, 0.0, None)
    sol = solve_qp(qp.problem, tolerance=tolerance)
    if sol.status != OPTIMAL:
        raise QpFailure(f"AMoD QP {sol.status} (KKT residuals {sol.residuals})")
    x = np.clip(sol.x[:M], 0.0, qp.problem.ub[:M])
    f0 = np.maximum(sol.x[M:], 0.0)
    prices = np.array([c.price(xi) if c is not None else math.nan for c, xi in zip(curves, x)])
    return AmodSolution(x, f0, prices, -sol.objective, sol)


# -- scenario and payoffs ----------------------------------------------------------


@dataclass
class NetworkScenario:
    graph: MobilityMultigraph  # nominal times; congestion applied on construction
    demands: tuple
    tables: CostTables
    catalog: ActionCatalog
    weights: WelfareWeights = field(default_factory=lambda: WelfareWeights(1.0, 1.0, 1.0))
    tolerance: float = 1e-9
    threads: int = 1
    cache_path: Optional[str] = None
    policy: str = "optimistic"

    def __post_init__(self):
        self.demands = tuple(self.demands)
        verts = set(self.graph.vertices)
        for d in self.demands:
            if d.origin not in verts or d.destination not in verts:
                raise ValueError(f"demand {d.origin}->{d.destination} references unknown vertices")
        self.road_graph = congestion_adjust(self.graph, self.tables.congestion_factor)
        self.amod_paths = [shortest_path_mode(self.road_graph, "amod", d.origin, d.destination)
                           for d in self.demands]
        self.alt_paths = [alternative_paths(self.road_graph, d, self.tables) for d in self.demands]
        for d, alts in zip(self.demands, self.alt_paths):
            if all(p is None for p in alts.values()):
                raise IsolatedDemandError(f"isolated demand {d.origin}->{d.destination}")
        self._lock = threading.Lock()

    @property
    def spaces(self):
        return self.catalog.municipality, self.catalog.followers


@dataclass
class ProfileEvaluation:
    payoffs: tuple
    metrics: MetricsTriple
    amod: AmodSolution
    alternatives: list
    amod_share: float
    details: dict


def evaluate_profile(muni: MunicipalityAction, amod: AmodAction, mm: MmAction, taxi: TaxiAction,
                     scenario: NetworkScenario) -> ProfileEvaluation:
    """Payoffs of all four players and the welfare metrics for one profile."""
    tables = scenario.tables
    graph = scenario.road_graph
    vot = tables.vot.mean
    alts = [alternative_option(d, mm, taxi, muni, tables, paths=p)
            for d, p in zip(scenario.demands, scenario.alt_paths)]
    curves, t_amod = [], []
    for d, path, alt in zip(scenario.demands, scenario.amod_paths, alts):
        if path is None:
            curves.append(None)
            t_amod.append(math.nan)
            continue
        t = path.time_h + tables.amod_wait_h
        t_amod.append(t)
        curves.append(build_reaction_curve(d, t, (alt.time_h, alt.price), tables.vot))
    occupied, empty = arc_costs(graph, amod, muni, tables)
    qp = assemble_amod_qp(graph, scenario.amod_paths, curves, occupied, empty, amod.fleet_size)
    sol = solve_amod(qp, curves, scenario.tolerance)

    capital = tables.fleet_capital_rate(amod.automation, amod.engine, amod.fleet_size)
    amod_payoff = sol.profit - capital

    taxi_cost = tables.cost_per_mile(*tables.taxi_vehicle)
    mm_spec = tables.micromobility[mm.vehicle]
    mm_profit = taxi_profit = 0.0
    customer = pt_revenue = 0.0
    mm_miles = taxi_miles = 0.0
    for d, alt, x, curve, t in zip(scenario.demands, alts, sol.served, curves, t_amod):
        rest = d.rate - x
        if x > 0:
            customer += x * (curve.price(x) + vot * t)
        customer += rest * (alt.price + vot * alt.time_h)
        if alt.mode == "mm":
            miles = alt.path.miles_on("mm")
            mm_profit += rest * (alt.price - mm_spec.operational_usd_per_mile * miles)
            mm_miles += rest * miles
        elif alt.mode == "taxi":
            miles = alt.path.miles_on("taxi")
            taxi_profit += rest * (alt.price - taxi_cost * miles)
            taxi_miles += rest * miles
        elif alt.mode == "pt":
            pt_revenue += rest * alt.price

    lengths = np.array([a.length_miles for a in graph.mode_arcs("amod")])
    occupied_miles = float(sol.served @ (qp.path_matrix.T @ lengths))
    empty_miles = float(sol.rebalancing @ lengths)
    amod_miles = occupied_miles + empty_miles
    kg = (amod_miles * tables.vehicle(amod.automation, amod.engine).emissions_kg_per_mile
          + taxi_miles * tables.vehicle(*tables.taxi_vehicle).emissions_kg_per_mile
          + mm_miles * mm_spec.emissions_kg_per_mile)
    revenue = pt_revenue + muni.mile_tax * amod_miles + muni.empty_mile_tax * empty_miles
    metrics = MetricsTriple(max(customer, 0.0), kg * tables.co2_price_usd_per_kg, revenue)
    welfare = scenario.weights.welfare(metrics)
    total = sum(d.rate for d in scenario.demands)
    share = float(sol.served.sum() / total) if total else 0.0
    details = {"amod_miles": amod_miles, "empty_miles": empty_miles, "taxi_miles": taxi_miles,
               "mm_miles": mm_miles, "pt_revenue": pt_revenue, "emissions_kg": kg}
    return ProfileEvaluation((welfare, amod_payoff, mm_profit, taxi_profit), metrics, sol, alts, share, details)


class NetworkOracle:
    """Payoff oracle over action indices, for the game engine."""

    def __init__(self, scenario: NetworkScenario):
        self.scenario = scenario

    def evaluate(self, profile) -> ProfileEvaluation:
        actions = self.scenario.catalog.actions(profile)
        try:
            return evaluate_profile(*actions, self.scenario)
        except (QpFailure, np.linalg.LinAlgError) as exc:
            raise QpFailure(f"profile {tuple(profile)} ({actions}): {exc}") from exc

    def __call__(self, profile) -> Outcome:
        ev = self.evaluate(profile)
        return Outcome(ev.payoffs, ev.metrics, {"amod_share": ev.amod_share})
