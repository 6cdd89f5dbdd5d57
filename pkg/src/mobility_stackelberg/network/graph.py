"""Multimodal multigraph and mode-restricted shortest paths."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import networkx as nx

MODES = ("amod", "mm", "pt", "taxi", "walk")
ROAD_MODES = ("amod", "taxi")
# modes whose itineraries may use walking for access and egress
WALK_AUGMENTED = ("pt", "mm", "taxi")


@dataclass(frozen=True)
class Arc:
    arc_id: str
    source: str
    target: str
    mode: str
    length_miles: float
    time_h: float
    line_id: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"arc {self.arc_id}: unknown mode {self.mode!r}")
        if not (self.length_miles > 0 and self.time_h > 0):
            raise ValueError(f"arc {self.arc_id}: length and time must be positive")
        if self.mode == "pt" and not self.line_id:
            raise ValueError(f"arc {self.arc_id}: public transport arcs need a line id")

    @property
    def line_type(self) -> Optional[str]:
        if self.line_id is None:
            return None
        return self.line_id.split(":", 1)[0] if ":" in self.line_id else None


class MobilityMultigraph:
    def __init__(self, arcs):
        self.arcs = tuple(arcs)
        ids = [a.arc_id for a in self.arcs]
        if len(set(ids)) != len(ids):
            raise ValueError("arc ids must be unique")
        self.vertices = tuple(sorted({a.source for a in self.arcs} | {a.target for a in self.arcs}))
        self._by_id = {a.arc_id: a for a in self.arcs}

    def __len__(self):
        return len(self.arcs)

    def arc(self, arc_id: str) -> Arc:
        return self._by_id[arc_id]

    def mode_arcs(self, mode: str) -> tuple:
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        return tuple(a for a in self.arcs if a.mode == mode)

    def mode_vertices(self, mode: str) -> tuple:
        arcs = self.mode_arcs(mode)
        return tuple(sorted({a.source for a in arcs} | {a.target for a in arcs}))


def congestion_adjust(graph: MobilityMultigraph, factor: float) -> MobilityMultigraph:
    """Scale the travel time of road arcs (AMoD, taxi) by ``factor``."""
    if factor < 1:
        raise ValueError(f"congestion factor must be >= 1, got {factor}")
    return MobilityMultigraph(replace(a, time_h=a.time_h * factor) if a.mode in ROAD_MODES else a
                              for a in graph.arcs)


@dataclass(frozen=True)
class PathResult:
    arcs: tuple  # arc ids in travel order
    time_h: float
    miles: dict  # mode -> miles travelled on that mode

    @property
    def distance_miles(self) -> float:
        return sum(self.miles.values())

    def miles_on(self, mode: str) -> float:
        return self.miles.get(mode, 0.0)


def _arc_time(arc: Arc, walk_speed_mph, mm_speed_mph):
    if arc.mode == "walk" and walk_speed_mph:
        return arc.length_miles / walk_speed_mph
    if arc.mode == "mm" and mm_speed_mph:
        return arc.length_miles / mm_speed_mph
    return arc.time_h


def shortest_path_mode(graph: MobilityMultigraph, mode: str, origin: str, destination: str,
                       walk_speed_mph: Optional[float] = None, mm_speed_mph: Optional[float] = None,
                       pt_wait_h: Optional[dict] = None) -> Optional[PathResult]:
    """Time-minimal itinerary using ``mode``; ``None`` when unreachable.

    For pt, mm and taxi the itinerary may walk to and from the mode and must
    ride it at least once. Walk and MM times follow from the speeds when
    given; boarding a public transport line costs its waiting time
    (``pt_wait_h`` maps line type to hours).
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if origin == destination:
        raise ValueError("origin and destination coincide")
    pt_wait_h = pt_wait_h or {}
    augmented = mode in WALK_AUGMENTED
    G = nx.DiGraph()
    # layer 0: mode not used yet, layer 1: mode used at least once
    layers = (0, 1) if augmented else (1,)

    def relax(u, v, w, arc_id):
        if not G.has_edge(u, v) or w < G[u][v]["weight"]:
            G.add_edge(u, v, weight=w, arc=arc_id)

    for arc in graph.arcs:
        t = _arc_time(arc, walk_speed_mph, mm_speed_mph)
        if augmented and arc.mode == "walk":
            for layer in layers:
                relax((layer, arc.source), (layer, arc.target), t, arc.arc_id)
        elif arc.mode == mode and mode == "pt":
            line = arc.line_id
            relax(("line", line, arc.source), ("line", line, arc.target), t, arc.arc_id)
            wait = pt_wait_h.get(arc.line_type, 0.0)
            for layer in layers:
                relax((layer, arc.source), ("line", line, arc.source), wait, None)
            relax(("line", line, arc.target), (1, arc.target), 0.0, None)
        elif arc.mode == mode:
            for layer in layers:
                relax((layer, arc.source), (1, arc.target), t, arc.arc_id)

    src, dst = (layers[0], origin), (1, destination)
    if src not in G or dst not in G:
        return None
    try:
        nodes = nx.dijkstra_path(G, src, dst, weight="weight")
    except nx.NetworkXNoPath:
        return None
    arc_ids, total, miles = [], 0.0, {}
    for u, v in zip(nodes, nodes[1:]):
        data = G[u][v]
        total += data["weight"]
        if data["arc"] is not None:
            arc = graph.arc(data["arc"])
            arc_ids.append(arc.arc_id)
            miles[arc.mode] = miles.get(arc.mode, 0.0) + arc.length_miles
    if not math.isfinite(total):
        return None
    return PathResult(tuple(arc_ids), total, miles)
