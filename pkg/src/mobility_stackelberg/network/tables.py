"""Cost parameters and the players' action sets for the network case study."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from ..game_core import ActionSpace

ENGINES = ("ICEV", "HEV", "BEV")
AUTOMATION = ("SV", "AV")
MM_VEHICLES = ("ES", "SB")


@dataclass(frozen=True)
class VehicleCost:
    operational_usd_per_mile: float
    fixed_usd_per_vehicle: float
    emissions_kg_per_mile: float


@dataclass(frozen=True)
class MicromobilityCost:
    operational_usd_per_mile: float
    speed_mph: float
    emissions_kg_per_mile: float


def _default_vehicles():
    return {
        ("SV", "ICEV"): VehicleCost(5.78, 19000.0, 0.16),
        ("SV", "HEV"): VehicleCost(5.86, 31000.0, 0.18),
        ("SV", "BEV"): VehicleCost(5.89, 29000.0, 0.13),
        ("AV", "ICEV"): VehicleCost(0.38, 89000.0, 0.16),
        ("AV", "HEV"): VehicleCost(0.45, 101000.0, 0.18),
        ("AV", "BEV"): VehicleCost(0.48, 99000.0, 0.13),
    }


def _default_mm():
    return {"ES": MicromobilityCost(0.79, 5.0, 0.101), "SB": MicromobilityCost(1.58, 7.5, 0.033)}


def _default_pt_wait():
    return {"ubahn": 5.0, "sbahn": 5.0, "tram": 7.0, "bus": 10.0}


@dataclass(frozen=True)
class VotDistribution:
    """Customers' value of time, uniform on [low, high] in $/h."""

    low: float = 10.0
    high: float = 17.0

    def __post_init__(self):
        if not 0 < self.low < self.high:
            raise ValueError(f"need 0 < low < high, got {self.low}, {self.high}")

    @property
    def mean(self) -> float:
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class CostTables:
    co2_price_usd_per_kg: float
    vehicles: dict = field(default_factory=_default_vehicles)
    vehicle_life_miles: float = 186000.0
    micromobility: dict = field(default_factory=_default_mm)
    pt_wait_min: dict = field(default_factory=_default_pt_wait)
    amod_wait_h: float = 3.0 / 60.0
    walk_speed_mph: float = 3.13
    congestion_factor: float = 1.56
    fleet_average_speed_mph: float = 4.25
    taxi_vehicle: tuple = ("SV", "ICEV")
    vot: VotDistribution = field(default_factory=VotDistribution)

    def __post_init__(self):
        scalars = (self.co2_price_usd_per_kg, self.vehicle_life_miles, self.amod_wait_h,
                   self.walk_speed_mph, self.congestion_factor, self.fleet_average_speed_mph)
        if any(v < 0 for v in scalars) or self.vehicle_life_miles == 0 or self.walk_speed_mph == 0:
            raise ValueError("cost table entries must be non-negative (life and walk speed positive)")
        if any(v < 0 for v in self.pt_wait_min.values()):
            raise ValueError("waiting times must be non-negative")

    def vehicle(self, automation: str, engine: str) -> VehicleCost:
        return self.vehicles[(automation, engine)]

    def cost_per_mile(self, automation: str, engine: str) -> float:
        """Operational cost plus capital amortised over the vehicle life."""
        v = self.vehicle(automation, engine)
        return v.operational_usd_per_mile + v.fixed_usd_per_vehicle / self.vehicle_life_miles

    def fleet_capital_rate(self, automation: str, engine: str, fleet_size: float) -> float:
        """$/h of owning ``fleet_size`` vehicles whose life is spent at the average speed."""
        life_h = self.vehicle_life_miles / self.fleet_average_speed_mph
        return self.vehicle(automation, engine).fixed_usd_per_vehicle * fleet_size / life_h

    @property
    def pt_wait_h(self) -> dict:
        return {k: v / 60.0 for k, v in self.pt_wait_min.items()}


# -- actions -------------------------------------------------------------------


@dataclass(frozen=True)
class MunicipalityAction:
    pt_short_price: float
    pt_long_price: float
    cutoff_distance: float
    mile_tax: float
    empty_mile_tax_multiplier: float

    @property
    def empty_mile_tax(self) -> float:
        return self.mile_tax * self.empty_mile_tax_multiplier


@dataclass(frozen=True)
class AmodAction:
    engine: str
    automation: str
    fleet_size: int

    def __post_init__(self):
        if self.engine not in ENGINES or self.automation not in AUTOMATION or self.fleet_size < 0:
            raise ValueError(f"invalid AMoD action {self}")


@dataclass(frozen=True)
class MmAction:
    vehicle: str
    base_price: float
    variable_price: float

    def __post_init__(self):
        if self.vehicle not in MM_VEHICLES:
            raise ValueError(f"invalid micromobility vehicle {self.vehicle!r}")


@dataclass(frozen=True)
class TaxiAction:
    base_price: float
    variable_price: float


def pt_fare(trip_distance: float, action: MunicipalityAction) -> float:
    """Zone fare: short-distance price up to the cutoff, long-distance price beyond."""
    if trip_distance < 0:
        raise ValueError("negative trip distance")
    return action.pt_short_price if trip_distance <= action.cutoff_distance else action.pt_long_price


DEFAULT_ACTION_SETS = {
    "municipality": {
        "pt_short_price_usd": [0.0, 1.0, 2.0, 3.0, 4.0],
        "pt_long_price_usd": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        "cutoff_distance_miles": [0.0, 1.55, 3.10],
        "mile_tax_usd_per_mile": [round(0.16 * i, 2) for i in range(11)],
        "empty_mile_tax_multiplier": [0.0, 1.0, 10.0],
    },
    "amod": {
        "fleet_size_vehicles": list(range(0, 16001, 1000)),
        "engine": list(ENGINES),
        "automation": list(AUTOMATION),
    },
    "micromobility": {
        "vehicle": list(MM_VEHICLES),
        "base_price_usd": [1.20],
        "variable_price_usd_per_mile": [0.72, 0.96, 1.21, 1.45, 1.69],
    },
    "taxi": {
        "base_price_usd": [4.72],
        "variable_price_usd_per_mile": [1.17, 1.95, 3.89, 5.84, 7.79],
    },
}


@dataclass(frozen=True)
class ActionCatalog:
    municipality: ActionSpace
    amod: ActionSpace
    mm: ActionSpace
    taxi: ActionSpace

    @property
    def followers(self) -> list:
        return [self.amod, self.mm, self.taxi]

    def actions(self, profile):
        a0, a1, a2, a3 = profile
        return self.municipality[a0], self.amod[a1], self.mm[a2], self.taxi[a3]


def action_space_catalog(config: dict | None = None) -> ActionCatalog:
    """Action spaces of all four players; ``config`` overrides any default set."""
    sets = {player: dict(vals) for player, vals in DEFAULT_ACTION_SETS.items()}
    for player, over in (config or {}).items():
        if player not in sets:
            raise ValueError(f"unknown player {player!r} in action-space override")
        for key, vals in over.items():
            if key not in sets[player]:
                raise ValueError(f"unknown action set {player}.{key}")
            if not isinstance(vals, (list, tuple)) or not vals:
                raise ValueError(f"action set {player}.{key} must be a non-empty list")
            sets[player][key] = list(vals)
    m, a, mm, t = sets["municipality"], sets["amod"], sets["micromobility"], sets["taxi"]
    muni = [MunicipalityAction(*v) for v in itertools.product(
        m["pt_short_price_usd"], m["pt_long_price_usd"], m["cutoff_distance_miles"],
        m["mile_tax_usd_per_mile"], m["empty_mile_tax_multiplier"])]
    amod = [AmodAction(e, au, int(f)) for f in a["fleet_size_vehicles"]
            for e in a["engine"] for au in a["automation"]]
    mms = [MmAction(v, b, p) for v in mm["vehicle"] for b in mm["base_price_usd"]
           for p in mm["variable_price_usd_per_mile"]]
    taxis = [TaxiAction(b, p) for b in t["base_price_usd"] for p in t["variable_price_usd_per_mile"]]
    return ActionCatalog(ActionSpace(0, muni), ActionSpace(1, amod), ActionSpace(2, mms), ActionSpace(3, taxis))
