"""Scenario files, the sweep pipeline, result tables and plot-ready export."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import sqlite3
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .congestion import (AffineCongestion, BprCongestion, CongestionScenario, MspParams, PowerCongestion,
                         PtDelay)
from .game_core import (EquilibriumRecord, MemoizedOracle, MetricsTriple, Outcome, WelfareWeights,
                        dominance_filter, select_welfare, solve_subgames, POLICIES)
from .network.graph import Arc, MobilityMultigraph
from .network.model import Demand, NetworkOracle, NetworkScenario
from .network.tables import (CostTables, MicromobilityCost, VehicleCost, VotDistribution,
                             action_space_catalog)

SIG_DIGITS = 9


class ScenarioError(ValueError):
    """Validation failure; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {e}" for e in self.errors))


# -- schema ------------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WeightsModel(_Strict):
    k1: float = Field(1.0, ge=0)
    k2: float = Field(1.0, ge=0)
    k3: float = Field(1.0, ge=0)

    @model_validator(mode="after")
    def _not_all_zero(self):
        if not (self.k1 or self.k2 or self.k3):
            raise ValueError("weights must not all be zero")
        return self


class AffineModel(_Strict):
    kind: Literal["affine"]
    alpha_h: float = Field(ge=0)
    beta_h: float = Field(gt=0)


class PowerModel(_Strict):
    kind: Literal["power"]
    alpha_h: float = Field(ge=0)
    gamma_h: float = Field(gt=0)
    power: float = Field(ge=1)


class BprModel(_Strict):
    kind: Literal["bpr"]
    free_flow_time_h: float = Field(gt=0)
    capacity: float = Field(gt=0)
    a: float = Field(0.15, gt=0)
    b: float = Field(4.0, ge=1)


class MspModel(_Strict):
    name: Optional[str] = None
    trip_cost_usd: float = Field(ge=0)
    vehicle_cost_usd: float = Field(0.0, ge=0)
    emission_cost_usd_per_trip: float = Field(0.0, ge=0)
    congestion: Union[AffineModel, PowerModel, BprModel] = Field(discriminator="kind")


class PublicTransportModel(_Strict):
    price_usd: float = Field(0.0, ge=0)
    delay_h: float = Field(ge=0)
    max_price_usd: float = Field(gt=0)


class CongestionFile(_Strict):
    model: Literal["congestion"]
    value_of_time_usd_per_h: float = Field(1.0, gt=0)
    public_transport: PublicTransportModel
    msps: List[MspModel] = Field(min_length=1)
    weights: WeightsModel = WeightsModel()
    grid_size: int = Field(10001, ge=3)


class VehicleModel(_Strict):
    operational_usd_per_mile: float = Field(ge=0)
    fixed_usd_per_vehicle: float = Field(ge=0)
    emissions_kg_per_mile: float = Field(ge=0)


class MicromobilityModel(_Strict):
    operational_usd_per_mile: float = Field(ge=0)
    speed_mph: float = Field(gt=0)
    emissions_kg_per_mile: float = Field(ge=0)


class CostTablesModel(_Strict):
    vehicles: Dict[str, VehicleModel] = {}  # keys like "AV_BEV"
    vehicle_life_miles: Optional[float] = Field(None, gt=0)
    micromobility: Dict[Literal["ES", "SB"], MicromobilityModel] = {}
    pt_wait_min: Dict[str, float] = {}
    amod_wait_h: Optional[float] = Field(None, ge=0)
    walk_speed_mph: Optional[float] = Field(None, gt=0)
    congestion_factor: Optional[float] = Field(None, ge=1)
    fleet_average_speed_mph: Optional[float] = Field(None, gt=0)
    vot_low_usd_per_h: Optional[float] = Field(None, gt=0)
    vot_high_usd_per_h: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _keys(self):
        bad = [k for k in self.vehicles if k not in {f"{a}_{e}" for a in ("SV", "AV")
                                                    for e in ("ICEV", "HEV", "BEV")}]
        if bad:
            raise ValueError(f"unknown vehicle rows {bad}; use AUTOMATION_ENGINE, e.g. AV_BEV")
        if any(v < 0 for v in self.pt_wait_min.values()):
            raise ValueError("pt_wait_min entries must be non-negative")
        return self


class MunicipalitySets(_Strict):
    pt_short_price_usd: Optional[List[float]] = None
    pt_long_price_usd: Optional[List[float]] = None
    cutoff_distance_miles: Optional[List[float]] = None
    mile_tax_usd_per_mile: Optional[List[float]] = None
    empty_mile_tax_multiplier: Optional[List[float]] = None


class AmodSets(_Strict):
    fleet_size_vehicles: Optional[List[int]] = None
    engine: Optional[List[Literal["ICEV", "HEV", "BEV"]]] = None
    automation: Optional[List[Literal["SV", "AV"]]] = None


class MicromobilitySets(_Strict):
    vehicle: Optional[List[Literal["ES", "SB"]]] = None
    base_price_usd: Optional[List[float]] = None
    variable_price_usd_per_mile: Optional[List[float]] = None


class TaxiSets(_Strict):
    base_price_usd: Optional[List[float]] = None
    variable_price_usd_per_mile: Optional[List[float]] = None


class ActionSetsModel(_Strict):
    municipality: MunicipalitySets = MunicipalitySets()
    amod: AmodSets = AmodSets()
    micromobility: MicromobilitySets = MicromobilitySets()
    taxi: TaxiSets = TaxiSets()

    def overrides(self) -> dict:
        out = {}
        for player in ("municipality", "amod", "micromobility", "taxi"):
            sets = {k: v for k, v in getattr(self, player).model_dump().items() if v is not None}
            if any(len(v) == 0 for v in sets.values()):
                raise ValueError(f"empty action set for {player}")
            if sets:
                out[player] = sets
        return out


class NetworkFile(_Strict):
    model: Literal["network"]
    graph_file: str
    demands_file: str
    co2_price_usd_per_kg: float = Field(ge=0)
    weights: WeightsModel = WeightsModel()
    tolerance: float = Field(1e-9, gt=0)
    threads: int = Field(1, ge=1)
    cache_file: Optional[str] = None
    policy: Literal["optimistic", "pessimistic"] = "optimistic"
    cost_tables: CostTablesModel = CostTablesModel()
    action_spaces: ActionSetsModel = ActionSetsModel()


_UNIT_SUFFIXES = ("_usd_per_mile", "_usd_per_kg", "_usd_per_h", "_usd_per_trip", "_usd", "_miles",
                  "_mile", "_min", "_h", "_mph", "_kg_per_mile", "_vehicles", "_per_hour")


def _stem(key: str) -> str:
    for suf in sorted(_UNIT_SUFFIXES, key=len, reverse=True):
        if key.endswith(suf):
            return key[: -len(suf)]
    return key


def _model_fields(model_cls, loc):
    cls = model_cls
    for part in loc:
        if isinstance(part, int) or cls is None:
            continue
        info = getattr(cls, "model_fields", {}).get(part)
        if info is None:
            return {}
        ann = info.annotation
        nested = [a for a in getattr(ann, "__args__", (ann,)) if isinstance(a, type) and issubclass(a, BaseModel)]
        cls = nested[0] if nested else None
    return getattr(cls, "model_fields", {}) if cls else {}


def _describe(err, schema) -> str:
    loc = tuple(err["loc"])
    where = ".".join(str(p) for p in loc) or "<root>"
    if err["type"] == "extra_forbidden" and loc and isinstance(loc[-1], str):
        known = _model_fields(schema, loc[:-1])
        match = [k for k in known if _stem(k) == _stem(loc[-1]) and k != loc[-1]]
        if match:
            return f"{where}: unit mismatch, expected key {match[0]!r}"
        return f"{where}: unknown key"
    if err["type"] == "missing":
        return f"{where}: required field missing"
    return f"{where}: {err['msg']}"


# -- loaded scenarios --------------------------------------------------------------


@dataclass
class LoadedScenario:
    path: Path
    kind: str
    config: BaseModel
    digest: str  # content hash of the scenario and every referenced file
    congestion: Optional[CongestionScenario] = None
    network: Optional[NetworkScenario] = None

    @property
    def weights(self) -> WelfareWeights:
        w = self.config.weights
        return WelfareWeights(w.k1, w.k2, w.k3)

    def with_weights(self, weights: WelfareWeights) -> "LoadedScenario":
        cfg = self.config.model_copy(update={"weights": WeightsModel(k1=weights.k1, k2=weights.k2, k3=weights.k3)})
        return _build(self.path, cfg, self.digest)


def _read_csv(path: Path, required: tuple, errors: list, label: str) -> list:
    if not path.is_file():
        errors.append(f"{label}: file not found: {path}")
        return []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in required if c not in (reader.fieldnames or [])]
        if missing:
            errors.append(f"{label}: missing columns {missing} in {path}")
            return []
        return list(reader)


def read_graph(path: Path, errors: Optional[list] = None) -> Optional[MobilityMultigraph]:
    errs = [] if errors is None else errors
    rows = _read_csv(Path(path), ("arc_id", "src", "dst", "mode", "length_miles", "time_min", "line_id"),
                     errs, "graph_file")
    arcs = []
    for i, r in enumerate(rows, start=2):
        try:
            arcs.append(Arc(r["arc_id"], r["src"], r["dst"], r["mode"], float(r["length_miles"]),
                            float(r["time_min"]) / 60.0, r["line_id"] or None))
        except (ValueError, TypeError) as exc:
            errs.append(f"graph_file line {i}: {exc}")
    if errors is None and errs:
        raise ScenarioError(errs)
    if not arcs:
        return None
    try:
        return MobilityMultigraph(arcs)
    except ValueError as exc:
        errs.append(f"graph_file: {exc}")
        return None


def read_demands(path: Path, errors: Optional[list] = None) -> list:
    errs = [] if errors is None else errors
    rows = _read_csv(Path(path), ("origin", "dst", "rate_per_hour"), errs, "demands_file")
    out = []
    for i, r in enumerate(rows, start=2):
        try:
            out.append(Demand(r["origin"], r["dst"], float(r["rate_per_hour"])))
        except (ValueError, TypeError) as exc:
            errs.append(f"demands_file line {i}: {exc}")
    if errors is None and errs:
        raise ScenarioError(errs)
    return out


def _cost_tables(cfg: NetworkFile) -> CostTables:
    ct = cfg.cost_tables
    kwargs = {"co2_price_usd_per_kg": cfg.co2_price_usd_per_kg}
    defaults = CostTables(co2_price_usd_per_kg=0.0)
    if ct.vehicles:
        vehicles = dict(defaults.vehicles)
        for key, v in ct.vehicles.items():
            automation, engine = key.split("_")
            vehicles[(automation, engine)] = VehicleCost(**v.model_dump())
        kwargs["vehicles"] = vehicles
    if ct.micromobility:
        mm = dict(defaults.micromobility)
        mm.update({k: MicromobilityCost(**v.model_dump()) for k, v in ct.micromobility.items()})
        kwargs["micromobility"] = mm
    if ct.pt_wait_min:
        kwargs["pt_wait_min"] = {**defaults.pt_wait_min, **ct.pt_wait_min}
    for name in ("vehicle_life_miles", "amod_wait_h", "walk_speed_mph", "congestion_factor",
                 "fleet_average_speed_mph"):
        if getattr(ct, name) is not None:
            kwargs[name] = getattr(ct, name)
    if ct.vot_low_usd_per_h is not None or ct.vot_high_usd_per_h is not None:
        kwargs["vot"] = VotDistribution(ct.vot_low_usd_per_h or defaults.vot.low,
                                        ct.vot_high_usd_per_h or defaults.vot.high)
    return CostTables(**kwargs)


def _congestion_fn(m):
    if m.kind == "affine":
        return AffineCongestion(m.alpha_h, m.beta_h)
    if m.kind == "power":
        return PowerCongestion(m.alpha_h, m.gamma_h, m.power)
    return BprCongestion(m.free_flow_time_h, m.capacity, m.a, m.b)


def _build(path: Path, cfg: BaseModel, digest: str) -> LoadedScenario:
    weights = WelfareWeights(cfg.weights.k1, cfg.weights.k2, cfg.weights.k3)
    if isinstance(cfg, CongestionFile):
        pt = cfg.public_transport
        try:
            scenario = CongestionScenario(
                PtDelay(pt.price_usd, pt.delay_h, pt.max_price_usd),
                [MspParams(m.trip_cost_usd, m.vehicle_cost_usd, m.emission_cost_usd_per_trip,
                           _congestion_fn(m.congestion)) for m in cfg.msps],
                cfg.value_of_time_usd_per_h, weights)
        except ValueError as exc:
            raise ScenarioError([str(exc)]) from exc
        return LoadedScenario(path, "congestion", cfg, digest, congestion=scenario)

    errors: list = []
    base = path.parent
    graph = read_graph(base / cfg.graph_file, errors)
    demands = read_demands(base / cfg.demands_file, errors)
    tables = catalog = None
    try:
        tables = _cost_tables(cfg)
    except ValueError as exc:
        errors.append(f"cost_tables: {exc}")
    try:
        catalog = action_space_catalog(cfg.action_spaces.overrides())
    except ValueError as exc:
        errors.append(f"action_spaces: {exc}")
    if not demands and not any("demands_file" in e for e in errors):
        errors.append("demands_file: no demands")
    if errors:
        raise ScenarioError(errors)
    cache = str(base / cfg.cache_file) if cfg.cache_file else None
    try:
        scenario = NetworkScenario(graph, demands, tables, catalog, weights, cfg.tolerance, cfg.threads,
                                   cache, cfg.policy)
    except ValueError as exc:
        raise ScenarioError([str(exc)]) from exc
    return LoadedScenario(path, "network", cfg, digest, network=scenario)


def load_scenario(path) -> LoadedScenario:
    """Parse and validate a YAML scenario; every violation is reported at once."""
    path = Path(path)
    if not path.is_file():
        raise ScenarioError([f"scenario file not found: {path}"])
    raw_text = path.read_bytes()
    try:
        raw = yaml.safe_load(raw_text)
    except yaml.YAMLError as exc:
        raise ScenarioError([f"not valid YAML: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ScenarioError(["top level must be a mapping"])
    schema = {"congestion": CongestionFile, "network": NetworkFile}.get(raw.get("model"))
    if schema is None:
        raise ScenarioError([f"model: must be 'congestion' or 'network', got {raw.get('model')!r}"])
    try:
        cfg = schema.model_validate(raw)
    except ValidationError as exc:
        raise ScenarioError([_describe(e, schema) for e in exc.errors()]) from None
    h = hashlib.sha256(raw_text)
    if isinstance(cfg, NetworkFile):
        for name in (cfg.graph_file, cfg.demands_file):
            f = path.parent / name
            if f.is_file():
                h.update(f.read_bytes())
    return _build(path, cfg, h.hexdigest())


# -- results table -----------------------------------------------------------------


def round_sig(value: float, digits: int = SIG_DIGITS) -> float:
    if not math.isfinite(value):
        return float(value)
    return float(f"{value:.{digits}g}")


def _fmt(value, kind) -> str:
    if value is None:
        return ""
    if kind is float:
        return f"{value:.{SIG_DIGITS}g}"
    if kind is bool:
        return "1" if value else "0"
    return str(value)


def _parse(text: str, kind):
    if kind is str:
        return text
    if text == "":
        return None
    if kind is bool:
        return text == "1"
    return kind(text)


NETWORK_COLUMNS = (
    ("leader_action", int), ("amod_action", int), ("mm_action", int), ("taxi_action", int),
    ("pt_short_price_usd", float), ("pt_long_price_usd", float), ("cutoff_distance_miles", float),
    ("mile_tax_usd_per_mile", float), ("empty_mile_tax_multiplier", float),
    ("amod_engine", str), ("amod_automation", str), ("amod_fleet_size_vehicles", int),
    ("mm_vehicle", str), ("mm_base_price_usd", float), ("mm_variable_price_usd_per_mile", float),
    ("taxi_base_price_usd", float), ("taxi_variable_price_usd_per_mile", float),
    ("payoff_municipality", float), ("payoff_amod_usd_per_h", float), ("payoff_mm_usd_per_h", float),
    ("payoff_taxi_usd_per_h", float),
    ("customer_cost_usd_per_h", float), ("emission_cost_usd_per_h", float), ("public_revenue_usd_per_h", float),
    ("amod_share", float), ("status", str), ("error", str), ("rational", bool), ("selected", bool),
)


@dataclass
class ResultsTable:
    """Rows with a fixed column schema; floats carry 9 significant digits."""

    rows: list = field(default_factory=list)  # list of dicts
    columns: tuple = NETWORK_COLUMNS

    def __post_init__(self):
        names = [c for c, _ in self.columns]
        kinds = dict(self.columns)
        clean = []
        for row in self.rows:
            if set(row) != set(names):
                raise ValueError(f"row columns {sorted(row)} differ from schema")
            clean.append({k: self._clean(row[k], kinds[k]) for k in names})
        self.rows = clean

    @staticmethod
    def _clean(value, kind):
        if kind is str:
            return "" if value is None else str(value)
        if kind is float and value is not None:
            return round_sig(float(value))
        return value

    @property
    def column_names(self) -> tuple:
        return tuple(c for c, _ in self.columns)

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return isinstance(other, ResultsTable) and self.columns == other.columns and self.rows == other.rows

    def equilibria(self) -> list:
        return [r for r in self.rows if r["status"] == "ne"]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.column_names)
        for r in self.rows:
            w.writerow([_fmt(r[c], k) for c, k in self.columns])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, columns=NETWORK_COLUMNS) -> "ResultsTable":
        """Read from a path or from CSV text (anything containing a newline)."""
        text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
        reader = csv.DictReader(io.StringIO(text))
        names = tuple(c for c, _ in columns)
        if tuple(reader.fieldnames or ()) != names:
            raise ValueError(f"unexpected columns {reader.fieldnames}")
        rows = [{c: _parse(r[c], k) for c, k in columns} for r in reader]
        return cls(rows, columns)


def _record_from_row(row) -> EquilibriumRecord:
    profile = (row["leader_action"], row["amod_action"], row["mm_action"], row["taxi_action"])
    payoffs = (row["payoff_municipality"], row["payoff_amod_usd_per_h"], row["payoff_mm_usd_per_h"],
               row["payoff_taxi_usd_per_h"])
    metrics = MetricsTriple(row["customer_cost_usd_per_h"], row["emission_cost_usd_per_h"],
                            row["public_revenue_usd_per_h"])
    return EquilibriumRecord(profile, payoffs, metrics, row["payoff_municipality"])


def mark_rational(table: ResultsTable) -> ResultsTable:
    """Flag equilibria not dominated in (customer cost, emissions, revenue)."""
    ne = table.equilibria()
    keep = {r.profile for r in dominance_filter([_record_from_row(r) for r in ne])}
    rows = [dict(r, rational=(r["status"] == "ne" and _record_from_row(r).profile in keep)) for r in table.rows]
    return ResultsTable(rows, table.columns)


def mark_selected(table: ResultsTable, weights: WelfareWeights, policy: str = "optimistic") -> ResultsTable:
    """Flag the equilibrium reached by backward induction under ``weights``.

    The municipality payoff column is recomputed for the given weights.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    rows = [dict(r, selected=False) for r in table.rows]
    for r in rows:
        if r["status"] == "ne":
            r["payoff_municipality"] = weights.welfare(MetricsTriple(
                r["customer_cost_usd_per_h"], r["emission_cost_usd_per_h"], r["public_revenue_usd_per_h"]))
    by_leader: dict = {}
    for r in rows:
        if r["status"] == "ne":
            by_leader.setdefault(r["leader_action"], []).append(_record_from_row(r))
    if by_leader:
        from .game_core import _subgame_choice  # shared with backward induction
        chosen = [_subgame_choice(recs, weights, policy, "lexicographic") for _, recs in sorted(by_leader.items())]
        best = select_welfare(chosen, weights).profile
        for r in rows:
            if r["status"] == "ne" and _record_from_row(r).profile == best:
                r["selected"] = True
    return ResultsTable(rows, table.columns)


def selected_row(table: ResultsTable) -> Optional[dict]:
    return next((r for r in table.rows if r["selected"]), None)


# -- disk cache ----------------------------------------------------------------------


class DiskCache:
    """SQLite store of profile outcomes keyed by scenario digest and profile."""

    def __init__(self, path, digest: str):
        self.path = str(path)
        self.digest = digest
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(self.path, check_same_thread=False)
        with self._conn:
            self._conn.execute("CREATE TABLE IF NOT EXISTS outcomes (scenario TEXT, profile TEXT, payload TEXT, "
                               "PRIMARY KEY (scenario, profile))")

    def get(self, profile) -> Optional[Outcome]:
        with self._lock:
            row = self._conn.execute("SELECT payload FROM outcomes WHERE scenario=? AND profile=?",
                                     (self.digest, _profile_key(profile))).fetchone()
        if row is None:
            return None
        d = json.loads(row[0])
        return Outcome(tuple(d["payoffs"]), MetricsTriple(*d["metrics"]), d["extras"])

    def put(self, profile, outcome: Outcome):
        payload = json.dumps({"payoffs": list(outcome.payoffs), "metrics": list(outcome.metrics.as_tuple()),
                              "extras": outcome.extras})
        with self._lock, self._conn:
            self._conn.execute("INSERT OR IGNORE INTO outcomes VALUES (?, ?, ?)",
                               (self.digest, _profile_key(profile), payload))

    def close(self):
        self._conn.close()


def _profile_key(profile) -> str:
    return ",".join(str(int(i)) for i in profile)


class _PipelineOracle:
    """Network oracle with failure capture and optional disk cache.

    A failed inner solve yields -inf payoffs so the profile never qualifies
    as an equilibrium; the error text is kept for the report.
    """

    def __init__(self, scenario: NetworkScenario, cache: Optional[DiskCache]):
        self.inner = NetworkOracle(scenario)
        self.cache = cache
        self.failures: dict = {}
        self._lock = threading.Lock()

    def __call__(self, profile) -> Outcome:
        if self.cache is not None:
            hit = self.cache.get(profile)
            if hit is not None:
                return hit
        try:
            out = self.inner(profile)
        except Exception as exc:  # noqa: BLE001  failure policy: mark and continue
            with self._lock:
                self.failures[tuple(profile)] = f"{type(exc).__name__}: {exc}"
            return Outcome((-math.inf,) * 4, MetricsTriple(0.0, 0.0, 0.0), {"amod_share": 0.0})
        if self.cache is not None:
            self.cache.put(profile, out)
        return out


def _row(catalog, profile, outcome: Outcome, status: str, error: str = "") -> dict:
    muni, amod, mm, taxi = catalog.actions(profile)
    ok = status == "ne"
    return {
        "leader_action": profile[0], "amod_action": profile[1], "mm_action": profile[2], "taxi_action": profile[3],
        "pt_short_price_usd": muni.pt_short_price, "pt_long_price_usd": muni.pt_long_price,
        "cutoff_distance_miles": muni.cutoff_distance, "mile_tax_usd_per_mile": muni.mile_tax,
        "empty_mile_tax_multiplier": muni.empty_mile_tax_multiplier,
        "amod_engine": amod.engine, "amod_automation": amod.automation, "amod_fleet_size_vehicles": amod.fleet_size,
        "mm_vehicle": mm.vehicle, "mm_base_price_usd": mm.base_price,
        "mm_variable_price_usd_per_mile": mm.variable_price,
        "taxi_base_price_usd": taxi.base_price, "taxi_variable_price_usd_per_mile": taxi.variable_price,
        "payoff_municipality": outcome.payoffs[0] if ok else None,
        "payoff_amod_usd_per_h": outcome.payoffs[1] if ok else None,
        "payoff_mm_usd_per_h": outcome.payoffs[2] if ok else None,
        "payoff_taxi_usd_per_h": outcome.payoffs[3] if ok else None,
        "customer_cost_usd_per_h": outcome.metrics.customer_cost if ok else None,
        "emission_cost_usd_per_h": outcome.metrics.emission_cost if ok else None,
        "public_revenue_usd_per_h": outcome.metrics.public_revenue if ok else None,
        "amod_share": outcome.extras.get("amod_share", 0.0) if ok else None,
        "status": status, "error": error, "rational": False, "selected": False,
    }


def enumerate_equilibria(scenario: LoadedScenario, threads: Optional[int] = None,
                         tolerance: Optional[float] = None, cache_path=None) -> ResultsTable:
    """All follower equilibria for every leader action, plus rows for failed profiles."""
    net = _require_network(scenario)
    threads = net.threads if threads is None else threads
    tolerance = net.tolerance if tolerance is None else tolerance
    cache_path = cache_path if cache_path is not None else net.cache_path
    cache = DiskCache(cache_path, scenario.digest) if cache_path else None
    try:
        oracle = _PipelineOracle(net, cache)
        memo = MemoizedOracle(oracle)
        leader, followers = net.spaces
        sub = solve_subgames(leader, followers, memo, net.weights, tolerance, threads)
    finally:
        if cache is not None:
            cache.close()
    rows = []
    for a in sorted(sub.equilibria):
        for rec in sub.equilibria[a]:
            if all(math.isfinite(p) for p in rec.payoffs):
                rows.append(_row(net.catalog, rec.profile, sub.outcomes[rec.profile], "ne"))
    for prof in sorted(oracle.failures):
        rows.append(_row(net.catalog, prof, sub.outcomes[prof], "failed", oracle.failures[prof]))
    return ResultsTable(rows)


def run_pipeline(scenario: LoadedScenario, threads: Optional[int] = None, tolerance: Optional[float] = None,
                 cache_path=None) -> ResultsTable:
    """Leader sweep, rational flags and the welfare-selected equilibrium."""
    table = enumerate_equilibria(scenario, threads, tolerance, cache_path)
    table = mark_rational(table)
    return mark_selected(table, scenario.weights, scenario.network.policy)


def evaluate_single(scenario: LoadedScenario, profile) -> ResultsTable:
    """One profile, evaluated without the failure guard (errors propagate)."""
    net = _require_network(scenario)
    sizes = (len(net.catalog.municipality), *(len(s) for s in net.catalog.followers))
    profile = tuple(int(i) for i in profile)
    if len(profile) != 4 or any(not 0 <= i < n for i, n in zip(profile, sizes)):
        raise ScenarioError([f"profile {profile} out of range for action-space sizes {sizes}"])
    out = NetworkOracle(net)(profile)
    return ResultsTable([_row(net.catalog, profile, out, "ne")])


def _require_network(scenario: LoadedScenario) -> NetworkScenario:
    if scenario.network is None:
        raise ScenarioError([f"expected a network scenario, got model {scenario.kind!r}"])
    return scenario.network


# -- congestion results ------------------------------------------------------------------


def congestion_table(eq, scenario: CongestionScenario) -> ResultsTable:
    n = scenario.n_msps
    cols = [("p0_usd", float), ("pt_flow", float)]
    row = {"p0_usd": eq.p0, "pt_flow": eq.flows[0]}
    for j, s in enumerate(eq.strategies, start=1):
        cols += [(f"msp{j}_price_usd", float), (f"msp{j}_fleet", float), (f"msp{j}_flow", float)]
        row.update({f"msp{j}_price_usd": s.price, f"msp{j}_fleet": s.fleet, f"msp{j}_flow": eq.flows[j]})
    cols += [("welfare", float), ("customer_cost_usd", float), ("emission_cost_usd", float),
             ("public_revenue_usd", float), ("audit_passed", bool)]
    row.update({"welfare": eq.welfare, "customer_cost_usd": eq.metrics.customer_cost,
                "emission_cost_usd": eq.metrics.emission_cost, "public_revenue_usd": eq.metrics.public_revenue,
                "audit_passed": eq.audit_passed})
    assert len(cols) == 2 + 3 * n + 5
    return ResultsTable([row], tuple(cols))


# -- plot export -------------------------------------------------------------------------

PLOT_AXES = {
    "customer_cost": "customer_cost_usd_per_h",
    "emission_cost": "emission_cost_usd_per_h",
    "public_revenue": "public_revenue_usd_per_h",
}
CLASSIFICATIONS = ("tax", "modal_share")


def export_plot_data(results: ResultsTable, axes=("customer_cost", "public_revenue", "emission_cost"),
                     classify: str = "tax", scale: float = 1e5, rational_only: bool = False,
                     path=None) -> str:
    """Plot-ready CSV: chosen metrics divided by ``scale`` plus a class column.

    ``tax`` classes are the mile-tax grid values; ``modal_share`` classes are
    the AMoD share in whole percent.
    """
    unknown = [a for a in axes if a not in PLOT_AXES]
    if unknown:
        raise ValueError(f"unknown axis {unknown[0]!r}; choose from {sorted(PLOT_AXES)}")
    if classify not in CLASSIFICATIONS:
        raise ValueError(f"unknown classification {classify!r}; choose from {CLASSIFICATIONS}")
    if scale <= 0:
        raise ValueError("scale must be positive")
    rows = [r for r in results.equilibria() if r["rational"] or not rational_only]
    if not rows:
        raise ValueError("no equilibria to export")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    label = "mile_tax_usd_per_mile" if classify == "tax" else "amod_share_pct"
    w.writerow(["leader_action", "amod_action", "mm_action", "taxi_action",
                *(f"{a}_per_{scale:g}_usd_per_h" for a in axes), label, "rational", "selected"])
    for r in rows:
        cls = r["mile_tax_usd_per_mile"] if classify == "tax" else round(100.0 * r["amod_share"])
        w.writerow([r["leader_action"], r["amod_action"], r["mm_action"], r["taxi_action"],
                    *(f"{r[PLOT_AXES[a]] / scale:.{SIG_DIGITS}g}" for a in axes),
                    f"{cls:.{SIG_DIGITS}g}" if classify == "tax" else int(cls),
                    int(r["rational"]), int(r["selected"])])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def write_text_atomic(path, text: str):
    tmp = f"{path}.tmp"
    Path(tmp).write_text(text)
    os.replace(tmp, path)
