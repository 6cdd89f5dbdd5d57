import csv
import io
import math
import shutil

import pytest
import yaml
from hypothesis import given, strategies as st

from mobility_stackelberg.game_core import WelfareWeights
from mobility_stackelberg.scenario_io import (NETWORK_COLUMNS, DiskCache, ResultsTable, ScenarioError,
                                              evaluate_single, export_plot_data, load_scenario, mark_rational,
                                              mark_selected, round_sig, run_pipeline, selected_row)
from mobility_stackelberg.game_core import MetricsTriple, Outcome

SINGLETON_SETS = {
    "municipality": {"pt_short_price_usd": [2.0], "pt_long_price_usd": [3.0], "cutoff_distance_miles": [1.55],
                     "mile_tax_usd_per_mile": [0.48], "empty_mile_tax_multiplier": [1.0]},
    "amod": {"fleet_size_vehicles": [500], "engine": ["BEV"], "automation": ["AV"]},
    "micromobility": {"vehicle": ["ES"], "variable_price_usd_per_mile": [0.72]},
    "taxi": {"variable_price_usd_per_mile": [1.17]},
}


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return path


@pytest.fixture
def network_dir(tmp_path, berlin_path):
    for name in ("graph.csv", "demands.csv"):
        shutil.copy(berlin_path.parent / name, tmp_path / name)
    return tmp_path


def network_cfg(**extra):
    cfg = {"model": "network", "graph_file": "graph.csv", "demands_file": "demands.csv",
           "co2_price_usd_per_kg": 0.1, "action_spaces": SINGLETON_SETS}
    cfg.update(extra)
    return cfg


class TestLoad:
    def test_minimal_congestion(self, tmp_path):
        p = write_yaml(tmp_path / "c.yaml", {
            "model": "congestion", "public_transport": {"delay_h": 2.0, "max_price_usd": 1.0},
            "msps": [{"trip_cost_usd": 0.2, "congestion": {"kind": "affine", "alpha_h": 0.5, "beta_h": 3.0}}]})
        sc = load_scenario(p)
        assert sc.kind == "congestion"
        assert sc.congestion.value_of_time == 1.0
        assert sc.congestion.pt.p0 == 0.0
        assert sc.weights == WelfareWeights(1.0, 1.0, 1.0)
        assert sc.config.grid_size == 10001

    def test_canonical_fixture(self, canonical_path):
        sc = load_scenario(canonical_path)
        assert sc.congestion.msps[0].c_tilde == pytest.approx(0.2)
        assert sc.congestion.pt.p0_max == 1.0

    def test_power_and_bpr_kinds(self, tmp_path):
        p = write_yaml(tmp_path / "c.yaml", {
            "model": "congestion", "public_transport": {"delay_h": 2.0, "max_price_usd": 1.0},
            "msps": [{"trip_cost_usd": 0.1, "congestion": {"kind": "power", "alpha_h": 0.5, "gamma_h": 2.0,
                                                           "power": 2}},
                     {"trip_cost_usd": 0.1, "congestion": {"kind": "bpr", "free_flow_time_h": 0.4,
                                                           "capacity": 0.5}}]})
        sc = load_scenario(p)
        assert sc.congestion.msps[0].congestion(1.0) == pytest.approx(2.5)
        assert sc.congestion.msps[1].congestion(0.5) == pytest.approx(0.4 * 1.15)

    def test_berlin_fixture(self, berlin):
        net = berlin.network
        assert len(net.graph) == 96
        assert len(net.graph.vertices) == 8
        assert len(net.demands) == 4
        assert len(net.catalog.municipality) == 108
        assert len(net.catalog.amod) * len(net.catalog.mm) * len(net.catalog.taxi) == 48
        assert net.graph.arc("amod_1_2").time_h == pytest.approx(3.3333 / 60)

    def test_missing_co2_price(self, network_dir):
        cfg = network_cfg()
        del cfg["co2_price_usd_per_kg"]
        with pytest.raises(ScenarioError, match="co2_price_usd_per_kg: required field missing"):
            load_scenario(write_yaml(network_dir / "s.yaml", cfg))

    def test_unit_mismatch_hint(self, tmp_path):
        p = write_yaml(tmp_path / "c.yaml", {
            "model": "congestion", "public_transport": {"delay_min": 120, "max_price_usd": 1.0},
            "msps": [{"trip_cost_usd": 0.2, "congestion": {"kind": "affine", "alpha_h": 0.5, "beta_h": 3.0}}]})
        with pytest.raises(ScenarioError) as exc:
            load_scenario(p)
        assert any("unit mismatch, expected key 'delay_h'" in e for e in exc.value.errors)

    def test_every_error_listed(self, network_dir):
        cfg = network_cfg(threads=0, weights={"k1": -1})
        del cfg["co2_price_usd_per_kg"]
        with pytest.raises(ScenarioError) as exc:
            load_scenario(write_yaml(network_dir / "s.yaml", cfg))
        text = "\n".join(exc.value.errors)
        assert len(exc.value.errors) >= 3
        for key in ("threads", "weights.k1", "co2_price_usd_per_kg"):
            assert key in text

    def test_missing_referenced_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="file not found"):
            load_scenario(write_yaml(tmp_path / "s.yaml", network_cfg()))

    @pytest.mark.parametrize("text", ["[1, 2]", "model: boat", ": : :"])
    def test_malformed(self, tmp_path, text):
        p = tmp_path / "s.yaml"
        p.write_text(text)
        with pytest.raises(ScenarioError):
            load_scenario(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError, match="not found"):
            load_scenario(tmp_path / "nope.yaml")

    def test_bad_graph_rows(self, network_dir):
        (network_dir / "graph.csv").write_text("arc_id,src,dst,mode,length_miles,time_min,line_id\n"
                                               "a,n1,n2,boat,1.0,3.0,\n")
        with pytest.raises(ScenarioError, match="boat"):
            load_scenario(write_yaml(network_dir / "s.yaml", network_cfg()))

    def test_digest_tracks_data_files(self, network_dir):
        p = write_yaml(network_dir / "s.yaml", network_cfg())
        before = load_scenario(p).digest
        with open(network_dir / "demands.csv", "a") as fh:
            fh.write("n1,n2,10\n")
        assert load_scenario(p).digest != before

    def test_cost_table_override(self, network_dir):
        cfg = network_cfg(cost_tables={"congestion_factor": 1.0, "vehicles": {
            "AV_BEV": {"operational_usd_per_mile": 0.1, "fixed_usd_per_vehicle": 0.0, "emissions_kg_per_mile": 0.0}}})
        t = load_scenario(write_yaml(network_dir / "s.yaml", cfg)).network.tables
        assert t.congestion_factor == 1.0
        assert t.cost_per_mile("AV", "BEV") == pytest.approx(0.1)
        assert t.cost_per_mile("SV", "ICEV") == pytest.approx(5.78 + 19000 / 186000)


def sample_row(**kw):
    row = {c: None for c, _ in NETWORK_COLUMNS}
    row.update(leader_action=0, amod_action=0, mm_action=0, taxi_action=0, pt_short_price_usd=2.0,
               pt_long_price_usd=3.0, cutoff_distance_miles=1.55, mile_tax_usd_per_mile=0.48,
               empty_mile_tax_multiplier=1.0, amod_engine="BEV", amod_automation="AV",
               amod_fleet_size_vehicles=500, mm_vehicle="ES", mm_base_price_usd=1.2,
               mm_variable_price_usd_per_mile=0.72, taxi_base_price_usd=4.72,
               taxi_variable_price_usd_per_mile=1.17, payoff_municipality=-3.0, payoff_amod_usd_per_h=1.0,
               payoff_mm_usd_per_h=2.0, payoff_taxi_usd_per_h=0.0, customer_cost_usd_per_h=2.0,
               emission_cost_usd_per_h=1.5, public_revenue_usd_per_h=0.5, amod_share=0.25, status="ne",
               error="", rational=False, selected=False)
    row.update(kw)
    return row


class TestResultsTable:
    def test_roundtrip_fixture(self, berlin_results):
        assert ResultsTable.from_csv(berlin_results.to_csv()) == berlin_results

    def test_roundtrip_file(self, berlin_results, tmp_path):
        berlin_results.to_csv(tmp_path / "r.csv")
        back = ResultsTable.from_csv(tmp_path / "r.csv")
        assert back == berlin_results
        assert back.to_csv() == berlin_results.to_csv()

    @given(st.lists(st.tuples(st.floats(-1e9, 1e9), st.floats(0, 1e6), st.floats(0, 1e7)), min_size=1, max_size=6))
    def test_roundtrip_property(self, triples):
        rows = [sample_row(leader_action=i, customer_cost_usd_per_h=c, emission_cost_usd_per_h=e,
                           public_revenue_usd_per_h=r, payoff_municipality=-c - e + r)
                for i, (c, e, r) in enumerate(triples)]
        t = ResultsTable(rows)
        assert ResultsTable.from_csv(t.to_csv()) == t

    def test_failed_rows_keep_empty_metrics(self):
        t = ResultsTable([sample_row(status="failed", error="QpFailure: x", customer_cost_usd_per_h=None)])
        assert ResultsTable.from_csv(t.to_csv()).rows[0]["customer_cost_usd_per_h"] is None

    def test_nine_significant_digits(self):
        t = ResultsTable([sample_row(customer_cost_usd_per_h=1 / 3)])
        assert "0.333333333," in t.to_csv()
        assert round_sig(math.pi) == 3.14159265

    def test_schema_checks(self):
        with pytest.raises(ValueError):
            ResultsTable([{"leader_action": 0}])
        with pytest.raises(ValueError):
            ResultsTable.from_csv("a,b\n1,2\n")


class TestPipeline:
    def test_singleton_spaces_give_one_row(self, network_dir):
        sc = load_scenario(write_yaml(network_dir / "s.yaml", network_cfg()))
        t = run_pipeline(sc)
        assert len(t) == 1
        row = t.rows[0]
        assert row["status"] == "ne" and row["rational"] and row["selected"]

    def test_rational_flags_match_brute_force(self, berlin_results):
        ne = berlin_results.equilibria()
        m = [(r["customer_cost_usd_per_h"], r["emission_cost_usd_per_h"], r["public_revenue_usd_per_h"]) for r in ne]

        def dominates(a, b):
            return a[0] <= b[0] and a[1] <= b[1] and a[2] >= b[2] and a != b

        for r, x in zip(ne, m):
            assert r["rational"] == (not any(dominates(y, x) for y in m))

    def test_exactly_one_selected(self, berlin_results):
        assert sum(r["selected"] for r in berlin_results.rows) == 1
        assert selected_row(berlin_results)["status"] == "ne"

    def test_no_failures_on_fixture(self, berlin_results):
        assert all(r["status"] == "ne" for r in berlin_results.rows)

    def test_mark_rational_idempotent(self, berlin_results):
        once = mark_rational(berlin_results)
        assert mark_rational(once) == once

    def test_reselect_emission_weights(self, berlin_results):
        row = selected_row(mark_selected(berlin_results, WelfareWeights(0, 1, 0)))
        assert row["amod_fleet_size_vehicles"] == 0
        assert row["pt_short_price_usd"] == 0 and row["pt_long_price_usd"] == 0

    def test_select_rejects_policy(self, berlin_results):
        with pytest.raises(ValueError):
            mark_selected(berlin_results, WelfareWeights(1, 1, 1), "neutral")

    def test_each_leader_action_covered(self, berlin, berlin_results):
        leaders = {r["leader_action"] for r in berlin_results.equilibria()}
        assert len(leaders) <= len(berlin.network.catalog.municipality)
        assert leaders

    def test_evaluate_single(self, berlin):
        t = evaluate_single(berlin, (0, 1, 0, 0))
        assert len(t) == 1 and t.rows[0]["amod_fleet_size_vehicles"] == 0
        with pytest.raises(ScenarioError, match="out of range"):
            evaluate_single(berlin, (999, 0, 0, 0))

    def test_network_commands_reject_congestion_scenarios(self, canonical_path):
        with pytest.raises(ScenarioError):
            evaluate_single(load_scenario(canonical_path), (0, 0, 0, 0))

    def test_cache_cold_and_warm(self, berlin, berlin_results, tmp_path):
        db = tmp_path / "cache.sqlite"
        cold = run_pipeline(berlin, cache_path=db)
        warm = run_pipeline(berlin, cache_path=db)
        assert cold.to_csv() == warm.to_csv() == berlin_results.to_csv()

    def test_cache_is_keyed_by_digest(self, tmp_path):
        db = tmp_path / "c.sqlite"
        out = Outcome((1.0, 2.0, 3.0, 4.0), MetricsTriple(1.0, 2.0, 3.0), {"amod_share": 0.5})
        a = DiskCache(db, "aaa")
        a.put((0, 1, 2, 3), out)
        assert a.get((0, 1, 2, 3)) == out
        a.close()
        b = DiskCache(db, "bbb")
        assert b.get((0, 1, 2, 3)) is None
        b.close()


def parse(text):
    return list(csv.reader(io.StringIO(text)))


class TestExport:
    def table(self, n=3):
        return ResultsTable([sample_row(leader_action=i, mile_tax_usd_per_mile=[0.0, 0.16, 1.6][i % 3],
                                        amod_fleet_size_vehicles=0 if i == 0 else 500,
                                        amod_share=0.0 if i == 0 else 0.257) for i in range(n)])

    def test_line_count(self):
        lines = parse(export_plot_data(self.table(3)))
        assert len(lines) == 4
        assert lines[0][4:7] == ["customer_cost_per_100000_usd_per_h", "public_revenue_per_100000_usd_per_h",
                                 "emission_cost_per_100000_usd_per_h"]

    def test_scale(self):
        lines = parse(export_plot_data(self.table(1), axes=("customer_cost",), scale=1.0))
        assert float(lines[1][4]) == 2.0

    def test_modal_share_zero_fleet(self):
        lines = parse(export_plot_data(self.table(3), classify="modal_share"))
        assert lines[0][-3] == "amod_share_pct"
        assert lines[1][-3] == "0" and lines[2][-3] == "26"

    def test_tax_bins_on_grid(self, berlin_results):
        lines = parse(export_plot_data(berlin_results, classify="tax"))
        grid = {0.16 * i for i in range(11)}
        assert all(any(abs(float(r[-3]) - g) < 1e-12 for g in grid) for r in lines[1:])

    def test_rational_only(self, berlin_results):
        lines = parse(export_plot_data(berlin_results, rational_only=True))
        assert len(lines) - 1 == sum(r["rational"] for r in berlin_results.rows)

    def test_unknown_axis(self):
        with pytest.raises(ValueError, match="unknown axis"):
            export_plot_data(self.table(), axes=("happiness",))

    def test_empty(self):
        with pytest.raises(ValueError):
            export_plot_data(ResultsTable([]))
