from __future__ import annotations

import csv
import io
import json
import math

import pytest

from errw.errors import ConfigError, DegenerateBound, DomainError, UnknownPreset, WrongGraph
from errw.experiments import (PRESETS, ExperimentConfig, ExperimentReport, default_workers, dumps,
                              preset, recurrence_stats, run_experiment, run_replica, sticky_bound_vs_monte_carlo,
                              sticky_scenario)
from errw.weights import Exponential, Power, sticky_lower_bound

SMALL = ExperimentConfig(graph_spec="triangle", weight_spec="power:2", n_steps=2000, replicas=6, master_seed=3,
                         name="small", assertions=(("single_edge_min", 0.5),))


def test_config_round_trip(tmp_path):
    cfg = SMALL.replace(overrides=((0, 1, 3),), h1_window=(100, 1000))
    again = ExperimentConfig.from_dict(json.loads(dumps(cfg.to_dict())))
    assert again == cfg
    p = tmp_path / "c.toml"
    p.write_text('graph_spec = "cycle:5"\nweight_spec = "power:1.5"\nn_steps = 500\nreplicas = 2\n'
                 'master_seed = 9\ndiagnostics = "cycle"\noverrides = [[0, 1, 2]]\n'
                 '[classify]\nwindow_fraction = 0.25\nmin_count = 10\n'
                 '[assertions]\nidentity_tol = 1e-9\n')
    cfg = ExperimentConfig.from_file(p)
    assert cfg.classify.window_fraction == 0.25 and cfg.overrides == ((0, 1, 2),)
    assert cfg.assertion_map == {"identity_tol": 1e-9}


@pytest.mark.parametrize("bad", [
    dict(replicas=0), dict(n_steps=0), dict(master_seed=-1), dict(initial_default=0),
    dict(graph_spec="k4", diagnostics="cycle"), dict(diagnostics="bogus"), dict(graph_spec="cycle:1"), dict(weight_spec="power"),
    dict(start=9), dict(assertions=(("nonsense", 1),)), dict(workers=0),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SMALL.replace(**bad)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(tmp_path / "missing.toml")
    p = tmp_path / "bad.toml"
    p.write_text("graph_spec = \n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(p)
    p.write_text('graph_spec = "z"\nweight_spec = "power:1"\nn_steps = 5\nreplicas = 1\ncolour = "red"\n')
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(p)


def test_presets_are_valid_and_named():
    assert {"davis_z", "davis_z_contrast", "triangle_power", "even_cycle", "sellke_open", "k4_power",
            "cycle_identities"} <= set(PRESETS)
    for name, cfg in PRESETS.items():
        assert cfg.name == name
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    assert PRESETS["sellke_open"].exploratory
    with pytest.raises(UnknownPreset):
        preset("nope")


def test_replica_record_contents():
    rec = run_replica(SMALL, 0)
    assert rec["replica"] == 0 and rec["seed"]["master"] == 3
    assert len(rec["seed"]["entropy"]) == 32
    assert rec["attraction"]["outcome"] in ("SingleEdge", "OddCycle", "Undecided")
    cyc = ExperimentConfig(graph_spec="cycle:5", weight_spec="power:1.5", n_steps=3000, replicas=1,
                           diagnostics="cycle")
    rec = run_replica(cyc, 0)
    assert max(rec["residuals"].values()) < 1e-9 and len(rec["kappa"]) == 5
    exc = cyc.replace(graph_spec="cycle:3", diagnostics="excursions")
    rec = run_replica(exc, 0)
    assert rec["excursions"]["violations"] == 0
    z = ExperimentConfig(graph_spec="z", weight_spec="power:1", n_steps=3000, replicas=1, record_radius=2)
    assert len(run_replica(z, 0)["visits"]) == 5


def test_report_is_deterministic():
    a = run_experiment(SMALL).to_json()
    b = run_experiment(SMALL).to_json()
    assert a == b
    d = json.loads(a)
    assert set(d) == {"provenance", "aggregate", "hypotheses", "assertions", "passed", "exploratory",
                      "per_replica"}
    assert "workers" not in d["provenance"]["config"]


def test_report_independent_of_workers():
    one = run_experiment(SMALL.replace(workers=1)).to_json()
    two = run_experiment(SMALL.replace(workers=2)).to_json()
    assert one == two


def test_report_changes_with_seed():
    assert run_experiment(SMALL).to_json() != run_experiment(SMALL.replace(master_seed=4)).to_json()


def test_report_write_and_csv(tmp_path):
    rep = run_experiment(SMALL)
    pj, pc = rep.write(tmp_path / "out")
    assert json.loads(pj.read_text())["passed"] == rep.passed
    rows = list(csv.reader(io.StringIO(pc.read_text())))
    assert rows[0] == ExperimentReport.CSV_COLUMNS
    assert [int(r[0]) for r in rows[1:]] == list(range(SMALL.replicas))


def test_aggregate_and_assertions():
    rep = run_experiment(SMALL)
    agg = rep.aggregate
    total = sum(agg[k]["count"] for k in ("SingleEdge", "OddCycle", "Undecided"))
    assert total == SMALL.replicas
    lo, hi = agg["SingleEdge"]["ci95"]
    assert lo <= agg["SingleEdge"]["fraction"] <= hi
    (a,) = rep.assertions
    assert a["name"] == "single_edge_min" and a["passed"] == (agg["SingleEdge"]["fraction"] >= 0.5)


def test_hypotheses_in_report():
    h = run_experiment(SMALL).hypotheses
    assert h["H0"]["status"] == "HoldsAnalytic"
    assert h["nu"]["kind"] == "finite"
    assert h["H1"]["status"] == "LikelyHolds"


def test_dumps_handles_non_finite():
    text = dumps({"a": math.inf, "b": [1.5, float("nan")], "c": (1, 2)})
    assert json.loads(text) == {"a": "inf", "b": [1.5, "nan"], "c": [1, 2]}


def test_default_workers(monkeypatch):
    monkeypatch.delenv("ERRW_WORKERS", raising=False)
    assert default_workers() == 1
    monkeypatch.setenv("ERRW_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("ERRW_WORKERS", "x")
    with pytest.raises(ConfigError):
        default_workers()


def test_recurrence_stats():
    z = ExperimentConfig(graph_spec="z", weight_spec="power:1", n_steps=5000, replicas=4, record_radius=3)
    rep = run_experiment(z)
    st = recurrence_stats(rep, 2)
    assert len(st.min_visits) == 4
    assert 0 <= st.fraction_above(0) <= 1
    with pytest.raises(ConfigError):
        recurrence_stats(rep, 5)
    with pytest.raises(WrongGraph):
        recurrence_stats(run_experiment(SMALL), 1)


def test_sticky_scenario_shape():
    g = sticky_scenario(2)
    assert g.neighbors(0) == [1, 2, 3] and g.neighbors(1) == [0, 4, 5]


def test_sticky_comparison_small():
    cmp = sticky_bound_vs_monte_carlo(Exponential(2), 4, 2, replicas=2000, seed=1)
    assert cmp.bound == sticky_lower_bound(Exponential(2), 4, 2)
    assert cmp.passed
    assert cmp.to_dict()["passed"]


def test_sticky_comparison_guards():
    with pytest.raises(DegenerateBound):
        sticky_bound_vs_monte_carlo(Power(1), 4, 2, replicas=10)
    with pytest.raises(DomainError):
        sticky_bound_vs_monte_carlo(Exponential(2), 4, 2, replicas=0)
