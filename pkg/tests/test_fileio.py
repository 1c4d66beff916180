"""Input formats, config validation, canonical output."""
import json
import os

import numpy as np
import pytest

from tramflow.errors import ConfigurationError
from tramflow.fileio import (SimulationConfig, canonical, dump_json,
                             load_dataset, load_inputs, parse_config,
                             parse_network, parse_scenario, read_alighting,
                             read_rates, resolve_out_dir, round9, write_csv)
from tramflow.scenarios import DEFAULT_FAILURE_SPECS

NETWORK_TOML = """
horizon = 50.0
peak_window = [5.0, 45.0]

[[stop]]
id = "a"
start = true

[[stop]]
id = "v"

[[stop]]
id = "b"
terminal = true

[[stop]]
id = "c"
terminal = true

[[edge]]
id = "e1"
from = "a"
to = "v"
l = 2.0
w = 1.0

[[edge]]
id = "e2"
from = "v"
to = "b"
l = 1.0
w = 0.5

[[edge]]
id = "e3"
from = "v"
to = "c"
l = 1.0
w = 1.0

[[pool]]
id = "vq"
edges = ["e2", "e3"]

[[trip]]
id = "t1"
line = "X"
edges = ["e1", "e2"]
start = 5.0
tau = 10.0
tau_seat = 5.0

[[line]]
line = "S"
edges = ["e1", "e3"]
tau = 20.0
tau_seat = 10.0

[[line.service]]
start = 0.0
end = 30.0
headway = 10.0
"""


@pytest.fixture
def branch_file(tmp_path):
    p = tmp_path / "network.toml"
    p.write_text(NETWORK_TOML)
    return str(p)


def test_parse_network_roundtrip(branch_file):
    net, tt = parse_network(branch_file)
    assert sorted(net.stops) == ["a", "b", "c", "v"]
    assert net.travel_time("e1") == pytest.approx(2.0)
    assert net.travel_time("e2") == pytest.approx(2.0)
    pools = net.boarding_pools()
    assert set(pools["vq"]) == {"e2", "e3"}
    assert pools["e1"] == ("e1",)
    assert tt.horizon == 50.0 and tt.peak_window == (5.0, 45.0)

    by_line = {}
    for tr in tt.trips:
        by_line.setdefault(tr.line, []).append(tr)
    assert [t.trip_id for t in by_line["X"]] == ["t1"]
    # periodic expansion is end-exclusive and id-encodes the departure
    assert [(t.trip_id, t.start_time) for t in by_line["S"]] == [
        ("S-d00000", 0.0), ("S-d00100", 10.0), ("S-d00200", 20.0)]
    assert all(t.capacity == 20.0 and t.seat_capacity == 10.0
               for t in by_line["S"])


def test_parse_network_missing_key(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text('[[stop]]\nid = "a"\n\n[[edge]]\nid = "e"\nfrom = "a"\n')
    with pytest.raises(ConfigurationError, match="edge e"):
        parse_network(str(p))


def _write_rates(tmp_path, text):
    p = tmp_path / "rates.csv"
    p.write_text(text)
    return str(p)


def test_read_rates_units_split_and_edge_rows(branch_file, tmp_path):
    net, _ = parse_network(branch_file)
    path = _write_rates(tmp_path, "\n".join([
        "stop_id,hour,lambda,unit,edge",
        "a,0,60,per_hour,",
        "v,0,120,per_hour,",      # split over e2 and e3
        "v,1,2,per_min,e2",       # qualified row feeds one queue
        "b,0,60,per_hour,",       # terminal stop, ignored with a warning
        "",
    ]))
    rates, warnings = read_rates(path, net)
    assert rates.rates_per_min("e1")[0] == pytest.approx(1.0)
    assert rates.rates_per_min("e2")[0] == pytest.approx(1.0)
    assert rates.rates_per_min("e3")[0] == pytest.approx(1.0)
    assert rates.rates_per_min("e2")[1] == pytest.approx(2.0)
    assert len(warnings) == 1 and "no outgoing edge" in warnings[0]
    # per_min and per_hour spellings of the same intensity agree
    path2 = _write_rates(tmp_path, "stop_id,hour,lambda,unit\na,0,1,per_min\n")
    rates2, _ = read_rates(path2, net)
    np.testing.assert_allclose(rates2.rates_per_min("e1"),
                               rates.rates_per_min("e1"))


def test_read_rates_rejections(branch_file, tmp_path):
    net, _ = parse_network(branch_file)
    cases = [
        ("stop_id,hour,lambda\nzz,0,1\n", "unknown stop"),
        ("stop_id,hour,lambda\na,24,1\n", "outside 0-23"),
        ("stop_id,hour,lambda,unit\na,0,1,per_day\n", "unknown unit"),
        ("stop_id,hour,lambda,edge\na,0,1,e9\n", "unknown edge"),
        ("stop_id,hour,lambda,edge\na,0,1,e2\n", "does not leave"),
        ("stop_id,hour\na,0\n", "lambda"),
    ]
    for text, msg in cases:
        with pytest.raises(ConfigurationError, match=msg):
            read_rates(_write_rates(tmp_path, text), net)


def test_read_alighting(tmp_path):
    p = tmp_path / "al.csv"
    p.write_text("stop_id,hour,r_a\nv,0,0.25\nv,13,0.5\n")
    table = read_alighting(str(p))
    assert table.fraction("v", 10.0) == 0.25
    assert table.fraction("v", 13 * 60.0) == 0.5
    p.write_text("stop_id,hour,r_a\nv,0,1.25\n")
    with pytest.raises(ConfigurationError, match="outside"):
        read_alighting(str(p))


def test_parse_scenario_full():
    sc = parse_scenario({
        "name": "stress",
        "headway": 10,
        "measurement_stop": "v",
        "dwell": {"threshold": 40.0, "slope": 0.03, "mode": "diff"},
        "failures": {"specs": [[0.02, 6.0]]},
        "cancellations": {"rate": 0.2},
        "shift": [{"line": "S", "minutes": 1.0}],
    })
    assert sc.name == "stress" and sc.headway == 10.0
    assert sc.dwell.threshold == 40.0 and sc.dwell.mode == "diff"
    assert sc.plan.cancellation_rate == 0.2
    assert [(f.probability, f.delay) for f in sc.plan.failures] == [(0.02, 6.0)]
    assert sc.shifts == (("S", 1.0),)
    assert sc.measurement_stop == "v"


def test_parse_scenario_defaults_and_overrides():
    sc = parse_scenario({})
    assert sc.dwell is None and sc.plan is None and sc.headway is None
    # bare [failures] section takes the built-in mix
    sc = parse_scenario({"failures": {}})
    assert sc.plan.failures == DEFAULT_FAILURE_SPECS
    assert sc.plan.cancellation_rate == 0.0
    # mode override beats the file, and alone it implies a default model
    sc = parse_scenario({"dwell": {"mode": "sum"}}, dwell_mode="diff")
    assert sc.dwell.mode == "diff" and sc.dwell.threshold == 50.0
    sc = parse_scenario({}, dwell_mode="diff")
    assert sc.dwell is not None and sc.dwell.mode == "diff"
    with pytest.raises(ConfigurationError, match="rate"):
        parse_scenario({"cancellations": {}})


def test_parse_config_validation():
    cfg = parse_config({"paths": {"dataset": "toy-line"}})
    assert cfg.horizon is None          # dataset keeps its own horizon
    assert cfg.runs == 1000 and cfg.solver == "exact"
    with pytest.raises(ConfigurationError, match="unknown \\[paths\\]"):
        parse_config({"paths": {"dataset": "toy-line", "oops": 1}})
    with pytest.raises(ConfigurationError, match="unknown \\[simulation\\]"):
        parse_config({"paths": {"dataset": "t"}, "simulation": {"n": 2}})
    with pytest.raises(ConfigurationError, match="runs"):
        parse_config({"paths": {"dataset": "t"}, "simulation": {"runs": 0}})
    with pytest.raises(ConfigurationError, match="solver"):
        parse_config({"paths": {"dataset": "t"},
                      "simulation": {"solver": "magic"}})
    with pytest.raises(ConfigurationError, match="dataset name or a network"):
        parse_config({})
    with pytest.raises(ConfigurationError, match="rates"):
        parse_config({"paths": {"network": "net.toml"}})


def test_load_inputs_dwell_mode_without_scenario():
    cfg = SimulationConfig(dataset="toy-line", dwell_mode="diff")
    *_, scenario, _ = load_inputs(cfg)
    assert scenario.dwell.mode == "diff"


def test_load_dataset_all_bundled():
    sizes = {"toy-line": 6, "example-2-1": 24,
             "mannheim-line1": 110, "feuerwache-network": 447}
    for name, n_trips in sizes.items():
        net, tt, rates, alighting, warn = load_dataset(name)
        assert len(tt.trips) == n_trips
        for members in net.boarding_pools().values():
            lam = rates.pooled(members)     # zero-filled where no rows
            assert lam.shape == (24,) and (lam >= 0).all()
    _, _, _, _, warn = load_dataset("mannheim-line1")
    assert len(warn) == 24              # terminal-stop rates, kept on file
    with pytest.raises(ConfigurationError, match="bundled"):
        load_dataset("nope")


def test_round9_and_canonical():
    assert round9(1.0 / 3.0) == 0.333333333
    assert round9(np.float64(2.0)) == 2.0
    out = canonical({"a": np.arange(3, dtype=np.float64),
                     "b": {"x": np.float32(0.5), "ok": np.bool_(True)},
                     "c": (np.int64(7),)})
    assert out == {"a": [0.0, 1.0, 2.0], "b": {"x": 0.5, "ok": True},
                   "c": [7]}
    assert all(isinstance(v, float) for v in out["a"])
    assert isinstance(out["c"][0], int)


def test_dump_json_canonical_form(tmp_path):
    text = dump_json({"b": 1.0 / 3.0, "a": [True, 2]},
                     path=str(tmp_path / "x.json"))
    assert text == (tmp_path / "x.json").read_text()
    assert text.endswith("\n")
    assert json.loads(text) == {"a": [True, 2], "b": 0.333333333}
    assert text.index('"a"') < text.index('"b"')    # sorted keys


def test_write_csv_formatting(tmp_path):
    p = tmp_path / "t.csv"
    text = write_csv(str(p), ("a", "b"), [(1.0 / 3.0, "x"), (2, 1e-12)])
    assert text == p.read_text()
    assert text.splitlines() == ["a,b", "0.333333333,x", "2,1e-12"]


def test_resolve_out_dir_precedence(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("TRAMFLOW_OUT", raising=False)
    assert resolve_out_dir(None) == "tramflow-out"
    assert os.path.isdir(tmp_path / "tramflow-out")
    monkeypatch.setenv("TRAMFLOW_OUT", str(tmp_path / "fromenv"))
    assert resolve_out_dir(None) == str(tmp_path / "fromenv")
    flagged = str(tmp_path / "flagged")
    assert resolve_out_dir(flagged) == flagged
    assert os.path.isdir(flagged)
