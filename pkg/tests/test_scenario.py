import json

import pytest

from rtping.loadgen.stress import REFERENCE_STRESS, StressSpec
from rtping.loadgen.traffic import TrafficSpec
from rtping.scenario import MatrixSpec, ScenarioSpec
from rtping.tuning.model import Mode


def test_defaults_match_reference_workload():
    sc = ScenarioSpec(peer=("h", 7447))
    spec = sc.cycle_spec()
    assert (spec.period, spec.deadline, spec.total_cycles) == (1_000_000, 1_000_000, 600_000)
    assert sc.payload_size == 500
    assert sc.priority_mark == 4


@pytest.mark.parametrize("kw", [
    {"load": "stress"},
    {"load": "tx-traffic"},
    {"load": "idle", "stress": REFERENCE_STRESS},
    {"load": "stress", "traffic": TrafficSpec(("h", 1))},
    {"load": "rx-traffic", "stress": REFERENCE_STRESS},
    {"load": "party"},
    {"role": "observer"},
    {"payload_size": 10},
    {"loss_horizon": 0},
    {"rt_priority": 100},
    {"period_ns": 0},
])
def test_invariants(kw):
    with pytest.raises(ValueError):
        ScenarioSpec(**{"peer": ("h", 7447), **kw})


def test_client_needs_peer():
    with pytest.raises(ValueError):
        ScenarioSpec()
    ScenarioSpec(role="server")


def test_with_load_defaults():
    base = ScenarioSpec(peer=("10.0.0.2", 7447))
    assert base.with_load("stress").stress == REFERENCE_STRESS
    t = base.with_load("tx-traffic").traffic
    assert t.destination == ("10.0.0.2", 5001) and t.target_bandwidth == 100_000_000
    assert base.with_load("stress").with_load("idle").stress is None


@pytest.mark.parametrize("load", ["idle", "stress", "tx-traffic", "rx-traffic"])
def test_dict_roundtrip(load):
    sc = ScenarioSpec(peer=("10.0.0.2", 7447), mode="rt-isolation", tos=0x10).with_load(load)
    d = json.loads(json.dumps(sc.to_dict()))
    assert ScenarioSpec.from_dict(d) == sc


def test_unknown_field():
    with pytest.raises(ValueError, match="unknown"):
        ScenarioSpec.from_dict({"peer": "h", "colour": 1})


def test_full_matrix_16_cells(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"base": {"peer": "10.0.0.2"}}))
    m = MatrixSpec.load(p)
    cells = m.cells()
    assert len(cells) == 16
    assert len({c.name for c in cells}) == 16
    assert {c.mode for c in cells} == set(Mode)
    for c in cells:
        assert c.scenario.mode is c.mode and c.scenario.load == c.load
        assert (c.scenario.stress is not None) == (c.load == "stress")


def test_matrix_rejects_unknown_load():
    with pytest.raises(ValueError):
        MatrixSpec.from_dict({"base": {"peer": "h"}, "loads": ["idle", "storm"]})


def test_matrix_custom_stress_kept():
    custom = StressSpec(cpu_workers=1)
    m = MatrixSpec.from_dict({"base": {"peer": "h", "load": "stress", "stress": custom.to_dict()},
                              "modes": ["no-rt"], "loads": ["stress", "idle"]})
    stress_cell, idle_cell = m.cells()
    assert stress_cell.scenario.stress == custom
    assert idle_cell.scenario.stress is None
