from __future__ import annotations

import json

import pytest

from bcflsim.config import ScenarioError, bundled_scenarios, load_scenario, scenario_from_dict


def test_bundled_scenarios_load():
    names = bundled_scenarios()
    assert set(names) == {"cross_device", "cross_silo", "adversarial_did"}
    for path in names.values():
        load_scenario(path)


def test_adversarial_bundle_layout():
    sc = load_scenario(bundled_scenarios()["adversarial_did"])
    assert sum(t.authenticate and not t.label_flipped for t in sc.trainers) == 12
    assert sum(t.label_flipped and not t.authenticate for t in sc.trainers) == 13
    assert sc.config.did_bonus_fraction == 0.10


def test_defaults_fill_in():
    sc = scenario_from_dict({"config": {"num_trainers": 3}})
    assert len(sc.trainers) == 3
    assert sc.config.total_rounds == 15 and sc.config.local_epochs == 2
    assert sc.kind == "cross_device" and sc.gas_preset == "testnet-like"


def test_overrides():
    sc = scenario_from_dict({"config": {"num_trainers": 2, "seed": 1}}, seed_override=9, gas_preset="local-like")
    assert sc.config.seed == 9 and sc.gas_preset == "local-like"


@pytest.mark.parametrize("raw,field", [
    ({"config": {"total_rounds": 0}}, "config.total_rounds"),
    ({"config": {"bogus": 1}}, "config"),
    ({"kind": "mainnet"}, "kind"),
    ({"config": {"num_trainers": 2}, "trainers": [{"seed": 1}]}, "trainers"),
    ({"config": {"num_trainers": 2}, "trainers": [{"seed": 1}, {"seed": 1}]}, "trainers"),
    ({"config": {"num_trainers": 2, "select_top_k": 3}}, "config.select_top_k"),
    ({"gas_preset": "mainnet"}, "gas_preset"),
    ({"config": {"num_trainers": 1}, "trainers": [{"seed": 1, "permutation": [0, 0]}]}, "trainers"),
])
def test_field_diagnostics(raw, field):
    with pytest.raises(ScenarioError) as err:
        scenario_from_dict(raw)
    assert field in str(err.value)


def test_cross_silo_needs_two():
    with pytest.raises(ScenarioError):
        scenario_from_dict({"kind": "cross_silo", "config": {"num_trainers": 1}})


def test_missing_file(tmp_path):
    with pytest.raises(ScenarioError, match="cannot read"):
        load_scenario(tmp_path / "nope.json")


def test_json_syntax_error_has_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "config": {\n    "seed": 1,\n  }\n}\n')
    with pytest.raises(ScenarioError, match="line 4"):
        load_scenario(path)


def test_round_trip_through_dict(tmp_path):
    sc = load_scenario(bundled_scenarios()["cross_device"])
    raw = sc.to_dict()
    raw.pop("data")
    path = tmp_path / "s.json"
    path.write_text(json.dumps({**raw, "data": sc.to_dict()["data"]}))
    assert load_scenario(path) == sc
