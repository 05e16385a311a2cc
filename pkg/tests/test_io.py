import json

import numpy as np
import pytest

from confmdp.bilevel import UpperMdp
from confmdp.core import KernelPerAction, LowerMdp
from confmdp.errors import ParseError, ValidationError
from confmdp.io import dump_scenario, load_scenario, parse_scenario, save_scenario, scenario_to_dict
from confmdp.scenarios import blockworld, bilevel_paper, tvcmdp_paper
from confmdp.tvcmdp import TvcScenario


def lower_doc():
    return {
        "kind": "lower",
        "actions": ["a", "b"],
        "kernel": {"a": [[0.1, 0.9], [0.3, 0.7]], "b": [[1.0, 0.0], [0.0, 1.0]]},
        "reward": [[1.0, 0.0], [0.0, 2.0]],
        "gamma": 0.9,
    }


def test_parse_lower():
    mdp = parse_scenario(lower_doc())
    assert isinstance(mdp, LowerMdp)
    assert mdp.kernel.actions == ("a", "b")
    assert mdp.kernel.mats[0, 1, 1] == 0.7
    assert np.array_equal(mdp.mu0, [0.5, 0.5])


@pytest.mark.parametrize("scn", [tvcmdp_paper(), bilevel_paper(), blockworld(11)],
                         ids=["tvcmdp", "bilevel", "blockworld"])
def test_round_trip_bit_exact(tmp_path, scn):
    path = tmp_path / "s.json"
    save_scenario(scn, path)
    back = load_scenario(path)
    a, b = scenario_to_dict(scn), scenario_to_dict(back)
    assert a == b
    # a second save reproduces the file byte for byte
    assert dump_scenario(back) + "\n" == path.read_text()


def test_round_trip_keeps_awkward_decimals(tmp_path):
    doc = lower_doc()
    doc["kernel"]["a"] = [[0.1, 0.2, 0.7], [1 / 3, 1 / 3, 1 / 3], [0.05, 0.15, 0.8]]
    doc["kernel"]["b"] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    doc["reward"] = [[0.1, 0.2]] * 3
    mdp = parse_scenario(doc)
    assert mdp.kernel.mats[0].tolist() == doc["kernel"]["a"]


def test_row_sum_error_names_path():
    doc = lower_doc()
    doc["kernel"]["a"][1] = [0.4, 0.7]
    with pytest.raises(ValidationError) as info:
        parse_scenario(doc)
    assert any(p.startswith('kernel["a"].row[1]: sums to 1.1') for p in info.value.problems)


def test_every_violation_reported():
    doc = scenario_to_dict(bilevel_paper())
    doc["catalog"][2]["mats"]["buy"][1][0] += 0.1
    doc["q"]["Keep rate"][0] = [0.5, 0.6, -0.1]
    doc["cost"] = [[0.0, 0.0]]
    doc["lambda"] = 1.0
    del doc["gamma"]
    with pytest.raises(ValidationError) as info:
        parse_scenario(doc)
    text = "\n".join(info.value.problems)
    assert 'catalog[2].mats["buy"].row[1]' in text
    assert 'q["Keep rate"].row[0][2]' in text
    assert "cost" in text and "lambda" in text and "gamma: missing" in text
    assert len(info.value.problems) >= 5


def test_unknown_and_missing_actions():
    doc = lower_doc()
    doc["kernel"]["c"] = doc["kernel"].pop("b")
    with pytest.raises(ValidationError) as info:
        parse_scenario(doc)
    assert any('kernel["c"]: unknown action label' in p for p in info.value.problems)
    assert any('kernel["b"]: missing' in p for p in info.value.problems)


def test_bad_kind_and_bad_json(tmp_path):
    with pytest.raises(ValidationError):
        parse_scenario({"kind": "other"})
    with pytest.raises(ParseError):
        parse_scenario([1, 2])
    path = tmp_path / "x.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_scenario(path)
    with pytest.raises(OSError):
        load_scenario(tmp_path / "missing.json")


def test_bilevel_needs_some_reward():
    doc = scenario_to_dict(bilevel_paper())
    for entry in doc["catalog"][1:]:
        del entry["reward"]
    with pytest.raises(ValidationError) as info:
        parse_scenario(doc)
    assert any(p.startswith("reward: missing") for p in info.value.problems)
    doc["reward"] = [[0.0, 0.0]] * 6
    upper = parse_scenario(doc)
    assert isinstance(upper, UpperMdp)
    assert np.array_equal(upper.rewards[2], np.zeros((6, 2)))


def test_tvcmdp_fields():
    scn = parse_scenario(scenario_to_dict(tvcmdp_paper()))
    assert isinstance(scn, TvcScenario)
    assert scn.cost_alpha == tvcmdp_paper().cost_alpha
    assert scn.budget_grid[-1] == 14.0
    doc = scenario_to_dict(scn)
    doc["budget_grid"] = [1.0, -2.0]
    with pytest.raises(ValidationError) as info:
        parse_scenario(doc)
    assert info.value.problems == ["budget_grid[1]: -2.0 is below 0.0"]


def test_saved_file_is_readable_json(tmp_path):
    path = tmp_path / "b.json"
    save_scenario(bilevel_paper(), path)
    doc = json.loads(path.read_text())
    assert doc["kind"] == "bilevel"
    assert '"Decrease rate": [' in path.read_text()
    # one matrix row per line
    assert "[0.7, 0.2, 0.1]" in path.read_text()
