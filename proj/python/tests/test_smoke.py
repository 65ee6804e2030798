import math
import os

import pytest

import fruitcomm as fc


def test_utility_blade_on_crunchy():
    tool = [0.0] * 15
    fruit = [0.0] * 11
    tool[2] = 1.0
    fruit[0] = 1.0
    assert fc.utility(tool, fruit) == 1.01
    assert fc.utility([0.0] * 15, [0.0] * 11) == 0.01


def test_utility_rejects_bad_lengths():
    with pytest.raises(Exception):
        fc.utility([0.0] * 3, [0.0] * 11)


def test_table_and_split():
    table = fc.load_category_table(fc.default_table_path())
    fruits = table.category_names(fc.ObjectKind.fruit)
    tools = table.category_names(fc.ObjectKind.tool)
    assert len(fruits) == 31
    assert len(tools) == 16
    split = fc.generate_split(table, 3, [40, 10, 10, 10])
    assert [len(split[k]) for k in ("train", "test", "validation", "transfer")] == [40, 10, 10, 10]
    s = split["train"][0]
    assert s.tool1.category != s.tool2.category
    assert any(fc.best_tool(s))
    again = fc.generate_split(table, 3, [40, 10, 10, 10])
    assert [x.fruit.values for x in again["train"]] == [x.fruit.values for x in split["train"]]


def test_message_effect_oracles():
    echo = fc.message_effect([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], exhaustive=True)
    assert echo == pytest.approx(math.log(2.0), abs=1e-12)
    flat = fc.message_effect([0.3, 0.7], [[0.3, 0.7], [0.3, 0.7]], exhaustive=False, samples=10, counterfactuals=2)
    assert flat == 0.0


def test_play_and_config():
    table = fc.load_category_table(fc.default_table_path())
    sample = fc.generate_split(table, 1, [4, 1, 1, 1])["train"][0]
    a = fc.AgentParameters.initialize(1)
    b = fc.AgentParameters.initialize(2)
    assert a.size() > 0
    t = fc.play(a, b, sample, configuration=2, seed=5)
    assert t["configuration"] == 2
    assert t["reward"] in (0, 1)
    assert len(t["turns"]) >= 1
    assert t == fc.play(a, b, sample, configuration=2, seed=5)
    mute = fc.play(a, b, sample, communication=False, memory=False)
    assert all(turn["incoming"] == mute["turns"][0]["incoming"] for turn in mute["turns"])

    assert fc.config_hash({"run.threads": 4}) == fc.config_hash()
    assert fc.config_hash({"run.seed": 2}) != fc.config_hash()
    assert "train.total_batches = 50000" in fc.config_text()
    with pytest.raises(fc.ConfigError):
        fc.config_text({"train.nonsense": 1})


def test_commands(tmp_path):
    settings = {
        "data.train": 400,
        "data.test": 100,
        "data.validation": 100,
        "data.transfer": 100,
        "train.batch_size": 16,
        "train.total_batches": 20,
        "train.validation_every": 10,
        "train.validation_batches": 4,
        "train.validation_games_per_batch": 10,
        "eval.test_seeds": 1,
        "eval.batches": 4,
        "eval.games_per_batch": 10,
    }
    data = tmp_path / "data"
    fc.gen_data(data, settings)
    assert (data / "manifest.tsv").exists()
    part = fc.train(data, tmp_path / "train", settings, stop_after=10)
    assert part["batches_done"] == 10 and not part["completed"]
    done = fc.train(data, tmp_path / "train", settings, resume=True)
    assert done["resumed"] and done["completed"] and done["batches_done"] == 20
    ckpt = tmp_path / "train" / "checkpoint.txt"
    a, b = fc.load_agents(ckpt)
    assert a.size() == b.size()
    reports = fc.analyze([ckpt], data / "in_domain_test.tsv", tmp_path / "analyze", settings)
    assert len(reports) == 1
    assert 0.0 <= reports[0]["bilateral_pct"] <= 100.0
    assert os.path.exists(tmp_path / "analyze" / "report.tsv")
    out = fc.probe(ckpt, data / "in_domain_test.tsv", tmp_path / "probe", settings, tasks=[], filters=[],
                   self_play=True)
    assert out["probes"] == []
    assert 0.0 <= out["paired"] <= 100.0
