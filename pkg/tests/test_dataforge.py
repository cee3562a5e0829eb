import json
from pathlib import Path

import pytest

from restopipe.agent import PipelineAction
from restopipe.dataforge import (
    DEFAULT_MIX,
    ForgeConfig,
    generate_pairs,
    quota_split,
)
from restopipe.degrade import DegradationRecipe, Task
from restopipe.grammar import parse_response
from restopipe.image import load_image
from restopipe.quality import balanced_scores, measure
from restopipe.search import PipelineDecision, oracle_search, rank_of
from restopipe.toolbox import default_catalog


def test_quota_split_default_mix():
    assert quota_split(50, DEFAULT_MIX) == {1: 30, 2: 8, 3: 5, 4: 5, 5: 2}


def test_quota_split_sums_and_tolerance():
    for count in (10, 23, 50, 97):
        q = quota_split(count, DEFAULT_MIX)
        assert sum(q.values()) == count
        for scenario, frac in DEFAULT_MIX.items():
            assert abs(q[scenario] - frac * count) <= 1


@pytest.fixture(scope="module")
def forge_run(tmp_path_factory, registry):
    out = tmp_path_factory.mktemp("forge")
    config = ForgeConfig(count=10, seed=21)
    pairs = generate_pairs(out, registry, config)
    return out, config, pairs


def test_forge_produces_requested_count(forge_run):
    _, config, pairs = forge_run
    assert len(pairs) == config.count


def test_forge_jsonl_is_valid_and_files_exist(forge_run):
    out, _, pairs = forge_run
    lines = (out / "pairs.jsonl").read_text().splitlines()
    assert len(lines) == len(pairs)
    for line in lines:
        obj = json.loads(line)
        assert set(obj) == {"scenario", "image", "prompt", "response", "meta"}
        assert Path(obj["image"]).exists()
        assert Path(obj["meta"]["oracle_rank_table"]).exists()
        assert obj["meta"]["space_size"] >= 1
        DegradationRecipe.from_json(obj["meta"]["recipe"])


def test_forge_scenario_mix_within_one(forge_run):
    _, config, pairs = forge_run
    quotas = quota_split(config.count, config.mix)
    got = {}
    for p in pairs:
        got[p.scenario] = got.get(p.scenario, 0) + 1
    for scenario, want in quotas.items():
        assert abs(got.get(scenario, 0) - want) <= 1


def test_forge_responses_roundtrip_grammar(forge_run):
    _, _, pairs = forge_run
    for p in pairs:
        action = parse_response(p.response)
        assert p.prompt.startswith("How to enhance the quality of this image?")
        if p.scenario in (1, 2, 4):
            assert isinstance(action, PipelineAction)
        elif p.scenario == 3:
            assert p.response == "Rollback"
        else:
            assert p.response == "Stop"


def test_s1_labels_re_evaluate_to_rank_one(forge_run, registry):
    _, _, pairs = forge_run
    checked = 0
    for p in pairs:
        if p.scenario != 1:
            continue
        ref = load_image(p.meta["reference"])
        img = load_image(p.image_path)
        recipe = DegradationRecipe.from_json(p.meta["recipe"])
        result = oracle_search(img, ref, recipe.tasks, registry)
        decision = PipelineDecision(steps=parse_response(p.response).steps)
        assert rank_of(decision, result.table) == 1
        checked += 1
    assert checked >= 3


def test_s3_steps_satisfy_rollback_margin(forge_run, registry):
    out, config, pairs = forge_run
    for p in pairs:
        if p.scenario != 3:
            continue
        ref = load_image(p.meta["reference"])
        recipe = DegradationRecipe.from_json(p.meta["recipe"])
        table_lines = [
            json.loads(l) for l in Path(p.meta["oracle_rank_table"]).read_text().splitlines()
        ]
        ranked = [l for l in table_lines if l["rank"] is not None]
        best_s = max(l["balanced"] for l in ranked)
        bad = p.meta["bad_step"]
        through = [
            l["balanced"] for l in ranked
            if l["decision"][0] == {"task": bad["task"], "tool": bad["tool"]}
        ]
        assert max(through) < best_s - config.rollback_margin


def test_s5_states_admit_no_improving_step(forge_run, registry):
    _, config, pairs = forge_run
    for p in pairs:
        if p.scenario != 5:
            continue
        ref = load_image(p.meta["reference"])
        img = load_image(p.image_path)
        recipe = DegradationRecipe.from_json(p.meta["recipe"])
        executed = {Task.parse(tok.split(".", 1)[1].split(" ")[0])
                    for tok in p.prompt.split(": ")[1].rstrip(".").split("; ")
                    if not tok.startswith("None")}
        remaining = recipe.tasks - executed
        pairs2 = [(t, tool) for t in sorted(remaining, key=lambda x: x.value)
                  for tool in registry.pool(t)]
        if not pairs2:
            continue
        reports = [measure(img, ref)]
        for _, tool in pairs2:
            reports.append(measure(registry.run(tool, img), ref))
        scores = balanced_scores(reports)
        assert max(scores[1:]) <= scores[0] + config.stop_margin + 1e-9
