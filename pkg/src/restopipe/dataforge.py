"""Training-pair construction: five scenarios labeled by the oracle.

Per degraded image the oracle table is computed once; the scheduler then
assigns the image to whichever scenario has the largest remaining quota
and is feasible for it:

  1 unprocessed image -> full oracle pipeline
  2 prefix-executed image + history -> re-searched pipeline over the rest
  3 first step of a bottom-decile decision executed -> "Rollback"
    (the step qualifies when the best score achievable after it trails the
    best achievable overall by the rollback margin)
  4 the scenario-3 state after rollback, ban recorded -> re-searched
    pipeline that avoids the banned pair
  5 fully processed image -> "Stop" (no single step improves past the stop
    margin)
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import HistoryEntry, PipelineAction
from .degrade import DegradationRecipe, Task, apply_recipe, sample_recipe
from .errors import PipelineError
from .grammar import format_prompt, format_response
from .image import ImageBuffer, load_image, save_image
from .quality import ScoreConfig, balanced_scores, measure
from .search import (
    CandidateOutcome,
    OracleResult,
    PipelineDecision,
    export_table,
    oracle_search,
)
from .toolbox import ToolRegistry

DEFAULT_MIX = {1: 0.60, 2: 0.15, 3: 0.10, 4: 0.10, 5: 0.05}

DEFAULT_COMBOS: tuple[tuple[Task, ...], ...] = (
    (Task.DENOISE, Task.DEJPEG),
    (Task.LOWLIGHT, Task.DENOISE),
    (Task.DEBLUR, Task.DENOISE, Task.DEJPEG),
    (Task.DERAIN, Task.DENOISE, Task.DEJPEG),
    (Task.DEHAZE, Task.DENOISE, Task.DEJPEG),
    (Task.DEHAZE, Task.DERAIN, Task.DENOISE, Task.DEJPEG),
)


@dataclass(frozen=True)
class TrainingPair:
    scenario: int
    image_path: str
    prompt: str
    response: str
    meta: dict

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "image": self.image_path,
            "prompt": self.prompt,
            "response": self.response,
            "meta": self.meta,
        }


@dataclass
class ForgeConfig:
    count: int = 50
    mix: dict[int, float] = field(default_factory=lambda: dict(DEFAULT_MIX))
    combos: tuple[tuple[Task, ...], ...] = DEFAULT_COMBOS
    profile: str = "mixed"
    seed: int = 0
    rollback_margin: float = 0.5  # balanced-score drop that justifies Rollback
    stop_margin: float = 0.05  # max tolerated one-step gain for a Stop label
    score: ScoreConfig = field(default_factory=ScoreConfig)
    jobs: int = 1
    image_size: int = 128


def quota_split(count: int, mix: dict[int, float]) -> dict[int, int]:
    """Largest-remainder apportionment of count over the scenario mix."""
    total_w = sum(mix.values())
    raw = {k: count * w / total_w for k, w in mix.items()}
    base = {k: int(v) for k, v in raw.items()}
    rem = count - sum(base.values())
    for k in sorted(mix, key=lambda k: raw[k] - base[k], reverse=True)[:rem]:
        base[k] += 1
    return base


def _qualifying_first_steps(
    result: OracleResult, margin: float
) -> list[tuple[tuple[Task, str], CandidateOutcome]]:
    """First steps of bottom-decile decisions whose best continuation trails
    the overall best by more than the margin."""
    table = result.table
    n = len(table)
    decile_start = max(n - max(n // 10, 1), 1)  # worst ~10%, never the best
    best_s = table[0].report.balanced
    best_through: dict[tuple, float] = {}
    for c in table:
        first = (c.decision.steps[0][0].value, c.decision.steps[0][1])
        s = c.report.balanced
        if first not in best_through or s > best_through[first]:
            best_through[first] = s
    out = []
    seen = set()
    for c in table[decile_start:]:
        task, tool = c.decision.steps[0]
        first = (task.value, tool)
        if first in seen:
            continue
        seen.add(first)
        if best_through[first] < best_s - margin:
            out.append(((task, tool), c))
    return out


def _ban_filtered_best(
    result: OracleResult, banned: tuple[Task, str], score: ScoreConfig
) -> tuple[PipelineDecision, int] | None:
    """Rank-1 decision among candidates that never execute the banned pair,
    re-standardized over the filtered population."""
    keep = [
        c for c in result.table
        if all((t, tool) != banned for t, tool in c.decision.steps)
    ]
    if len(keep) < 2:
        return None
    scores = balanced_scores([c.report for c in keep], score.metrics, score.weights)
    order = sorted(range(len(keep)), key=lambda i: (-scores[i], keep[i].decision.sort_key()))
    return keep[order[0]].decision, len(keep)


def _stop_violations(
    final: ImageBuffer,
    used: frozenset[Task],
    all_tasks: frozenset[Task],
    ref: ImageBuffer,
    reg: ToolRegistry,
    score: ScoreConfig,
    margin: float,
) -> bool:
    """True when some single next step improves the balanced score by more
    than the stop margin."""
    remaining = sorted(all_tasks - used, key=lambda t: t.value)
    pairs = [(t, tool) for t in remaining for tool in reg.pool(t)]
    if not pairs:
        return False
    reports = [measure(final, ref, score)]
    for _, tool in pairs:
        reports.append(measure(reg.run(tool, final), ref, score))
    scores = balanced_scores(reports, score.metrics, score.weights)
    return max(scores[1:]) > scores[0] + margin


def generate_pairs(
    out_dir: str | os.PathLike,
    reg: ToolRegistry,
    config: ForgeConfig | None = None,
    clean_paths: list[str] | None = None,
) -> list[TrainingPair]:
    """Produce training pairs and write them as JSONL plus image/table files.

    Output layout: <out_dir>/pairs.jsonl, <out_dir>/images/*.png,
    <out_dir>/tables/*.jsonl. Oracle failures are logged and the image
    skipped. Returns the pairs in emission order (by image index).
    """
    from .synthetic import clean_image

    config = config or ForgeConfig()
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "tables").mkdir(parents=True, exist_ok=True)

    quotas = quota_split(config.count, config.mix)
    rng = np.random.Generator(np.random.Philox(key=config.seed))
    pairs: list[TrainingPair] = []
    errors: list[str] = []

    idx = 0
    attempts = 0
    max_attempts = config.count * 4 + 16
    while sum(quotas.values()) > 0 and attempts < max_attempts:
        attempts += 1
        image_id = f"img{idx:04d}"
        combo = config.combos[idx % len(config.combos)]
        img_seed = int(rng.integers(0, 2**63))

        if clean_paths:
            ref = load_image(clean_paths[idx % len(clean_paths)])
            source_id = os.path.basename(clean_paths[idx % len(clean_paths)])
        else:
            ref = clean_image(img_seed, config.image_size, config.image_size)
            source_id = f"synthetic:{img_seed}"
        idx += 1

        recipe = sample_recipe(set(combo), rng_seed=img_seed, profile=config.profile, source_id=source_id)
        degraded = apply_recipe(ref, recipe)
        try:
            result = oracle_search(
                degraded, ref, recipe.tasks, reg, score=config.score, jobs=config.jobs
            )
        except PipelineError as exc:
            errors.append(f"{image_id}: oracle failed: {exc}")
            continue

        table_path = str(out_dir / "tables" / f"{image_id}.jsonl")
        export_table(result, table_path)

        # largest remaining quota first, scenario id breaks ties
        for scenario in sorted(quotas, key=lambda s: (-quotas[s], s)):
            if quotas[scenario] == 0:
                continue
            pair = _build_pair(
                scenario, image_id, ref, degraded, recipe, result, reg, config,
                out_dir, table_path, rng,
            )
            if pair is not None:
                pairs.append(pair)
                quotas[scenario] -= 1
                break

    with open(out_dir / "pairs.jsonl", "w") as f:
        for p in pairs:
            f.write(json.dumps(p.to_json()) + "\n")
    if errors:
        with open(out_dir / "errors.log", "w") as f:
            f.write("\n".join(errors) + "\n")
    return pairs


def _build_pair(
    scenario: int,
    image_id: str,
    ref: ImageBuffer,
    degraded: ImageBuffer,
    recipe: DegradationRecipe,
    result: OracleResult,
    reg: ToolRegistry,
    config: ForgeConfig,
    out_dir: Path,
    table_path: str,
    rng: np.random.Generator,
) -> TrainingPair | None:
    """One pair for one scenario, or None when the image does not fit it."""
    best = result.best
    tasks = recipe.tasks

    def meta(space_size: int, extra: dict | None = None) -> dict:
        m = {
            "recipe": recipe.to_json(),
            "space_size": space_size,
            "oracle_rank_table": table_path,
        }
        if extra:
            m.update(extra)
        return m

    def save(img: ImageBuffer, suffix: str) -> str:
        path = str(out_dir / "images" / f"{image_id}_{suffix}.png")
        save_image(img, path)
        return path

    def save_ref() -> str:
        return save(ref, "ref")

    if scenario == 1:
        return TrainingPair(
            scenario=1,
            image_path=save(degraded, "s1"),
            prompt=format_prompt([]),
            response=format_response(PipelineAction(steps=best.decision.steps)),
            meta=meta(len(result.table), {"reference": save_ref()}),
        )

    if scenario == 2:
        if len(tasks) < 2:
            return None
        full = [c for c in result.table if len(c.decision.steps) == len(tasks)]
        cand = full[int(rng.integers(len(full)))]
        plen = int(rng.integers(1, len(tasks)))  # strict prefix, >= 1 remaining
        prefix = cand.decision.steps[:plen]
        current = degraded
        for _, tool in prefix:
            current = reg.run(tool, current)
        remaining = tasks - {t for t, _ in prefix}
        re_res = oracle_search(current, ref, remaining, reg, score=config.score, jobs=config.jobs)
        history = [HistoryEntry(kind="executed", task=t, tool_id=tool) for t, tool in prefix]
        return TrainingPair(
            scenario=2,
            image_path=save(current, "s2"),
            prompt=format_prompt(history),
            response=format_response(PipelineAction(steps=re_res.best.decision.steps)),
            meta=meta(
                len(re_res.table),
                {
                    "prefix": [{"task": t.value, "tool": tool} for t, tool in prefix],
                    "remaining_tasks": sorted(t.value for t in remaining),
                    "reference": save_ref(),
                },
            ),
        )

    if scenario in (3, 4):
        qualifying = _qualifying_first_steps(result, config.rollback_margin)
        if not qualifying:
            return None
        (task, tool), _ = qualifying[int(rng.integers(len(qualifying)))]
        if scenario == 3:
            stepped = reg.run(tool, degraded)
            history = [HistoryEntry(kind="executed", task=task, tool_id=tool)]
            return TrainingPair(
                scenario=3,
                image_path=save(stepped, "s3"),
                prompt=format_prompt(history),
                response="Rollback",
                meta=meta(
                    len(result.table),
                    {
                        "bad_step": {"task": task.value, "tool": tool},
                        "reference": save_ref(),
                    },
                ),
            )
        filtered = _ban_filtered_best(result, (task, tool), config.score)
        if filtered is None:
            return None
        decision, space_size = filtered
        history = [HistoryEntry(kind="rolled_back", task=task, tool_id=tool)]
        return TrainingPair(
            scenario=4,
            image_path=save(degraded, "s4"),
            prompt=format_prompt(history),
            response=format_response(PipelineAction(steps=decision.steps)),
            meta=meta(
                space_size,
                {
                    "banned": {"task": task.value, "tool": tool},
                    "reference": save_ref(),
                },
            ),
        )

    if scenario == 5:
        assert best.restored is not None
        if _stop_violations(
            best.restored, best.decision.tasks(), tasks, ref, reg, config.score, config.stop_margin
        ):
            return None
        history = [
            HistoryEntry(kind="executed", task=t, tool_id=tool) for t, tool in best.decision.steps
        ]
        return TrainingPair(
            scenario=5,
            image_path=save(best.restored, "s5"),
            prompt=format_prompt(history),
            response="Stop",
            meta=meta(len(result.table), {"reference": save_ref()}),
        )

    raise PipelineError(f"unknown scenario {scenario}")
