"""Strategy comparison harness.

For every synthesized image the decision space is enumerated and scored
once; each strategy's single-shot decision is then ranked against that
shared table, which keeps the comparison fair across strategies. Rows are
aggregated per degradation combo plus an overall group that averages the
per-combo rank percentages.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agent import SINGLE_SHOT, PipelineAction, StopAction, make_policy
from .degrade import Task, apply_recipe, sample_recipe
from .errors import PipelineError
from .image import ImageBuffer, load_image
from .quality import (
    DEFAULT_METRICS,
    MetricId,
    ScoreConfig,
    measure,
    probe_score,
    zscores,
)
from .search import PipelineDecision, oracle_search, rank_of
from .toolbox import ToolRegistry


@dataclass(frozen=True)
class ComboSpec:
    tasks: tuple[Task, ...]
    count: int

    def label(self) -> str:
        return "+".join(t.value for t in self.tasks)


DEFAULT_DATASET: tuple[ComboSpec, ...] = (
    ComboSpec((Task.DENOISE, Task.DEJPEG), 30),
    ComboSpec((Task.LOWLIGHT, Task.DENOISE), 20),
    ComboSpec((Task.DEBLUR, Task.DENOISE, Task.DEJPEG), 20),
    ComboSpec((Task.DERAIN, Task.DENOISE, Task.DEJPEG), 15),
    ComboSpec((Task.DEHAZE, Task.DENOISE, Task.DEJPEG), 15),
    ComboSpec((Task.DEHAZE, Task.DERAIN, Task.DENOISE, Task.DEJPEG), 10),
    ComboSpec((Task.DEBLUR, Task.DERAIN, Task.DENOISE, Task.DEJPEG), 10),
)

DEFAULT_STRATEGIES = ("oracle", "greedy", "fixed", "random")


@dataclass
class BenchConfig:
    dataset: tuple[ComboSpec, ...] = DEFAULT_DATASET
    strategies: tuple[str, ...] = DEFAULT_STRATEGIES
    metrics: tuple[MetricId, ...] = DEFAULT_METRICS
    seeds: tuple[int, ...] = (0,)
    output: str = "bench_report.md"
    size: int = 128
    profile: str = "mixed"
    jobs: int = 1
    clean_dir: str | None = None

    @property
    def score(self) -> ScoreConfig:
        return ScoreConfig(metrics=self.metrics)

    @classmethod
    def from_json(cls, obj: dict) -> "BenchConfig":
        dataset = tuple(
            ComboSpec(tuple(Task.parse(t) for t in row["tasks"]), int(row["count"]))
            for row in obj["dataset"]
        )
        metrics = tuple(
            MetricId(m, higher_better=True) if isinstance(m, str)
            else MetricId(m["name"], bool(m.get("higher_better", True)))
            for m in obj.get("metrics", ["psnr", "ssim"])
        )
        return cls(
            dataset=dataset,
            strategies=tuple(obj.get("strategies", DEFAULT_STRATEGIES)),
            metrics=metrics,
            seeds=tuple(obj.get("seeds", [0])),
            output=obj.get("output", "bench_report.md"),
            size=int(obj.get("size", 128)),
            profile=obj.get("profile", "mixed"),
            jobs=int(obj.get("jobs", 1)),
            clean_dir=obj.get("clean_dir"),
        )

    @classmethod
    def load(cls, path: str | os.PathLike) -> "BenchConfig":
        with open(path) as f:
            return cls.from_json(json.load(f))


@dataclass
class ImageRecord:
    """One (seed, image, strategy) measurement."""

    seed: int
    combo: str
    image_index: int
    strategy: str
    rank: int
    space_size: int
    balanced: float
    values: dict[str, float]


@dataclass
class ReportRow:
    combo: str
    strategy: str
    metric_means: dict[str, float]
    balanced_mean: float
    balanced_pool_mean: float
    mean_rank: float
    mean_rank_pct: float
    space_size: int
    images: int


@dataclass
class BenchResult:
    rows: list[ReportRow]
    records: list[ImageRecord]
    errors: list[str] = field(default_factory=list)

    def pct_series(self, strategy: str) -> list[float]:
        """Per-(seed, image) rank percentages in a stable order."""
        recs = sorted(
            (r for r in self.records if r.strategy == strategy),
            key=lambda r: (r.seed, r.combo, r.image_index),
        )
        return [100.0 * r.rank / r.space_size for r in recs]


def _clean_sources(cfg: BenchConfig) -> list[str] | None:
    if cfg.clean_dir is None:
        return None
    paths = sorted(
        str(p) for p in Path(cfg.clean_dir).iterdir() if p.suffix.lower() == ".png"
    )
    if not paths:
        raise PipelineError(f"no PNG files in {cfg.clean_dir}")
    return paths


def run_comparison(cfg: BenchConfig, reg: ToolRegistry) -> BenchResult:
    """Synthesize the dataset, oracle-search every image once per seed, and
    rank each strategy's decision against the shared table."""
    from .synthetic import clean_image

    sources = _clean_sources(cfg)
    records: list[ImageRecord] = []
    errors: list[str] = []

    work = []
    for seed in cfg.seeds:
        counter = 0
        for combo in cfg.dataset:
            for i in range(combo.count):
                work.append((seed, combo, counter, i))
                counter += 1

    def one(item):
        seed, combo, counter, i = item
        img_seed = int(
            np.random.SeedSequence(entropy=seed, spawn_key=(counter,)).generate_state(1)[0]
        )
        if sources:
            ref = load_image(sources[counter % len(sources)])
        else:
            ref = clean_image(img_seed, cfg.size, cfg.size)
        recipe = sample_recipe(set(combo.tasks), rng_seed=img_seed, profile=cfg.profile)
        degraded = apply_recipe(ref, recipe)
        try:
            result = oracle_search(degraded, ref, recipe.tasks, reg, score=cfg.score)
        except PipelineError as exc:
            return None, f"seed={seed} {combo.label()}#{i}: {exc}"
        out = []
        n = len(result.table)
        for strategy in cfg.strategies:
            policy = make_policy(strategy, seed=img_seed)
            from .agent import PolicyRequest

            request = PolicyRequest(
                image=degraded,
                history=(),
                available={t: reg.pool(t) for t in sorted(recipe.tasks, key=lambda x: x.value)},
                mode=SINGLE_SHOT,
                registry=reg,
                reference=ref,
                score=cfg.score,
                rng=np.random.Generator(np.random.Philox(key=img_seed)),
            )
            action = policy.decide(request)
            if isinstance(action, StopAction):
                # empty decision: rank the unprocessed image as a probe
                report = measure(degraded, ref, cfg.score)
                s = probe_score(report, result.stats, cfg.metrics)
                rank = 1 + sum(
                    1 for c in result.table if c.report.balanced > s
                )
                values = dict(report.values)
                balanced = s
            else:
                assert isinstance(action, PipelineAction)
                decision = PipelineDecision(steps=action.steps)
                outcome = result.outcome_for(decision)
                rank = rank_of(decision, result.table)
                values = dict(outcome.report.values)
                balanced = float(outcome.report.balanced)
            out.append(
                ImageRecord(
                    seed=seed,
                    combo=combo.label(),
                    image_index=counter,
                    strategy=strategy,
                    rank=rank,
                    space_size=n,
                    balanced=balanced,
                    values=values,
                )
            )
        return out, None

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(one, work))
    else:
        results = [one(item) for item in work]

    for out, err in results:
        if err is not None:
            errors.append(err)
        else:
            records.extend(out)

    rows = _aggregate(cfg, records)
    return BenchResult(rows=rows, records=records, errors=errors)


def _aggregate(cfg: BenchConfig, records: list[ImageRecord]) -> list[ReportRow]:
    rows: list[ReportRow] = []
    combos = [c.label() for c in cfg.dataset]

    # dataset-level standardization pool per combo (for the transparency
    # column): all strategies' raw values pooled together
    pool_scores: dict[tuple[str, int, int, str], float] = {}
    for combo in combos:
        recs = [r for r in records if r.combo == combo]
        if len(recs) < 2:
            continue
        total = np.zeros(len(recs))
        for m in cfg.metrics:
            z = np.asarray(zscores([r.values[m.name] for r in recs]))
            if not m.higher_better:
                z = -z
            total += z
        for r, s in zip(recs, total):
            pool_scores[(r.combo, r.seed, r.image_index, r.strategy)] = float(s)

    for combo in combos:
        for strategy in cfg.strategies:
            recs = [r for r in records if r.combo == combo and r.strategy == strategy]
            if not recs:
                continue
            rows.append(
                ReportRow(
                    combo=combo,
                    strategy=strategy,
                    metric_means={
                        m.name: float(np.mean([r.values[m.name] for r in recs]))
                        for m in cfg.metrics
                    },
                    balanced_mean=float(np.mean([r.balanced for r in recs])),
                    balanced_pool_mean=float(
                        np.mean(
                            [
                                pool_scores.get((r.combo, r.seed, r.image_index, r.strategy), 0.0)
                                for r in recs
                            ]
                        )
                    ),
                    mean_rank=float(np.mean([r.rank for r in recs])),
                    mean_rank_pct=float(np.mean([100.0 * r.rank / r.space_size for r in recs])),
                    space_size=recs[0].space_size,
                    images=len(recs),
                )
            )

    # overall group: average of per-combo values
    for strategy in cfg.strategies:
        combo_rows = [r for r in rows if r.strategy == strategy]
        if not combo_rows:
            continue
        rows.append(
            ReportRow(
                combo="all",
                strategy=strategy,
                metric_means={
                    m.name: float(np.mean([r.metric_means[m.name] for r in combo_rows]))
                    for m in cfg.metrics
                },
                balanced_mean=float(np.mean([r.balanced_mean for r in combo_rows])),
                balanced_pool_mean=float(np.mean([r.balanced_pool_mean for r in combo_rows])),
                mean_rank=float(np.mean([r.mean_rank for r in combo_rows])),
                mean_rank_pct=float(np.mean([r.mean_rank_pct for r in combo_rows])),
                space_size=0,
                images=sum(r.images for r in combo_rows),
            )
        )
    return rows


def adjacent_significance(
    result: BenchResult, order: tuple[str, ...] = DEFAULT_STRATEGIES
) -> dict[tuple[str, str], float]:
    """One-sided paired t-test p-values that each strategy's per-image rank
    percentage is lower (better) than the next one's."""
    from scipy import stats

    out = {}
    for a, b in zip(order, order[1:]):
        xa = np.asarray(result.pct_series(a))
        xb = np.asarray(result.pct_series(b))
        if len(xa) != len(xb) or len(xa) < 2:
            raise PipelineError(f"cannot pair series for {a} vs {b}")
        diff = xa - xb
        if np.allclose(diff, 0.0):
            out[(a, b)] = 1.0
            continue
        t = stats.ttest_rel(xa, xb, alternative="less")
        out[(a, b)] = float(t.pvalue)
    return out


def emit_report(rows: list[ReportRow], fmt: str, path: str | os.PathLike, metrics: tuple[MetricId, ...] = DEFAULT_METRICS) -> None:
    """Write the comparison table. Column order: metrics (config order),
    balanced, ranking."""
    if not rows:
        raise PipelineError("no rows to report")
    if fmt not in ("markdown", "csv"):
        raise PipelineError(f"unknown report format {fmt!r}")
    text = render_report(rows, fmt, metrics)
    with open(path, "w") as f:
        f.write(text)


def render_report(rows: list[ReportRow], fmt: str, metrics: tuple[MetricId, ...] = DEFAULT_METRICS) -> str:
    header = (
        ["combo", "strategy"]
        + [m.name.upper() for m in metrics]
        + ["balanced", "balanced_pool", "ranking", "ranking_pct", "N", "images"]
    )

    def cells(r: ReportRow) -> list[str]:
        return (
            [r.combo, r.strategy]
            + [f"{r.metric_means[m.name]:.4f}" for m in metrics]
            + [
                f"{r.balanced_mean:.4f}",
                f"{r.balanced_pool_mean:.4f}",
                f"{r.mean_rank:.2f}",
                f"{r.mean_rank_pct:.2f}",
                str(r.space_size) if r.space_size else "-",
                str(r.images),
            ]
        )

    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(header)
        for r in rows:
            w.writerow(cells(r))
        return buf.getvalue()

    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        lines.append("| " + " | ".join(cells(r)) + " |")
    return "\n".join(lines) + "\n"
