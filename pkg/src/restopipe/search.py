"""Decision space enumeration and exhaustive oracle search.

A pipeline decision is an ordered sequence of (task, tool) pairs with no
repeated task. The decision space for an image's task set is every such
sequence over non-empty task subsets (partial mode, the default) or over
the full task set only. The oracle executes all of them, standardizes the
metric table, and ranks.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .degrade import Task
from .errors import (
    DecisionNotInSpace,
    EmptyPipeline,
    EmptyPools,
    PipelineError,
    TaskWithoutTool,
    UnfrozenRegistry,
)
from .image import ImageBuffer
from .quality import (
    ScoreConfig,
    ScoreReport,
    ZScoreStats,
    balanced_scores,
    measure,
    zscore_stats,
)
from .toolbox import ToolRegistry


@dataclass(frozen=True)
class PipelineDecision:
    """σ: ordered (task, tool_id) steps, at least one, no repeated task."""

    steps: tuple[tuple[Task, str], ...]

    def __post_init__(self):
        steps = tuple((Task.parse(t) if not isinstance(t, Task) else t, tool) for t, tool in self.steps)
        object.__setattr__(self, "steps", steps)
        if not steps:
            raise EmptyPipeline("a decision needs at least one step")
        tasks = [t for t, _ in steps]
        if len(set(tasks)) != len(tasks):
            raise PipelineError(f"decision repeats a task: {tasks}")

    def sort_key(self) -> tuple:
        return tuple((t.value, tool) for t, tool in self.steps)

    def tasks(self) -> frozenset[Task]:
        return frozenset(t for t, _ in self.steps)

    def to_json(self) -> list[dict]:
        return [{"task": t.value, "tool": tool} for t, tool in self.steps]

    @classmethod
    def from_json(cls, obj: list[dict]) -> "PipelineDecision":
        return cls(steps=tuple((Task.parse(s["task"]), s["tool"]) for s in obj))


@dataclass
class CandidateOutcome:
    decision: PipelineDecision
    report: ScoreReport | None = None
    restored: ImageBuffer | None = None
    rank: int | None = None
    error: str | None = None

    @property
    def balanced(self) -> float | None:
        return None if self.report is None else self.report.balanced

    def to_json(self, image_path: str | None = None) -> dict:
        return {
            "decision": self.decision.to_json(),
            "metrics": None if self.report is None else dict(self.report.values),
            "balanced": self.balanced,
            "rank": self.rank,
            "error": self.error,
            "image": image_path,
        }


@dataclass
class DecisionSpace:
    tasks: frozenset[Task]
    pools: dict[Task, int]
    include_partial: bool
    candidates: list[PipelineDecision] = field(repr=False)

    def __len__(self) -> int:
        return len(self.candidates)


def count_decisions(pools: dict[Task, int], include_partial: bool = True) -> int:
    """Closed-form size of the decision space.

    Partial: Σ over non-empty task subsets T of |T|! · Π pool sizes in T.
    Full-length: n! · Π pool sizes.
    """
    if not pools:
        raise EmptyPools("need at least one task pool")
    sizes = list(pools.values())
    if any(m < 1 for m in sizes):
        raise EmptyPools(f"every pool needs at least one tool: {pools}")
    if not include_partial:
        return math.factorial(len(sizes)) * math.prod(sizes)
    total = 0
    for k in range(1, len(sizes) + 1):
        for combo in itertools.combinations(sizes, k):
            total += math.factorial(k) * math.prod(combo)
    return total


def enumerate_decisions(
    reg: ToolRegistry, tasks, include_partial: bool = True
) -> DecisionSpace:
    """All valid decisions, lexicographically ordered and duplicate-free."""
    if not reg.frozen:
        raise UnfrozenRegistry("freeze the registry before enumerating")
    tasks = sorted(
        {Task.parse(t) if not isinstance(t, Task) else t for t in tasks},
        key=lambda t: t.value,
    )
    if not tasks:
        raise EmptyPools("need at least one task")
    pools: dict[Task, list[str]] = {}
    for t in tasks:
        pool = reg.pool(t)
        if not pool:
            raise TaskWithoutTool(t.value)
        pools[t] = pool

    candidates: list[PipelineDecision] = []
    lengths = range(1, len(tasks) + 1) if include_partial else [len(tasks)]
    for k in lengths:
        for perm in itertools.permutations(tasks, k):
            for combo in itertools.product(*(pools[t] for t in perm)):
                candidates.append(PipelineDecision(steps=tuple(zip(perm, combo))))
    candidates.sort(key=lambda d: d.sort_key())
    return DecisionSpace(
        tasks=frozenset(tasks),
        pools={t: len(p) for t, p in pools.items()},
        include_partial=include_partial,
        candidates=candidates,
    )


def evaluate_candidate(
    img: ImageBuffer,
    ref: ImageBuffer,
    decision: PipelineDecision,
    reg: ToolRegistry,
    score: ScoreConfig | None = None,
) -> ScoreReport:
    """Run the decision's tools in order and measure the result against ref."""
    current = img
    for task, tool_id in decision.steps:
        desc = reg.lookup(tool_id)
        if desc.task is not task:
            raise PipelineError(f"tool {tool_id} belongs to {desc.task}, not {task}")
        current = reg.run(tool_id, current)
    return measure(current, ref, score)


@dataclass
class OracleResult:
    best: CandidateOutcome
    table: list[CandidateOutcome]
    stats: ZScoreStats | None
    failed: list[CandidateOutcome] = field(default_factory=list)

    def outcome_for(self, decision: PipelineDecision) -> CandidateOutcome:
        key = decision.sort_key()
        for c in self.table + self.failed:
            if c.decision.sort_key() == key:
                return c
        raise DecisionNotInSpace(str(key))


def _walk_tree(
    ref: ImageBuffer,
    reg: ToolRegistry,
    score: ScoreConfig,
    prefix_tasks: frozenset[Task],
    tasks: list[Task],
    pools: dict[Task, list[str]],
    current: ImageBuffer,
    sink: dict[tuple, tuple[ScoreReport | None, ImageBuffer | None, str | None]],
    prefix_key: tuple,
    measure_all: bool,
    keep_images: bool,
):
    """Depth-first evaluation sharing prefix executions.

    Every node of the prefix tree is one candidate (partial mode); a failing
    tool fails the node and its whole subtree. With measure_all=False only
    full-length leaves are measured. Images are held on the recursion path
    only, unless keep_images is set.
    """
    for task in tasks:
        if task in prefix_tasks:
            continue
        for tool_id in pools[task]:
            key = prefix_key + ((task.value, tool_id),)
            try:
                nxt = reg.run(tool_id, current)
            except PipelineError as exc:
                _fail_subtree(key, f"{type(exc).__name__}: {exc}", tasks, pools, prefix_tasks | {task}, sink)
                continue
            report = measure(nxt, ref, score) if (measure_all or len(key) == len(tasks)) else None
            sink[key] = (report, nxt if keep_images else None, None)
            _walk_tree(
                ref, reg, score, prefix_tasks | {task}, tasks, pools, nxt, sink, key,
                measure_all, keep_images,
            )


def _fail_subtree(key, message, tasks, pools, used, sink):
    sink[key] = (None, None, message)
    for task in tasks:
        if task in used:
            continue
        for tool_id in pools[task]:
            _fail_subtree(key + ((task.value, tool_id),), message, tasks, pools, used | {task}, sink)


def oracle_search(
    img: ImageBuffer,
    ref: ImageBuffer,
    tasks,
    reg: ToolRegistry,
    score: ScoreConfig | None = None,
    include_partial: bool = True,
    jobs: int = 1,
    keep_images: bool = False,
) -> OracleResult:
    """Evaluate the whole decision space; best has rank 1.

    Failed candidates are excluded from the z-score population and ranking
    but recorded. Ties broken by lexicographic decision order. Parallel and
    serial runs produce identical tables (pure evaluations, stable merge).
    """
    score = score or ScoreConfig()
    space = enumerate_decisions(reg, tasks, include_partial=True)
    task_list = sorted(space.tasks, key=lambda t: t.value)
    pools = {t: reg.pool(t) for t in task_list}

    sink: dict[tuple, tuple] = {}
    measure_all = include_partial
    if jobs <= 1:
        _walk_tree(
            ref, reg, score, frozenset(), task_list, pools, img, sink, (),
            measure_all, keep_images,
        )
    else:
        branches = [
            (task, tool_id) for task in task_list for tool_id in pools[task]
        ]

        def run_branch(branch):
            task, tool_id = branch
            local: dict[tuple, tuple] = {}
            key = ((task.value, tool_id),)
            try:
                nxt = reg.run(tool_id, img)
            except PipelineError as exc:
                _fail_subtree(key, f"{type(exc).__name__}: {exc}", task_list, pools, frozenset({task}), local)
                return local
            report = measure(nxt, ref, score) if (measure_all or len(task_list) == 1) else None
            local[key] = (report, nxt if keep_images else None, None)
            _walk_tree(
                ref, reg, score, frozenset({task}), task_list, pools, nxt, local, key,
                measure_all, keep_images,
            )
            return local

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for local in pool.map(run_branch, branches):
                sink.update(local)

    wanted = space.candidates if include_partial else enumerate_decisions(reg, tasks, include_partial=False).candidates

    ok: list[CandidateOutcome] = []
    failed: list[CandidateOutcome] = []
    for dec in wanted:
        report, restored, err = sink[dec.sort_key()]
        if err is not None:
            failed.append(CandidateOutcome(decision=dec, error=err))
        else:
            ok.append(
                CandidateOutcome(decision=dec, report=report.copy(), restored=restored)
            )
    if not ok:
        raise PipelineError("every candidate in the decision space failed")

    reports = [c.report for c in ok]
    if len(ok) == 1:
        # a lone candidate has no population to standardize against
        ok[0].report.balanced = 0.0
        ok[0].rank = 1
        stats = None
    else:
        scores = balanced_scores(reports, score.metrics, score.weights)
        for c, s in zip(ok, scores):
            c.report.balanced = s
        for c in ok:
            c.rank = 1 + sum(1 for s in scores if s > c.report.balanced)
        stats = zscore_stats(reports, score.metrics)

    table = sorted(ok, key=lambda c: (c.rank, c.decision.sort_key()))

    best = table[0]
    if not keep_images:
        # re-derive only the winner's image so callers can use it
        current = img
        for task, tool_id in best.decision.steps:
            current = reg.run(tool_id, current)
        best.restored = current
    return OracleResult(best=best, table=table, stats=stats, failed=failed)


def rank_of(decision: PipelineDecision, table: list[CandidateOutcome]) -> int:
    """1 + number of candidates with strictly greater balanced score."""
    key = decision.sort_key()
    for c in table:
        if c.decision.sort_key() == key:
            assert c.rank is not None
            return c.rank
    raise DecisionNotInSpace(str(key))


def export_table(
    result: OracleResult, path: str | os.PathLike, image_paths: dict[tuple, str] | None = None
) -> None:
    """One CandidateOutcome JSON object per line, ranked entries first."""
    with open(path, "w") as f:
        for c in result.table + result.failed:
            ip = None if image_paths is None else image_paths.get(c.decision.sort_key())
            f.write(json.dumps(c.to_json(image_path=ip)) + "\n")
