"""Command-line front end.

Every subcommand is a thin shell over the library: same arguments, same
results. Exit codes: 0 success, 1 domain error (one JSON object on
stderr), 2 usage error. Set RESTORE_CATALOG to a catalog JSON to override
the default tool registry.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .agent import (
    SINGLE_SHOT,
    STEP_WISE,
    PipelineAction,
    RollbackAction,
    StepAction,
    StopAction,
    make_policy,
    run_episode,
)
from .bench import BenchConfig, adjacent_significance, emit_report, run_comparison
from .dataforge import DEFAULT_MIX, ForgeConfig, generate_pairs
from .degrade import PROFILES, Task, apply_recipe, sample_recipe
from .errors import PipelineError
from .grammar import format_response, parse_response
from .image import load_image, save_image
from .quality import measure
from .search import count_decisions, enumerate_decisions, export_table, oracle_search
from .toolbox import default_catalog, load_catalog


def _registry(args):
    path = getattr(args, "catalog", None) or os.environ.get("RESTORE_CATALOG")
    if path:
        reg = load_catalog(path)
    else:
        reg = default_catalog(include_desnow=getattr(args, "desnow", False))
    return reg.freeze()


def _tasks(arg: str) -> set[Task]:
    return {Task.parse(t.strip()) for t in arg.split(",") if t.strip()}


def _emit(args, payload: dict, human: str | None = None) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload))
    elif human is not None:
        print(human)


def cmd_degrade(args) -> int:
    img = load_image(args.input)
    recipe = sample_recipe(_tasks(args.tasks), rng_seed=args.seed, profile=args.profile,
                           source_id=os.path.basename(args.input))
    out = apply_recipe(img, recipe)
    save_image(out, args.output)
    if args.recipe_out:
        recipe.save(args.recipe_out)
    _emit(args, {"output": args.output, "recipe": recipe.to_json()},
          f"wrote {args.output} ({len(recipe.steps)} steps)")
    return 0


def cmd_restore(args) -> int:
    reg = _registry(args)
    img = load_image(args.input)
    action = parse_response(args.pipeline)
    if isinstance(action, StopAction):
        out = img
    elif isinstance(action, PipelineAction):
        out = img
        for task, tool in action.steps:
            desc = reg.lookup(tool)
            if desc.task is not task:
                raise PipelineError(f"tool {tool} restores {desc.task}, not {task}")
            out = reg.run(tool, out)
    else:
        raise PipelineError("restore accepts a pipeline string or Stop")
    save_image(out, args.output)
    _emit(args, {"output": args.output}, f"wrote {args.output}")
    return 0


def cmd_enumerate(args) -> int:
    reg = _registry(args)
    tasks = _tasks(args.tasks)
    include_partial = not args.full
    space = enumerate_decisions(reg, tasks, include_partial=include_partial)
    count = count_decisions(space.pools, include_partial=include_partial)
    assert count == len(space)
    payload = {"count": count, "partial": include_partial,
               "pools": {t.value: n for t, n in sorted(space.pools.items(), key=lambda kv: kv[0].value)}}
    if args.list:
        payload["decisions"] = [
            format_response(PipelineAction(steps=d.steps)) for d in space.candidates
        ]
    _emit(args, payload, str(count))
    if not args.json and args.list:
        for d in space.candidates:
            print(format_response(PipelineAction(steps=d.steps)))
    return 0


def cmd_oracle(args) -> int:
    reg = _registry(args)
    img = load_image(args.input)
    ref = load_image(args.ref)
    result = oracle_search(img, ref, _tasks(args.tasks), reg, jobs=args.jobs)
    if args.table_out:
        export_table(result, args.table_out)
    if args.out:
        save_image(result.best.restored, args.out)
    best_str = format_response(PipelineAction(steps=result.best.decision.steps))
    payload = {
        "best": best_str,
        "balanced": result.best.report.balanced,
        "metrics": dict(result.best.report.values),
        "space_size": len(result.table),
        "failed": len(result.failed),
    }
    _emit(args, payload, f"{best_str}  (balanced {result.best.report.balanced:.4f}, "
                         f"space {len(result.table)})")
    return 0


def cmd_agent(args) -> int:
    reg = _registry(args)
    img = load_image(args.input)
    ref = load_image(args.ref) if args.ref else None
    policy = make_policy(args.policy, seed=args.seed)
    transcript = run_episode(
        policy, img, reg,
        tasks=_tasks(args.tasks) if args.tasks else None,
        budget=args.budget, mode=args.mode, reference=ref, seed=args.seed,
    )
    if args.out:
        save_image(transcript.final, args.out)
    actions = []
    for e in transcript.entries:
        a = e.action
        if isinstance(a, (PipelineAction, StepAction, StopAction, RollbackAction)):
            actions.append(format_response(a))
    payload = {
        "actions": actions,
        "terminal": transcript.terminal,
        "history": [h.to_json() for h in transcript.history],
    }
    if transcript.entries and transcript.entries[-1].report is not None:
        payload["final_metrics"] = dict(transcript.entries[-1].report.values)
    _emit(args, payload, "\n".join(actions) + f"\n[{transcript.terminal}]")
    return 0


def cmd_datagen(args) -> int:
    reg = _registry(args)
    mix_values = [float(x) for x in args.mix.split(",")]
    if len(mix_values) != 5:
        raise PipelineError("--mix needs 5 comma-separated weights")
    config = ForgeConfig(
        count=args.count,
        mix={i + 1: w for i, w in enumerate(mix_values)},
        seed=args.seed,
        jobs=args.jobs,
    )
    clean_paths = None
    if args.clean_dir:
        clean_paths = sorted(
            str(p) for p in Path(args.clean_dir).iterdir() if p.suffix.lower() == ".png"
        )
        if not clean_paths:
            raise PipelineError(f"no PNG files in {args.clean_dir}")
    out_dir = Path(args.out).parent if Path(args.out).suffix else Path(args.out)
    pairs = generate_pairs(out_dir, reg, config, clean_paths)
    jsonl_default = out_dir / "pairs.jsonl"
    if Path(args.out).suffix and Path(args.out) != jsonl_default:
        os.replace(jsonl_default, args.out)
        target = args.out
    else:
        target = str(jsonl_default)
    counts: dict[int, int] = {}
    for p in pairs:
        counts[p.scenario] = counts.get(p.scenario, 0) + 1
    _emit(args, {"pairs": len(pairs), "by_scenario": counts, "jsonl": target},
          f"wrote {len(pairs)} pairs to {target} {counts}")
    return 0


def cmd_bench(args) -> int:
    reg = _registry(args)
    cfg = BenchConfig.load(args.config) if args.config else BenchConfig()
    if args.jobs:
        cfg.jobs = args.jobs
    if args.seeds:
        cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
    result = run_comparison(cfg, reg)
    report_path = args.report_out or cfg.output
    fmt = "csv" if str(report_path).endswith(".csv") else "markdown"
    emit_report(result.rows, fmt, report_path, cfg.metrics)
    pvals = {}
    order = tuple(cfg.strategies)
    if len(order) >= 2 and len(cfg.seeds) >= 1:
        pvals = {f"{a}<{b}": p for (a, b), p in adjacent_significance(result, order).items()}
    overall = {r.strategy: r.mean_rank_pct for r in result.rows if r.combo == "all"}
    _emit(args, {"report": str(report_path), "overall_rank_pct": overall,
                 "significance": pvals, "errors": result.errors},
          f"wrote {report_path}; overall rank% {overall}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="restopipe", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, catalog=True):
        sp.add_argument("--json", action="store_true", help="machine-readable output")
        if catalog:
            sp.add_argument("--catalog", help="catalog JSON (overrides default tools)")
            sp.add_argument("--desnow", action="store_true",
                            help="register the desnow extension tool")

    sp = sub.add_parser("degrade", help="synthesize degradations onto a clean PNG")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.add_argument("--tasks", required=True, help="comma-separated task names")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--profile", default="mixed", choices=PROFILES)
    sp.add_argument("--recipe-out")
    common(sp, catalog=False)
    sp.set_defaults(func=cmd_degrade)

    sp = sub.add_parser("restore", help="run a literal pipeline string")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", dest="output", required=True)
    sp.add_argument("--pipeline", required=True, help='e.g. "1.denoise denoise_medium." or "Stop"')
    common(sp)
    sp.set_defaults(func=cmd_restore)

    sp = sub.add_parser("enumerate", help="count (and list) the decision space")
    sp.add_argument("--tasks", required=True)
    mode = sp.add_mutually_exclusive_group()
    mode.add_argument("--partial", action="store_true", default=True,
                      help="include shorter pipelines (default)")
    mode.add_argument("--full", action="store_true", help="full-length only")
    sp.add_argument("--list", action="store_true", help="print every decision")
    common(sp)
    sp.set_defaults(func=cmd_enumerate)

    sp = sub.add_parser("oracle", help="exhaustive search for the best pipeline")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--tasks", required=True)
    sp.add_argument("--table-out")
    sp.add_argument("--out", help="save the best restored image")
    sp.add_argument("--jobs", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("agent", help="run a policy episode")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--policy", required=True,
                    help="random|fixed|greedy|oracle|external:<command>")
    sp.add_argument("--mode", choices=[SINGLE_SHOT, STEP_WISE], default=SINGLE_SHOT)
    sp.add_argument("--ref")
    sp.add_argument("--tasks")
    sp.add_argument("--budget", type=int, default=12)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="save the final image")
    common(sp)
    sp.set_defaults(func=cmd_agent)

    sp = sub.add_parser("datagen", help="generate training pairs (JSONL)")
    sp.add_argument("--clean-dir")
    sp.add_argument("--out", required=True, help="output JSONL path or directory")
    sp.add_argument("--count", type=int, default=50)
    sp.add_argument("--mix", default=",".join(str(int(v * 100)) for v in DEFAULT_MIX.values()))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--jobs", type=int, default=1)
    common(sp)
    sp.set_defaults(func=cmd_datagen)

    sp = sub.add_parser("bench", help="strategy comparison report")
    sp.add_argument("--config", help="BenchConfig JSON")
    sp.add_argument("--report-out")
    sp.add_argument("--seeds", help="comma-separated seed overrides")
    sp.add_argument("--jobs", type=int, default=0)
    common(sp)
    sp.set_defaults(func=cmd_bench)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(json.dumps({"error": "FileNotFound", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
