"""Step-wise agent sessions: actions, snapshots, rollback, policies.

A session owns the current image, a snapshot stack of pre-step states, an
execution history, and the set of (task, tool) pairs banned by rollbacks.
Policies decide the next action; episodes run them to Stop or budget
exhaustion.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .degrade import Task
from .errors import (
    BannedStep,
    BudgetExhausted,
    NothingToRollback,
    PipelineError,
    PolicyProtocolViolation,
    RepeatedTask,
)
from .image import ImageBuffer, save_image
from .quality import ScoreConfig, ScoreReport, balanced_scores, measure
from .search import PipelineDecision, enumerate_decisions, oracle_search
from .toolbox import ToolRegistry

DEFAULT_BUDGET = 12

SINGLE_SHOT = "single-shot"
STEP_WISE = "step-wise"


# --- actions ----------------------------------------------------------------

@dataclass(frozen=True)
class PipelineAction:
    steps: tuple[tuple[Task, str], ...]

    def __post_init__(self):
        if not self.steps:
            raise PolicyProtocolViolation("empty pipeline action")


@dataclass(frozen=True)
class StepAction:
    task: Task
    tool_id: str


@dataclass(frozen=True)
class RollbackAction:
    pass


@dataclass(frozen=True)
class StopAction:
    pass


AgentAction = PipelineAction | StepAction | RollbackAction | StopAction


@dataclass(frozen=True)
class HistoryEntry:
    kind: str  # "executed" | "rolled_back"
    task: Task
    tool_id: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "task": self.task.value, "tool": self.tool_id}


# --- session ----------------------------------------------------------------

class AgentSession:
    """Mutable session state; snapshots restore bit-exactly on rollback."""

    def __init__(self, initial: ImageBuffer, reg: ToolRegistry, budget: int = DEFAULT_BUDGET):
        if budget < 1:
            raise BudgetExhausted("budget must be at least 1")
        self.initial = initial
        self.current = initial
        self.registry = reg
        self.snapshots: list[ImageBuffer] = []
        self.history: list[HistoryEntry] = []
        self.banned: set[tuple[Task, str]] = set()
        self.budget_remaining = budget

    def active_tasks(self) -> set[Task]:
        """Tasks executed and not rolled back."""
        return {e.task for e in self.history if e.kind == "executed"}

    def execute_step(self, task: Task, tool_id: str) -> "AgentSession":
        if self.budget_remaining <= 0:
            raise BudgetExhausted("no budget left")
        if (task, tool_id) in self.banned:
            raise BannedStep(f"({task}, {tool_id}) was rolled back in this session")
        if task in self.active_tasks():
            raise RepeatedTask(f"{task} already executed without rollback")
        out = self.registry.run(tool_id, self.current)  # may raise; state untouched
        self.snapshots.append(self.current)
        self.current = out
        self.history.append(HistoryEntry(kind="executed", task=task, tool_id=tool_id))
        self.budget_remaining -= 1
        return self

    def rollback(self) -> "AgentSession":
        if not self.snapshots:
            raise NothingToRollback("no executed step to revert")
        self.current = self.snapshots.pop()
        for i in range(len(self.history) - 1, -1, -1):
            if self.history[i].kind == "executed":
                e = self.history[i]
                self.history[i] = HistoryEntry(kind="rolled_back", task=e.task, tool_id=e.tool_id)
                self.banned.add((e.task, e.tool_id))
                break
        self.budget_remaining -= 1
        return self

    def available(self, tasks=None) -> dict[Task, list[str]]:
        """Selectable (task -> tools): not banned, task not actively executed."""
        tasks = self.registry.tasks() if tasks is None else sorted(
            {Task.parse(t) if not isinstance(t, Task) else t for t in tasks},
            key=lambda t: t.value,
        )
        active = self.active_tasks()
        out: dict[Task, list[str]] = {}
        for t in tasks:
            if t in active:
                continue
            pool = [x for x in self.registry.pool(t) if (t, x) not in self.banned]
            if pool:
                out[t] = pool
        return out

    def replay_current(self) -> ImageBuffer:
        """Re-derive the current image from history; used by integrity checks."""
        img = self.initial
        for e in self.history:
            if e.kind == "executed":
                img = self.registry.run(e.tool_id, img)
        return img


# --- policy protocol ---------------------------------------------------------

@dataclass
class PolicyRequest:
    image: ImageBuffer
    history: tuple[HistoryEntry, ...]
    available: dict[Task, list[str]]
    mode: str
    registry: ToolRegistry
    reference: ImageBuffer | None = None
    score: ScoreConfig = field(default_factory=ScoreConfig)
    rng: np.random.Generator | None = None


class Policy:
    name = "policy"
    needs_reference = False

    def decide(self, request: PolicyRequest) -> AgentAction:
        raise NotImplementedError


# --- episode runner ----------------------------------------------------------

@dataclass
class TranscriptEntry:
    action: AgentAction
    report: ScoreReport | None


@dataclass
class AgentTranscript:
    entries: list[TranscriptEntry]
    terminal: str  # "stop" | "budget-exhausted"
    final: ImageBuffer
    history: tuple[HistoryEntry, ...]

    def actions(self) -> list[AgentAction]:
        return [e.action for e in self.entries]

    def replay(self, initial: ImageBuffer, reg: ToolRegistry) -> ImageBuffer:
        """Re-run the recorded actions; must reproduce `final` bit-exactly."""
        session = AgentSession(initial, reg, budget=max(len(self.entries), 1))
        for entry in self.entries:
            a = entry.action
            if isinstance(a, PipelineAction):
                for task, tool in a.steps:
                    if session.budget_remaining <= 0:
                        break
                    session.execute_step(task, tool)
            elif isinstance(a, StepAction):
                session.execute_step(a.task, a.tool_id)
            elif isinstance(a, RollbackAction):
                session.rollback()
        return session.current


def run_episode(
    policy: Policy,
    initial: ImageBuffer,
    reg: ToolRegistry,
    tasks=None,
    budget: int = DEFAULT_BUDGET,
    mode: str = SINGLE_SHOT,
    reference: ImageBuffer | None = None,
    score: ScoreConfig | None = None,
    seed: int | None = None,
) -> AgentTranscript:
    """Run one episode.

    single-shot: the policy is queried once and must answer Pipeline or
    Stop. step-wise: the policy is queried with (current image, history)
    after every action and answers Step, Rollback or Stop. Episodes end on
    Stop or when the budget runs out.
    """
    if mode not in (SINGLE_SHOT, STEP_WISE):
        raise PolicyProtocolViolation(f"unknown mode {mode!r}")
    if policy.needs_reference and reference is None:
        raise PolicyProtocolViolation(f"{policy.name} policy needs a reference image")
    score = score or ScoreConfig()
    session = AgentSession(initial, reg, budget=budget)
    rng = None if seed is None else np.random.Generator(np.random.Philox(key=seed))
    entries: list[TranscriptEntry] = []

    def report_now() -> ScoreReport | None:
        return None if reference is None else measure(session.current, reference, score)

    def request() -> PolicyRequest:
        return PolicyRequest(
            image=session.current,
            history=tuple(session.history),
            available=session.available(tasks),
            mode=mode,
            registry=reg,
            reference=reference,
            score=score,
            rng=rng,
        )

    if mode == SINGLE_SHOT:
        action = policy.decide(request())
        if isinstance(action, StopAction):
            entries.append(TranscriptEntry(action, report_now()))
            terminal = "stop"
        elif isinstance(action, PipelineAction):
            terminal = "stop"
            for task, tool in action.steps:
                if session.budget_remaining <= 0:
                    terminal = "budget-exhausted"
                    break
                session.execute_step(task, tool)
            entries.append(TranscriptEntry(action, report_now()))
        else:
            raise PolicyProtocolViolation(
                f"single-shot mode allows Pipeline or Stop, got {type(action).__name__}"
            )
        return AgentTranscript(entries, terminal, session.current, tuple(session.history))

    terminal = "budget-exhausted"
    while session.budget_remaining > 0:
        action = policy.decide(request())
        if isinstance(action, StopAction):
            entries.append(TranscriptEntry(action, report_now()))
            terminal = "stop"
            break
        if isinstance(action, StepAction):
            session.execute_step(action.task, action.tool_id)
        elif isinstance(action, RollbackAction):
            session.rollback()
        else:
            raise PolicyProtocolViolation(
                f"step-wise mode allows Step, Rollback or Stop, got {type(action).__name__}"
            )
        entries.append(TranscriptEntry(action, report_now()))
    return AgentTranscript(entries, terminal, session.current, tuple(session.history))


# --- builtin policies --------------------------------------------------------

def _middle_tool(pool: list[str]) -> str:
    return pool[(len(pool) + 1) // 2 - 1]  # 1-indexed ceil(m/2)


class RandomPolicy(Policy):
    """Full-length pipeline, uniform task order, uniform tool per task."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._plan: list[tuple[Task, str]] | None = None

    def _draw(self, request: PolicyRequest) -> list[tuple[Task, str]]:
        rng = request.rng or np.random.Generator(np.random.Philox(key=self.seed))
        tasks = sorted(request.available, key=lambda t: t.value)
        order = list(rng.permutation(len(tasks)))
        return [
            (tasks[i], request.available[tasks[i]][int(rng.integers(len(request.available[tasks[i]])))])
            for i in order
        ]

    def decide(self, request: PolicyRequest) -> AgentAction:
        if request.mode == SINGLE_SHOT:
            plan = self._draw(request)
            return PipelineAction(steps=tuple(plan)) if plan else StopAction()
        if self._plan is None:
            self._plan = self._draw(request)
        while self._plan:
            task, tool = self._plan[0]
            if task in request.available and tool in request.available[task]:
                self._plan.pop(0)
                return StepAction(task, tool)
            self._plan.pop(0)
        return StopAction()


# expert template: undo degradations in reverse of the usual
# capture-to-codec order (codec artifacts first, lighting last)
DEFAULT_PRIORITY = (
    Task.DEJPEG,
    Task.DENOISE,
    Task.DEBLUR,
    Task.DESNOW,
    Task.DERAIN,
    Task.DEHAZE,
    Task.LOWLIGHT,
)

DEFAULT_FIXED_TOOLS = {
    Task.DENOISE: "denoise_medium",
    Task.DEJPEG: "dejpeg_mild",
}


class FixedPolicy(Policy):
    """One predefined template: priority-ordered tasks, preconfigured tools."""

    name = "fixed"

    def __init__(self, priority=DEFAULT_PRIORITY, tools: dict[Task, str] | None = None):
        self.priority = tuple(Task.parse(t) if not isinstance(t, Task) else t for t in priority)
        self.tools = dict(DEFAULT_FIXED_TOOLS if tools is None else tools)

    def _pick(self, task: Task, pool: list[str]) -> str:
        configured = self.tools.get(task)
        if configured and configured in pool:
            return configured
        return _middle_tool(pool)

    def _plan(self, request: PolicyRequest) -> list[tuple[Task, str]]:
        plan = []
        for task in self.priority:
            if task in request.available:
                plan.append((task, self._pick(task, request.available[task])))
        return plan

    def decide(self, request: PolicyRequest) -> AgentAction:
        plan = self._plan(request)
        if request.mode == SINGLE_SHOT:
            return PipelineAction(steps=tuple(plan)) if plan else StopAction()
        return StepAction(*plan[0]) if plan else StopAction()


class GreedyPolicy(Policy):
    """Takes the single next step with the best balanced score against the
    reference; stops when nothing improves on the current image."""

    name = "greedy"
    needs_reference = True

    def _best_step(
        self, image: ImageBuffer, available: dict[Task, list[str]], request: PolicyRequest
    ) -> tuple[Task, str] | None:
        assert request.reference is not None
        pairs = [(t, tool) for t in sorted(available, key=lambda x: x.value) for tool in available[t]]
        if not pairs:
            return None
        current_report = measure(image, request.reference, request.score)
        reports = [current_report]
        for task, tool in pairs:
            out = request.registry.run(tool, image)
            reports.append(measure(out, request.reference, request.score))
        scores = balanced_scores(reports, request.score.metrics, request.score.weights)
        best_i = max(range(1, len(scores)), key=lambda i: (scores[i], -i))
        if scores[best_i] <= scores[0]:
            return None
        return pairs[best_i - 1]

    def decide(self, request: PolicyRequest) -> AgentAction:
        if request.mode == STEP_WISE:
            step = self._best_step(request.image, request.available, request)
            return StepAction(*step) if step else StopAction()
        # single-shot: simulate the greedy walk and emit the whole pipeline
        image = request.image
        available = {t: list(p) for t, p in request.available.items()}
        plan: list[tuple[Task, str]] = []
        while available:
            step = self._best_step(image, available, request)
            if step is None:
                break
            task, tool = step
            image = request.registry.run(tool, image)
            plan.append(step)
            del available[task]
        return PipelineAction(steps=tuple(plan)) if plan else StopAction()


class OraclePolicy(Policy):
    """Wraps the exhaustive search; single-shot answers the rank-1 pipeline,
    step-wise re-searches the remaining tasks each turn."""

    name = "oracle"
    needs_reference = True

    def __init__(self, include_partial: bool = True, jobs: int = 1):
        self.include_partial = include_partial
        self.jobs = jobs

    def decide(self, request: PolicyRequest) -> AgentAction:
        assert request.reference is not None
        if not request.available:
            return StopAction()
        if request.mode == SINGLE_SHOT:
            result = oracle_search(
                request.image,
                request.reference,
                set(request.available),
                request.registry,
                score=request.score,
                include_partial=self.include_partial,
                jobs=self.jobs,
            )
            return PipelineAction(steps=result.best.decision.steps)

        # step-wise: evaluate remaining candidates on the current image,
        # honoring bans, and compare the best against doing nothing
        space = enumerate_decisions(request.registry, set(request.available), include_partial=True)
        banned_free = [
            c for c in space.candidates
            if all(tool in request.available.get(task, []) for task, tool in c.steps)
        ]
        if not banned_free:
            return StopAction()
        current_report = measure(request.image, request.reference, request.score)
        reports = [current_report]
        finals: list[PipelineDecision] = []
        for cand in banned_free:
            img = request.image
            for _, tool in cand.steps:
                img = request.registry.run(tool, img)
            reports.append(measure(img, request.reference, request.score))
            finals.append(cand)
        scores = balanced_scores(reports, request.score.metrics, request.score.weights)
        order = sorted(
            range(1, len(scores)),
            key=lambda i: (-scores[i], finals[i - 1].sort_key()),
        )
        best_i = order[0]
        if scores[best_i] <= scores[0]:
            return StopAction()
        task, tool = finals[best_i - 1].steps[0]
        return StepAction(task, tool)


class ExternalPolicy(Policy):
    """Subprocess policy speaking line-delimited JSON.

    Request: {"image": path, "prompt": str, "history": [...],
              "available": [{"task": str, "tools": [...]}], "mode": str}
    Response: {"action": "pipeline"|"step"|"rollback"|"stop", "steps": [...]}
    """

    name = "external"

    def __init__(self, command: list[str] | str, timeout: float = 120.0):
        self.command = command
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is not None and self._proc.poll() is not None:
            # one provider process per client: a death is surfaced, not
            # papered over by a silent respawn
            code = self._proc.returncode
            self._proc = None
            raise PolicyProtocolViolation(f"policy provider died (exit {code})")
        if self._proc is None:
            self._proc = subprocess.Popen(
                self.command,
                shell=isinstance(self.command, str),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def decide(self, request: PolicyRequest) -> AgentAction:
        from .grammar import format_prompt

        fd, img_path = tempfile.mkstemp(suffix=".png")
        os.close(fd)
        try:
            save_image(request.image, img_path)
            payload = json.dumps(
                {
                    "image": img_path,
                    "prompt": format_prompt(list(request.history)),
                    "history": [e.to_json() for e in request.history],
                    "available": [
                        {"task": t.value, "tools": list(request.available[t])}
                        for t in sorted(request.available, key=lambda x: x.value)
                    ],
                    "mode": request.mode,
                }
            )
            try:
                proc = self._ensure()
                assert proc.stdin is not None and proc.stdout is not None
                proc.stdin.write(payload + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (OSError, ValueError) as exc:
                raise PolicyProtocolViolation(f"policy provider I/O failed: {exc}") from exc
        finally:
            try:
                os.unlink(img_path)
            except OSError:
                pass
        if not line:
            raise PolicyProtocolViolation("policy provider closed its output")
        return self._parse(line)

    @staticmethod
    def _parse(line: str) -> AgentAction:
        try:
            obj = json.loads(line)
            kind = obj["action"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise PolicyProtocolViolation(f"malformed policy response {line!r}") from exc
        try:
            if kind == "stop":
                return StopAction()
            if kind == "rollback":
                return RollbackAction()
            steps = tuple((Task.parse(s["task"]), s["tool"]) for s in obj.get("steps", []))
            if kind == "step":
                if len(steps) != 1:
                    raise PolicyProtocolViolation("step response needs exactly one step")
                return StepAction(*steps[0])
            if kind == "pipeline":
                return PipelineAction(steps=steps)
        except (KeyError, TypeError, PipelineError) as exc:
            raise PolicyProtocolViolation(f"invalid policy response {line!r}: {exc}") from exc
        raise PolicyProtocolViolation(f"unknown action kind {kind!r}")

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()  # type: ignore[union-attr]
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
        self._proc = None


def builtin_policies() -> dict[str, type[Policy]]:
    return {
        "random": RandomPolicy,
        "fixed": FixedPolicy,
        "greedy": GreedyPolicy,
        "oracle": OraclePolicy,
        "external": ExternalPolicy,
    }


def make_policy(spec: str, seed: int = 0) -> Policy:
    """Build a policy from a CLI-style spec: name or external:<command>."""
    if spec.startswith("external:"):
        return ExternalPolicy(spec[len("external:"):])
    table = builtin_policies()
    if spec not in table:
        raise PolicyProtocolViolation(f"unknown policy {spec!r}; choose from {sorted(table)}")
    if spec == "random":
        return RandomPolicy(seed=seed)
    return table[spec]()
