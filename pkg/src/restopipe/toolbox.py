"""Tool registry: builtin classical restorers plus a subprocess adapter.

A registry maps each restoration task to a pool of tools. It must be
frozen before any search or agent episode runs so the decision space is
well defined.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
from dataclasses import dataclass
from typing import Callable

from . import classical
from .degrade import Task
from .errors import (
    DuplicateToolId,
    ExternalToolFailure,
    FrozenRegistry,
    UnknownTool,
)
from .image import ImageBuffer, load_image, save_image

DEFAULT_TIMEOUT = 120.0


@dataclass(frozen=True)
class ToolDescriptor:
    tool_id: str
    task: Task
    kind: str  # "builtin" | "external"
    display_name: str = ""
    exec_spec: str | None = None  # external only: command with {input} {output}

    def __post_init__(self):
        if self.kind not in ("builtin", "external"):
            raise ValueError(f"kind must be builtin or external, got {self.kind!r}")
        if self.kind == "external" and not self.exec_spec:
            raise ValueError("external tool needs an exec_spec")

    def to_json(self) -> dict:
        d = {
            "tool_id": self.tool_id,
            "task": self.task.value,
            "kind": self.kind,
            "display_name": self.display_name,
        }
        if self.exec_spec:
            d["exec_spec"] = self.exec_spec
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ToolDescriptor":
        return cls(
            tool_id=obj["tool_id"],
            task=Task.parse(obj["task"]),
            kind=obj["kind"],
            display_name=obj.get("display_name", ""),
            exec_spec=obj.get("exec_spec"),
        )


class ToolRegistry:
    """Mutable until frozen; read-only and shareable afterwards."""

    def __init__(self, timeout: float = DEFAULT_TIMEOUT):
        self._tools: dict[str, ToolDescriptor] = {}
        self._impls: dict[str, Callable[[ImageBuffer], ImageBuffer]] = {}
        self._frozen = False
        self.timeout = timeout

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self) -> "ToolRegistry":
        self._frozen = True
        return self

    def register(
        self,
        desc: ToolDescriptor,
        impl: Callable[[ImageBuffer], ImageBuffer] | None = None,
    ) -> "ToolRegistry":
        """Add a tool. A new task's first tool implicitly extends the task set."""
        if self._frozen:
            raise FrozenRegistry("cannot register tools after freeze")
        if desc.tool_id in self._tools:
            raise DuplicateToolId(desc.tool_id)
        if desc.kind == "builtin" and impl is None:
            raise ValueError(f"builtin tool {desc.tool_id} needs an implementation")
        self._tools[desc.tool_id] = desc
        if impl is not None:
            self._impls[desc.tool_id] = impl
        return self

    def lookup(self, tool_id: str) -> ToolDescriptor:
        try:
            return self._tools[tool_id]
        except KeyError:
            raise UnknownTool(tool_id) from None

    def tools(self) -> list[ToolDescriptor]:
        return sorted(self._tools.values(), key=lambda d: d.tool_id)

    def tasks(self) -> list[Task]:
        return sorted({d.task for d in self._tools.values()}, key=lambda t: t.value)

    def pool(self, task: Task) -> list[str]:
        """Tool ids for one task, sorted for deterministic enumeration."""
        return sorted(d.tool_id for d in self._tools.values() if d.task is task)

    def pools(self, tasks=None) -> dict[Task, int]:
        tasks = list(tasks) if tasks is not None else self.tasks()
        return {t: len(self.pool(t)) for t in tasks}

    def run(self, tool_id: str, img: ImageBuffer) -> ImageBuffer:
        """Run one tool; output is clamped and keeps the input dimensions."""
        desc = self.lookup(tool_id)
        if desc.kind == "builtin":
            out = self._impls[tool_id](img)
        else:
            out = self._run_external(desc, img)
        if (out.height, out.width) != (img.height, img.width):
            raise ExternalToolFailure(
                f"{tool_id} changed dimensions {img.height}x{img.width} -> {out.height}x{out.width}"
            )
        return out

    def _run_external(self, desc: ToolDescriptor, img: ImageBuffer) -> ImageBuffer:
        assert desc.exec_spec is not None
        in_fd, in_path = tempfile.mkstemp(suffix=".png")
        out_fd, out_path = tempfile.mkstemp(suffix=".png")
        os.close(in_fd)
        os.close(out_fd)
        os.unlink(out_path)
        try:
            save_image(img, in_path)
            cmd = desc.exec_spec.format(input=in_path, output=out_path)
            try:
                proc = subprocess.run(
                    cmd, shell=True, capture_output=True, timeout=self.timeout
                )
            except subprocess.TimeoutExpired as exc:
                raise ExternalToolFailure(f"{desc.tool_id} timed out after {self.timeout}s") from exc
            if proc.returncode != 0:
                raise ExternalToolFailure(
                    f"{desc.tool_id} exited {proc.returncode}: {proc.stderr.decode(errors='replace')[:500]}"
                )
            if not os.path.exists(out_path):
                raise ExternalToolFailure(f"{desc.tool_id} wrote no output file")
            try:
                return load_image(out_path)
            except Exception as exc:
                raise ExternalToolFailure(f"{desc.tool_id} wrote malformed output: {exc}") from exc
        finally:
            for p in (in_path, out_path):
                try:
                    os.unlink(p)
                except OSError:
                    pass

    def to_json(self) -> list[dict]:
        return [d.to_json() for d in self.tools()]

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)


# Builtin tool implementations; noise bands follow the degradation profiles.
_BUILTINS: list[tuple[str, Task, str, Callable[[ImageBuffer], ImageBuffer]]] = [
    ("denoise_small", Task.DENOISE, "NLM denoiser, low noise",
     lambda img: classical.denoise_nlm(img, sigma255=3.5)),
    ("denoise_medium", Task.DENOISE, "NLM denoiser, medium noise",
     lambda img: classical.denoise_nlm(img, sigma255=20.0)),
    ("denoise_strong", Task.DENOISE, "NLM denoiser, high noise",
     lambda img: classical.denoise_nlm(img, sigma255=40.0)),
    ("dejpeg_mild", Task.DEJPEG, "deblocker for mild compression",
     lambda img: classical.dejpeg_deblock(img, severe=False)),
    ("dejpeg_severe", Task.DEJPEG, "deblocker for severe compression",
     lambda img: classical.dejpeg_deblock(img, severe=True)),
    ("deblur_default", Task.DEBLUR, "Wiener motion deblur",
     classical.deblur_wiener),
    ("derain_default", Task.DERAIN, "directional median derainer",
     classical.remove_streaks),
    ("dehaze_default", Task.DEHAZE, "dark channel prior dehazer",
     classical.dehaze_dcp),
    ("lowlight_default", Task.LOWLIGHT, "inverse gamma + stretch",
     classical.lowlight_enhance),
]

_DESNOW = (
    "desnow_default", Task.DESNOW, "bright blob inpainting",
    classical.desnow_inpaint,
)


def default_catalog(include_desnow: bool = False, timeout: float = DEFAULT_TIMEOUT) -> ToolRegistry:
    """The stock pool: 3 denoisers, 2 deJPEG tools, 1 tool each otherwise;
    desnow only via the extension flag."""
    reg = ToolRegistry(timeout=timeout)
    entries = list(_BUILTINS) + ([_DESNOW] if include_desnow else [])
    for tool_id, task, name, impl in entries:
        reg.register(
            ToolDescriptor(tool_id=tool_id, task=task, kind="builtin", display_name=name),
            impl,
        )
    return reg


def load_catalog(path: str | os.PathLike, timeout: float = DEFAULT_TIMEOUT) -> ToolRegistry:
    """Catalog file: JSON list of ToolDescriptor. Builtin ids must exist in
    the default catalog; external entries carry their exec_spec."""
    with open(path) as f:
        entries = json.load(f)
    known = {tool_id: impl for tool_id, _, _, impl in list(_BUILTINS) + [_DESNOW]}
    reg = ToolRegistry(timeout=timeout)
    for obj in entries:
        desc = ToolDescriptor.from_json(obj)
        if desc.kind == "builtin":
            if desc.tool_id not in known:
                raise UnknownTool(f"unknown builtin tool {desc.tool_id!r} in catalog")
            reg.register(desc, known[desc.tool_id])
        else:
            reg.register(desc)
    return reg
