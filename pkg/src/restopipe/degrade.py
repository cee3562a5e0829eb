"""Synthetic degradations with reproducible, serializable recipes.

Each step is a pure function of (input image, task, params, seed); stochastic
steps draw from a counter-based Philox generator keyed by the step's own seed,
so a recipe re-derives bit-identical images no matter where or in what order
it is evaluated.
"""

from __future__ import annotations

import enum
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ParamOutOfRange, TooManyTasks, UnknownTask
from .image import ImageBuffer

MAX_RECIPE_LEN = 4
_SEED_MAX = 2**64


class Task(str, enum.Enum):
    """Restoration task names; each corresponds to one degradation family."""

    DENOISE = "denoise"
    DEJPEG = "dejpeg"
    DEBLUR = "deblur"
    DERAIN = "derain"
    DEHAZE = "dehaze"
    LOWLIGHT = "lowlight"
    DESNOW = "desnow"

    @classmethod
    def parse(cls, name: str) -> "Task":
        try:
            return cls(name)
        except ValueError:
            raise UnknownTask(f"unknown task {name!r}") from None

    def __str__(self) -> str:
        return self.value


# Synthesis order: capture-side effects first, codec last.
CANONICAL_ORDER = (
    Task.LOWLIGHT,
    Task.DEHAZE,
    Task.DERAIN,
    Task.DESNOW,
    Task.DEBLUR,
    Task.DENOISE,
    Task.DEJPEG,
)

# Validation bounds per parameter. Wider than the sampling ranges so the
# identity edge cases (sigma=0, t=1, length=1, ...) stay constructible.
PARAM_BOUNDS: dict[Task, dict[str, tuple[float, float]]] = {
    Task.DENOISE: {"sigma": (0.0, 50.0)},
    Task.DEJPEG: {"quality": (10, 100)},
    Task.DEBLUR: {"length": (1.0, 25.0), "angle": (0.0, math.pi)},
    Task.DERAIN: {"density": (0.0, 400.0), "length": (4.0, 30.0), "angle": (0.0, math.pi)},
    Task.DEHAZE: {"transmission": (0.0, 1.0), "airlight": (0.0, 1.0)},
    Task.LOWLIGHT: {"scale": (0.05, 1.0), "gamma": (1.0, 3.0), "noise_sigma": (0.0, 5.0)},
    Task.DESNOW: {"density": (0.0, 200.0), "radius_min": (1.0, 4.0), "radius_max": (1.0, 4.0)},
}

# Sampling ranges per difficulty profile. The noise bands line up with the
# three specialized denoisers; jpeg severity means lower quality.
PROFILE_RANGES: dict[str, dict[Task, dict[str, tuple[float, float]]]] = {
    "low": {
        Task.DENOISE: {"sigma": (2.0, 10.0)},
        Task.DEJPEG: {"quality": (50, 90)},
        Task.DEBLUR: {"length": (5.0, 11.0), "angle": (0.0, math.pi)},
        Task.DERAIN: {"density": (50.0, 160.0), "length": (10.0, 17.0), "angle": (math.pi * 0.35, math.pi * 0.65)},
        Task.DEHAZE: {"transmission": (0.63, 0.8), "airlight": (0.7, 1.0)},
        Task.LOWLIGHT: {"scale": (0.38, 0.5), "gamma": (1.5, 2.0), "noise_sigma": (0.5, 2.0)},
        Task.DESNOW: {"density": (30.0, 85.0), "radius_min": (1.0, 2.0), "radius_max": (2.0, 3.0)},
    },
    "medium": {
        Task.DENOISE: {"sigma": (10.0, 30.0)},
        Task.DEJPEG: {"quality": (30, 70)},
        Task.DEBLUR: {"length": (11.0, 18.0), "angle": (0.0, math.pi)},
        Task.DERAIN: {"density": (160.0, 280.0), "length": (17.0, 24.0), "angle": (math.pi * 0.35, math.pi * 0.65)},
        Task.DEHAZE: {"transmission": (0.46, 0.63), "airlight": (0.7, 1.0)},
        Task.LOWLIGHT: {"scale": (0.26, 0.38), "gamma": (2.0, 2.5), "noise_sigma": (1.0, 3.0)},
        Task.DESNOW: {"density": (85.0, 140.0), "radius_min": (1.5, 2.5), "radius_max": (2.5, 3.5)},
    },
    "high": {
        Task.DENOISE: {"sigma": (30.0, 50.0)},
        Task.DEJPEG: {"quality": (10, 50)},
        Task.DEBLUR: {"length": (18.0, 25.0), "angle": (0.0, math.pi)},
        Task.DERAIN: {"density": (280.0, 400.0), "length": (24.0, 30.0), "angle": (math.pi * 0.35, math.pi * 0.65)},
        Task.DEHAZE: {"transmission": (0.3, 0.46), "airlight": (0.7, 1.0)},
        Task.LOWLIGHT: {"scale": (0.15, 0.26), "gamma": (2.5, 3.0), "noise_sigma": (2.0, 5.0)},
        Task.DESNOW: {"density": (140.0, 200.0), "radius_min": (2.0, 3.0), "radius_max": (3.0, 4.0)},
    },
    "mixed": {
        Task.DENOISE: {"sigma": (2.0, 50.0)},
        Task.DEJPEG: {"quality": (10, 90)},
        Task.DEBLUR: {"length": (5.0, 25.0), "angle": (0.0, math.pi)},
        Task.DERAIN: {"density": (50.0, 400.0), "length": (10.0, 30.0), "angle": (math.pi * 0.35, math.pi * 0.65)},
        Task.DEHAZE: {"transmission": (0.3, 0.8), "airlight": (0.7, 1.0)},
        Task.LOWLIGHT: {"scale": (0.15, 0.5), "gamma": (1.5, 3.0), "noise_sigma": (0.5, 5.0)},
        Task.DESNOW: {"density": (30.0, 200.0), "radius_min": (1.0, 3.0), "radius_max": (2.0, 4.0)},
    },
}

PROFILES = tuple(PROFILE_RANGES)


def _validate_params(task: Task, params: dict) -> dict[str, float]:
    bounds = PARAM_BOUNDS[task]
    unknown = set(params) - set(bounds)
    missing = set(bounds) - set(params)
    if unknown or missing:
        raise ParamOutOfRange(
            f"{task}: unknown params {sorted(unknown)}, missing {sorted(missing)}"
        )
    out = {}
    for name, value in params.items():
        lo, hi = bounds[name]
        v = float(value)
        if not (lo <= v <= hi):
            raise ParamOutOfRange(f"{task}.{name}={v} outside [{lo}, {hi}]")
        out[name] = v
    if task is Task.DESNOW and out["radius_max"] < out["radius_min"]:
        raise ParamOutOfRange("desnow radius_max < radius_min")
    return out


@dataclass(frozen=True)
class DegradationStep:
    task: Task
    params: dict[str, float] = field(hash=False)
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.task, Task):
            object.__setattr__(self, "task", Task.parse(self.task))
        object.__setattr__(self, "params", _validate_params(self.task, self.params))
        if not (0 <= self.seed < _SEED_MAX):
            raise ParamOutOfRange(f"seed {self.seed} outside unsigned 64-bit range")

    def to_json(self) -> dict:
        return {"task": self.task.value, "seed": self.seed, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "DegradationStep":
        return cls(task=Task.parse(obj["task"]), params=obj["params"], seed=int(obj["seed"]))


@dataclass(frozen=True)
class DegradationRecipe:
    steps: tuple[DegradationStep, ...]
    source_id: str = ""

    def __post_init__(self):
        steps = tuple(self.steps)
        object.__setattr__(self, "steps", steps)
        if not 1 <= len(steps) <= MAX_RECIPE_LEN:
            raise ParamOutOfRange(f"recipe length {len(steps)} outside [1, {MAX_RECIPE_LEN}]")
        tasks = [s.task for s in steps]
        if len(set(tasks)) != len(tasks):
            raise ParamOutOfRange("recipe repeats a task")

    @property
    def tasks(self) -> frozenset[Task]:
        return frozenset(s.task for s in self.steps)

    def to_json(self) -> dict:
        return {"source_id": self.source_id, "steps": [s.to_json() for s in self.steps]}

    @classmethod
    def from_json(cls, obj: dict) -> "DegradationRecipe":
        return cls(
            steps=tuple(DegradationStep.from_json(s) for s in obj["steps"]),
            source_id=obj.get("source_id", ""),
        )

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as f:
            json.dump(self.to_json(), f, indent=2)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DegradationRecipe":
        with open(path) as f:
            return cls.from_json(json.load(f))


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def _gaussian_noise(arr: np.ndarray, sigma255: float, rng: np.random.Generator) -> np.ndarray:
    if sigma255 <= 0:
        return arr
    noise = rng.standard_normal(arr.shape) * (sigma255 / 255.0)
    return np.clip(arr + noise, 0.0, 1.0)


def _apply_noise(arr: np.ndarray, params: dict, rng) -> np.ndarray:
    return _gaussian_noise(arr, params["sigma"], rng)


def _apply_jpeg(arr: np.ndarray, params: dict, rng) -> np.ndarray:
    q = int(round(params["quality"]))
    bytes_ = np.floor(arr * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    # baseline JPEG, 4:2:0 chroma subsampling; encoders drop subsampling at
    # very high quality, which keeps q=100 near-lossless
    subsampling = 2 if q < 95 else 0
    Image.fromarray(bytes_, mode="RGB").save(
        buf, format="JPEG", quality=q, subsampling=subsampling
    )
    buf.seek(0)
    decoded = np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0
    return decoded


def motion_kernel(length: float, angle: float) -> np.ndarray:
    """Unit-mass linear motion kernel; length 1 degenerates to identity."""
    if length < 1.0:
        raise ParamOutOfRange(f"kernel length {length} < 1")
    half = (length - 1.0) / 2.0
    size = 2 * int(math.ceil(half)) + 1
    k = np.zeros((size, size), dtype=np.float64)
    c = size // 2
    n = max(int(round(length * 4)), 1)
    dy, dx = math.sin(angle), math.cos(angle)
    for t in np.linspace(-half, half, n):
        y, x = c + t * dy, c + t * dx
        y0, x0 = int(math.floor(y)), int(math.floor(x))
        fy, fx = y - y0, x - x0
        for (yy, xx, w) in (
            (y0, x0, (1 - fy) * (1 - fx)),
            (y0 + 1, x0, fy * (1 - fx)),
            (y0, x0 + 1, (1 - fy) * fx),
            (y0 + 1, x0 + 1, fy * fx),
        ):
            if 0 <= yy < size and 0 <= xx < size:
                k[yy, xx] += w
    k /= k.sum()
    return k


def _apply_blur(arr: np.ndarray, params: dict, rng) -> np.ndarray:
    from . import kernels

    k = motion_kernel(params["length"], params["angle"])
    if k.shape == (1, 1):
        return arr
    out = np.empty_like(arr)
    for c in range(3):
        out[:, :, c] = kernels.conv2d(arr[:, :, c], k)
    return np.clip(out, 0.0, 1.0)


def _splat_streak(canvas: np.ndarray, cy, cx, length, angle, amp, width, rng) -> None:
    h, w = canvas.shape
    n = max(int(round(length * 3)), 2)
    dy, dx = math.sin(angle), math.cos(angle)
    ts = np.linspace(-length / 2.0, length / 2.0, n)
    profile = amp * np.exp(-((ts / (length / 2.2)) ** 2))
    for t, a in zip(ts, profile):
        y, x = cy + t * dy, cx + t * dx
        y0, x0 = int(math.floor(y)), int(math.floor(x))
        fy, fx = y - y0, x - x0
        for (yy, xx, wgt) in (
            (y0, x0, (1 - fy) * (1 - fx)),
            (y0 + 1, x0, fy * (1 - fx)),
            (y0, x0 + 1, (1 - fy) * fx),
            (y0 + 1, x0 + 1, fy * fx),
        ):
            if 0 <= yy < h and 0 <= xx < w:
                canvas[yy, xx] += wgt * a * width


def _apply_rain(arr: np.ndarray, params: dict, rng) -> np.ndarray:
    h, w = arr.shape[:2]
    count = int(round(params["density"] * h * w / 1e6))
    if count == 0:
        return arr
    canvas = np.zeros((h, w), dtype=np.float64)
    angle = params["angle"]
    for _ in range(count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        length = params["length"] * rng.uniform(0.7, 1.3)
        amp = rng.uniform(0.25, 0.6)
        _splat_streak(canvas, cy, cx, length, angle, amp, 1.0, rng)
    return np.clip(arr + canvas[:, :, None], 0.0, 1.0)


def _apply_haze(arr: np.ndarray, params: dict, rng) -> np.ndarray:
    t, a = params["transmission"], params["airlight"]
    return np.clip(arr * t + a * (1.0 - t), 0.0, 1.0)


def _apply_lowlight(arr: np.ndarray, params: dict, rng) -> np.ndarray:
    s, gamma = params["scale"], params["gamma"]
    out = np.power(np.clip(arr * s, 0.0, 1.0), gamma)
    return _gaussian_noise(out, params["noise_sigma"], rng)


def _apply_snow(arr: np.ndarray, params: dict, rng) -> np.ndarray:
    h, w = arr.shape[:2]
    count = int(round(params["density"] * h * w / 1e6))
    if count == 0:
        return arr
    mask = np.zeros((h, w), dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for _ in range(count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        r = rng.uniform(params["radius_min"], params["radius_max"])
        ecc = rng.uniform(0.7, 1.0)
        theta = rng.uniform(0, math.pi)
        alpha = rng.uniform(0.55, 0.95)
        ct, st = math.cos(theta), math.sin(theta)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        d2 = (u / r) ** 2 + (v / (r * ecc)) ** 2
        blob = alpha * np.exp(-d2 * 1.8)
        np.maximum(mask, blob, out=mask)
    white = 0.97
    return np.clip(arr * (1.0 - mask[:, :, None]) + white * mask[:, :, None], 0.0, 1.0)


_APPLY = {
    Task.DENOISE: _apply_noise,
    Task.DEJPEG: _apply_jpeg,
    Task.DEBLUR: _apply_blur,
    Task.DERAIN: _apply_rain,
    Task.DEHAZE: _apply_haze,
    Task.LOWLIGHT: _apply_lowlight,
    Task.DESNOW: _apply_snow,
}


def apply_step(img: ImageBuffer, step: DegradationStep) -> ImageBuffer:
    """Apply one degradation; pure, deterministic in (img, step)."""
    rng = _rng(step.seed)
    out = _APPLY[step.task](img.data, step.params, rng)
    return ImageBuffer.from_array(out, clamp=True)


def apply_recipe(img: ImageBuffer, recipe: DegradationRecipe) -> ImageBuffer:
    out = img
    for step in recipe.steps:
        out = apply_step(out, step)
    return out


def _step_seed(master: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=master, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_recipe(
    tasks: set[Task] | frozenset[Task],
    rng_seed: int,
    profile: str = "mixed",
    source_id: str = "",
) -> DegradationRecipe:
    """Draw step parameters uniformly from the profile ranges.

    Step order is the canonical synthesis order; both parameters and the
    per-step seeds derive from rng_seed alone.
    """
    tasks = {Task.parse(t) if not isinstance(t, Task) else t for t in tasks}
    if not 1 <= len(tasks) <= MAX_RECIPE_LEN:
        raise TooManyTasks(f"need 1..{MAX_RECIPE_LEN} tasks, got {len(tasks)}")
    if profile not in PROFILE_RANGES:
        raise ParamOutOfRange(f"unknown profile {profile!r}; choose from {PROFILES}")
    ranges = PROFILE_RANGES[profile]
    rng = _rng(rng_seed)
    ordered = [t for t in CANONICAL_ORDER if t in tasks]
    steps = []
    for i, task in enumerate(ordered):
        params = {}
        for name, (lo, hi) in sorted(ranges[task].items()):
            v = rng.uniform(lo, hi)
            if name == "quality":
                v = int(round(v))
            params[name] = v
        if task is Task.DESNOW and params["radius_max"] < params["radius_min"]:
            params["radius_min"], params["radius_max"] = params["radius_max"], params["radius_min"]
        steps.append(DegradationStep(task=task, params=params, seed=_step_seed(rng_seed, i)))
    return DegradationRecipe(steps=tuple(steps), source_id=source_id)
