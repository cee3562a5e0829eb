"""Image quality metrics and the standardized composite score.

The composite ("balanced") score of a candidate is the sum of per-metric
z-scores computed across a population of candidates, sign-aligned so higher
is always better. The population is always the candidate outcomes of one
image's decision space, which makes the per-image argmax well defined.
"""

from __future__ import annotations

import json
import math
import os
import subprocess
import tempfile
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve

from .errors import (
    DimensionMismatch,
    ExternalMetricFailure,
    ImageTooSmall,
    InconsistentMetricSets,
    PopulationTooSmall,
)
from .image import ImageBuffer, require_same_shape, save_image

PSNR_CAP_DB = 100.0
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_WIN = 11
_SSIM_SIGMA = 1.5


@dataclass(frozen=True)
class MetricId:
    name: str
    higher_better: bool = True


PSNR = MetricId("psnr", higher_better=True)
SSIM = MetricId("ssim", higher_better=True)
DEFAULT_METRICS: tuple[MetricId, ...] = (PSNR, SSIM)


def psnr(a: ImageBuffer, b: ImageBuffer) -> float:
    """Peak signal-to-noise ratio in dB on [0, 1] intensities, capped at 100."""
    require_same_shape(a, b)
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / mse), PSNR_CAP_DB)


def _luma(img: ImageBuffer) -> np.ndarray:
    d = img.data
    return 0.299 * d[:, :, 0] + 0.587 * d[:, :, 1] + 0.114 * d[:, :, 2]


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


_SSIM_KERNEL = _gaussian_window(_SSIM_WIN, _SSIM_SIGMA)


def ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    """Mean structural similarity over 11x11 Gaussian windows on luma."""
    require_same_shape(a, b)
    if min(a.height, a.width) < _SSIM_WIN:
        raise ImageTooSmall(f"need min side >= {_SSIM_WIN} for SSIM")
    x, y = _luma(a), _luma(b)
    k = _SSIM_KERNEL

    mu_x = fftconvolve(x, k, mode="valid")
    mu_y = fftconvolve(y, k, mode="valid")
    xx = fftconvolve(x * x, k, mode="valid")
    yy = fftconvolve(y * y, k, mode="valid")
    xy = fftconvolve(x * y, k, mode="valid")

    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y

    num = (2 * mu_x * mu_y + _SSIM_C1) * (2 * cov + _SSIM_C2)
    den = (mu_x**2 + mu_y**2 + _SSIM_C1) * (var_x + var_y + _SSIM_C2)
    return float(np.mean(num / den))


def zscores(values: list[float] | np.ndarray) -> list[float]:
    """Population z-scores; all zeros when the population is constant."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 2:
        raise PopulationTooSmall("z-scores need a population of at least 2")
    centered = arr - arr.mean()
    centered -= centered.mean()  # second pass kills cancellation residue
    sigma = float(np.sqrt(np.mean(centered**2)))  # population (ddof=0)
    if sigma == 0.0:
        return [0.0] * arr.size
    return list(centered / sigma)


@dataclass
class ScoreReport:
    """Raw metric values for one restored image, plus the balanced score
    once standardized against a population."""

    values: dict[str, float]
    balanced: float | None = None

    def copy(self) -> "ScoreReport":
        return ScoreReport(values=dict(self.values), balanced=self.balanced)


@dataclass(frozen=True)
class MetricStats:
    mean: float
    std: float


@dataclass(frozen=True)
class ZScoreStats:
    """Frozen per-metric population statistics, usable to score probes."""

    per_metric: dict[str, MetricStats]
    population: int

    def __post_init__(self):
        if self.population < 2:
            raise PopulationTooSmall("population statistics need N >= 2")


@dataclass(frozen=True)
class ScoreConfig:
    """Which metrics enter the balanced score and with what weights.

    Default is equal weights over psnr and ssim. External metrics are
    measured through a provider subprocess (see ExternalMetricProvider).
    """

    metrics: tuple[MetricId, ...] = DEFAULT_METRICS
    weights: dict[str, float] | None = None
    providers: dict[str, "ExternalMetricProvider"] = field(default_factory=dict, hash=False)

    def weight(self, name: str) -> float:
        if self.weights is None:
            return 1.0
        return float(self.weights.get(name, 0.0))

    def metric(self, name: str) -> MetricId:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)


def measure(restored: ImageBuffer, reference: ImageBuffer, config: ScoreConfig | None = None) -> ScoreReport:
    """Raw metric report of restored vs reference under a score config."""
    config = config or ScoreConfig()
    values: dict[str, float] = {}
    ext_paths: tuple[str, str] | None = None
    try:
        for m in config.metrics:
            if m.name == "psnr":
                values["psnr"] = psnr(restored, reference)
            elif m.name == "ssim":
                values["ssim"] = ssim(restored, reference)
            else:
                provider = config.providers.get(m.name)
                if provider is None:
                    raise ExternalMetricFailure(f"no provider registered for metric {m.name!r}")
                if ext_paths is None:
                    ext_paths = _write_pair(restored, reference)
                values[m.name] = provider.measure(ext_paths[0], ext_paths[1], m.name)
    finally:
        if ext_paths is not None:
            for p in ext_paths:
                try:
                    os.unlink(p)
                except OSError:
                    pass
    return ScoreReport(values=values)


def _write_pair(restored: ImageBuffer, reference: ImageBuffer) -> tuple[str, str]:
    fd, rp = tempfile.mkstemp(suffix=".png")
    os.close(fd)
    fd, fp = tempfile.mkstemp(suffix=".png")
    os.close(fd)
    save_image(restored, rp)
    save_image(reference, fp)
    return rp, fp


def zscore_stats(reports: list[ScoreReport], metrics: tuple[MetricId, ...]) -> ZScoreStats:
    _check_consistent(reports, metrics)
    per = {}
    for m in metrics:
        vals = np.array([r.values[m.name] for r in reports], dtype=np.float64)
        per[m.name] = MetricStats(mean=float(vals.mean()), std=float(vals.std()))
    return ZScoreStats(per_metric=per, population=len(reports))


def _check_consistent(reports: list[ScoreReport], metrics: tuple[MetricId, ...]) -> None:
    if len(reports) < 2:
        raise PopulationTooSmall("balanced scores need at least 2 candidates")
    for r in reports:
        for m in metrics:
            if m.name not in r.values:
                raise InconsistentMetricSets(f"report missing metric {m.name!r}")


def balanced_scores(
    reports: list[ScoreReport],
    metrics: tuple[MetricId, ...] = DEFAULT_METRICS,
    weights: dict[str, float] | None = None,
) -> list[float]:
    """Sum of sign-aligned per-metric z-scores across the population."""
    _check_consistent(reports, metrics)
    n = len(reports)
    total = np.zeros(n, dtype=np.float64)
    for m in metrics:
        z = np.asarray(zscores([r.values[m.name] for r in reports]))
        if not m.higher_better:
            z = -z
        w = 1.0 if weights is None else float(weights.get(m.name, 0.0))
        total += w * z
    return list(total)


def probe_score(
    report: ScoreReport,
    stats: ZScoreStats,
    metrics: tuple[MetricId, ...] = DEFAULT_METRICS,
    weights: dict[str, float] | None = None,
) -> float:
    """Balanced score of an arbitrary report against frozen population stats.

    Lets images that were not part of the enumerated space (agent states,
    probe outputs) be scored on the same scale as the candidate table.
    """
    total = 0.0
    for m in metrics:
        st = stats.per_metric[m.name]
        z = 0.0 if st.std == 0.0 else (report.values[m.name] - st.mean) / st.std
        if not m.higher_better:
            z = -z
        w = 1.0 if weights is None else float(weights.get(m.name, 0.0))
        total += w * z
    return total


class ExternalMetricProvider:
    """Client for the line-JSON metric protocol.

    One request per line on the provider's stdin:
        {"restored": path, "reference": path, "metric": name}
    and one response per line: {"value": real}.
    """

    def __init__(self, command: list[str], timeout: float = 120.0):
        self.command = list(command)
        self.timeout = timeout
        self._proc: subprocess.Popen | None = None

    def _ensure(self) -> subprocess.Popen:
        if self._proc is not None and self._proc.poll() is not None:
            code = self._proc.returncode
            self._proc = None
            raise ExternalMetricFailure(f"metric provider died (exit {code})")
        if self._proc is None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def measure(self, restored_path: str, reference_path: str, metric: str) -> float:
        req = json.dumps(
            {"restored": restored_path, "reference": reference_path, "metric": metric}
        )
        try:
            proc = self._ensure()
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(req + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (OSError, ValueError) as exc:
            raise ExternalMetricFailure(f"metric provider I/O failed: {exc}") from exc
        if not line:
            raise ExternalMetricFailure("metric provider closed its output")
        try:
            obj = json.loads(line)
            return float(obj["value"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ExternalMetricFailure(f"malformed metric response {line!r}") from exc

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.close()  # type: ignore[union-attr]
                self._proc.wait(timeout=5)
            except (OSError, subprocess.TimeoutExpired):
                self._proc.kill()
        self._proc = None
