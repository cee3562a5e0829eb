import math
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restopipe.degrade import DegradationStep, Task, apply_step
from restopipe.errors import (
    DimensionMismatch,
    ExternalMetricFailure,
    InconsistentMetricSets,
    PopulationTooSmall,
)
from restopipe.image import ImageBuffer
from restopipe.quality import (
    DEFAULT_METRICS,
    ExternalMetricProvider,
    MetricId,
    ScoreConfig,
    ScoreReport,
    balanced_scores,
    measure,
    probe_score,
    psnr,
    ssim,
    zscore_stats,
    zscores,
)
from restopipe.synthetic import clean_image

C1 = 0.01**2


def const(v, side=32):
    return ImageBuffer.from_array(np.full((side, side, 3), float(v)))


# --- psnr ---------------------------------------------------------------------

def test_psnr_identical_images_hit_cap():
    a = clean_image(1, 32, 32)
    assert psnr(a, a) == 100.0


def test_psnr_black_vs_white_is_zero_db():
    assert psnr(const(0.0), const(1.0)) == pytest.approx(0.0, abs=1e-12)


def test_psnr_quarter_vs_half():
    # MSE = 0.0625 -> 10*log10(16) = 12.0412 dB
    assert psnr(const(0.5), const(0.25)) == pytest.approx(12.0412, abs=1e-3)


def test_psnr_symmetry():
    a, b = clean_image(2, 32, 32), clean_image(3, 32, 32)
    assert psnr(a, b) == psnr(b, a)


def test_psnr_decreases_with_noise():
    ref = clean_image(4, 64, 64)
    values = []
    for sigma in (5, 15, 30):
        noisy = apply_step(ref, DegradationStep(task=Task.DENOISE, params={"sigma": sigma}, seed=1))
        values.append(psnr(ref, noisy))
    assert values[0] > values[1] > values[2]


def test_psnr_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        psnr(const(0.5, 32), const(0.5, 48))


# --- ssim ---------------------------------------------------------------------

def test_ssim_self_similarity_is_one():
    a = clean_image(5, 32, 32)
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_images_closed_form():
    # variances vanish, so SSIM = C1 / (1 + C1)
    assert ssim(const(0.0), const(1.0)) == pytest.approx(C1 / (1 + C1), abs=1e-6)


def test_ssim_symmetry_and_range():
    rng = np.random.default_rng(0)
    for _ in range(3):
        a = ImageBuffer.from_array(rng.random((24, 24, 3)))
        b = ImageBuffer.from_array(rng.random((24, 24, 3)))
        s = ssim(a, b)
        assert s == ssim(b, a)
        assert -1.0 <= s <= 1.0


def test_ssim_works_at_minimum_buffer_size():
    # ImageBuffer's 16px floor already covers the 11px window requirement
    assert ssim(const(0.5, 16), const(0.5, 16)) == pytest.approx(1.0, abs=1e-9)


# --- zscores --------------------------------------------------------------------

def test_zscores_constant_population_is_zero():
    assert zscores([5, 5, 5]) == [0.0, 0.0, 0.0]


def test_zscores_one_two_three():
    z = zscores([1, 2, 3])
    assert z[0] == pytest.approx(-1.224745, abs=1e-5)
    assert z[1] == pytest.approx(0.0, abs=1e-12)
    assert z[2] == pytest.approx(1.224745, abs=1e-5)


def test_zscores_population_too_small():
    with pytest.raises(PopulationTooSmall):
        zscores([1.0])


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=40))
@settings(max_examples=60, deadline=None)
def test_zscores_center_and_unit_variance(values):
    z = np.asarray(zscores(values))
    assert abs(z.sum()) < 1e-9 * max(1.0, np.abs(z).max())
    if np.std(values) > 1e-9:
        assert z.var() == pytest.approx(1.0, abs=1e-9)


# --- balanced scores -------------------------------------------------------------

def _reports(psnrs, ssims):
    return [ScoreReport(values={"psnr": p, "ssim": s}) for p, s in zip(psnrs, ssims)]


def test_identical_reports_balance_to_zero():
    scores = balanced_scores(_reports([20, 20], [0.8, 0.8]))
    assert scores == [0.0, 0.0]


def test_two_candidate_spread():
    scores = balanced_scores(_reports([10, 20], [0.5, 0.9]))
    assert scores[0] == pytest.approx(-2.0, abs=1e-9)
    assert scores[1] == pytest.approx(2.0, abs=1e-9)


def test_shift_invariance():
    base = balanced_scores(_reports([10, 14, 30], [0.2, 0.8, 0.5]))
    shifted = balanced_scores(_reports([17, 21, 37], [0.2, 0.8, 0.5]))
    np.testing.assert_allclose(base, shifted, atol=1e-9)


def test_lower_better_metric_is_negated():
    metrics = (MetricId("mse", higher_better=False),)
    reports = [ScoreReport(values={"mse": 1.0}), ScoreReport(values={"mse": 9.0})]
    scores = balanced_scores(reports, metrics)
    assert scores[0] > 0 > scores[1]


def test_inconsistent_metric_sets_error():
    reports = [ScoreReport(values={"psnr": 1.0, "ssim": 0.5}), ScoreReport(values={"psnr": 2.0})]
    with pytest.raises(InconsistentMetricSets):
        balanced_scores(reports)


def test_argmax_invariant_under_affine_rescale():
    rng = np.random.default_rng(42)
    for _ in range(50):
        n = int(rng.integers(3, 20))
        psnrs = rng.uniform(10, 40, n)
        ssims = rng.uniform(0.2, 1.0, n)
        base = balanced_scores(_reports(psnrs, ssims))
        a, b = float(rng.uniform(0.1, 5.0)), float(rng.uniform(-10, 10))
        rescaled = balanced_scores(_reports(a * psnrs + b, ssims))
        assert np.argsort(base).tolist() == np.argsort(rescaled).tolist()


def test_weighted_single_metric_mode():
    reports = _reports([10, 30], [0.9, 0.1])
    only_psnr = balanced_scores(reports, DEFAULT_METRICS, weights={"psnr": 1.0, "ssim": 0.0})
    assert only_psnr[1] > only_psnr[0]


def test_probe_score_matches_population_zscore():
    reports = _reports([10, 20, 30], [0.3, 0.6, 0.9])
    scores = balanced_scores(reports)
    stats = zscore_stats(reports, DEFAULT_METRICS)
    for r, s in zip(reports, scores):
        assert probe_score(r, stats) == pytest.approx(s, abs=1e-9)


# --- external metric provider -----------------------------------------------------

MSE_PROVIDER = r"""
import json, sys
import numpy as np
from PIL import Image
for line in sys.stdin:
    req = json.loads(line)
    a = np.asarray(Image.open(req["restored"]).convert("RGB"), dtype=float) / 255.0
    b = np.asarray(Image.open(req["reference"]).convert("RGB"), dtype=float) / 255.0
    print(json.dumps({"value": float(((a - b) ** 2).mean())}), flush=True)
"""


def test_external_metric_runs(tmp_path):
    script = tmp_path / "mse.py"
    script.write_text(MSE_PROVIDER)
    provider = ExternalMetricProvider([sys.executable, str(script)])
    try:
        cfg = ScoreConfig(
            metrics=DEFAULT_METRICS + (MetricId("mse", higher_better=False),),
            providers={"mse": provider},
        )
        a, b = const(0.0), const(1.0)
        report = measure(a, b, cfg)
        assert report.values["mse"] == pytest.approx(1.0, abs=1e-6)
        same = measure(a, a, cfg)
        assert same.values["mse"] == pytest.approx(0.0, abs=1e-9)
    finally:
        provider.close()


def test_external_metric_malformed_response(tmp_path):
    script = tmp_path / "bad.py"
    script.write_text("import sys\nfor line in sys.stdin:\n    print('not json', flush=True)\n")
    provider = ExternalMetricProvider([sys.executable, str(script)])
    try:
        cfg = ScoreConfig(
            metrics=(MetricId("bad", higher_better=True),), providers={"bad": provider}
        )
        with pytest.raises(ExternalMetricFailure):
            measure(const(0.5), const(0.5), cfg)
    finally:
        provider.close()
