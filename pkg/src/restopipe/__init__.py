"""restopipe: pipeline search engine and agent harness for multi-degradation image restoration."""

from .degrade import (
    DegradationRecipe,
    DegradationStep,
    Task,
    apply_recipe,
    apply_step,
    sample_recipe,
)
from .image import ImageBuffer, load_image, save_image
from .quality import MetricId, ScoreConfig, ScoreReport, balanced_scores, psnr, ssim, zscores
from .search import (
    CandidateOutcome,
    DecisionSpace,
    PipelineDecision,
    count_decisions,
    enumerate_decisions,
    evaluate_candidate,
    oracle_search,
    rank_of,
)
from .toolbox import ToolDescriptor, ToolRegistry, default_catalog

__version__ = "0.1.0"

__all__ = [
    "CandidateOutcome",
    "DecisionSpace",
    "DegradationRecipe",
    "DegradationStep",
    "ImageBuffer",
    "MetricId",
    "PipelineDecision",
    "ScoreConfig",
    "ScoreReport",
    "Task",
    "ToolDescriptor",
    "ToolRegistry",
    "__version__",
    "apply_recipe",
    "apply_step",
    "balanced_scores",
    "count_decisions",
    "default_catalog",
    "enumerate_decisions",
    "evaluate_candidate",
    "load_image",
    "oracle_search",
    "psnr",
    "rank_of",
    "sample_recipe",
    "save_image",
    "ssim",
    "zscores",
]
