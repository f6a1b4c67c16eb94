"""Manipulated-image synthesis and manipulation-segmentation scoring."""

__version__ = "0.1.0"

from .image import load_image, load_mask, save_image, save_mask  # noqa: E402
from .morphology import dilate, erode, edge_mask, remove_small_components  # noqa: E402
from .compositor import AttackSpec, CompositeSample, attack_jpeg, attack_scale, compose, refine  # noqa: E402
from .blend import BlendConfig, LossBreakdown, poisson_blend, total_objective, variational_blend  # noqa: E402
from .metrics import ConfusionCounts, EvalReport, confusion, f1, mcc, sweep_thresholds  # noqa: E402
