"""Visibility masks of rendered models in a test image."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptySilhouette
from .maps import DistanceMap, VisibilityMask, check_shapes

DEFAULT_DELTA = 15.0  # mm
MIN_VISIBLE_FRACTION = 0.1


@dataclass(frozen=True)
class VisibilityConfig:
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not (self.delta >= 0 and np.isfinite(self.delta)):
            raise ValueError(f"occlusion tolerance delta must be a finite value >= 0, got {self.delta}")


def _visible(rendered: DistanceMap, scene: DistanceMap, delta: float) -> np.ndarray:
    # One-sided: a model surface in front of the measurement is always visible.
    return rendered.valid & scene.valid & (rendered.values - scene.values <= delta)


def visib_mask_gt(rendered: DistanceMap, scene: DistanceMap, cfg: VisibilityConfig = VisibilityConfig()) -> VisibilityMask:
    """Pixels where the rendered surface is not occluded in the scene by more than ``delta``.

    Pixels without a scene measurement are never visible.
    """
    check_shapes(rendered, scene)
    return VisibilityMask(_visible(rendered, scene, cfg.delta))


def visib_mask_est(
    rendered_est: DistanceMap,
    scene: DistanceMap,
    gt_mask: VisibilityMask,
    cfg: VisibilityConfig = VisibilityConfig(),
) -> VisibilityMask:
    """Like :func:`visib_mask_gt`, plus every rendered pixel inside ``gt_mask``.

    The second term keeps an estimate from losing pixels where the
    ground-truth object is itself visible.
    """
    check_shapes(rendered_est, scene, gt_mask)
    bits = _visible(rendered_est, scene, cfg.delta) | (rendered_est.valid & gt_mask.bits)
    return VisibilityMask(bits)


def visible_fraction(gt_mask: VisibilityMask, full_silhouette: VisibilityMask) -> float:
    check_shapes(gt_mask, full_silhouette)
    total = full_silhouette.count()
    if total == 0:
        raise EmptySilhouette("the object does not project into the image")
    return gt_mask.count() / total
