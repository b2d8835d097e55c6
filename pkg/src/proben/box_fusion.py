"""Bounding-box fusion for one overlap cluster.

The fused box is an inverse-variance weighted average of member boxes; the
modes differ only in where the variance comes from:

  argmax  keep the box of the highest-scoring member (classic NMS behavior)
  avg     all variances fixed to 1 (plain coordinate average)
  s-avg   variance approximated by 1/posterior of the fused argmax class
  v-avg   variance reported by the detector alongside each box
"""

from __future__ import annotations

from typing import Sequence

from .detections import ClassScores, Detection
from .errors import ConfigurationError, EmptyClusterError, MissingVarianceError
from .geometry import BBox, convex_combination

BOX_FUSION_MODES = ("argmax", "avg", "s-avg", "v-avg")


def fuse_boxes(
    members: Sequence[Detection],
    fused_scores: ClassScores,
    mode: str,
) -> BBox:
    if len(members) == 0:
        raise EmptyClusterError("box fusion requires a nonempty cluster")
    if mode == "argmax":
        best = min(members, key=lambda d: d.sort_key)
        return best.box
    if mode == "avg":
        weights = [1.0] * len(members)
    elif mode == "s-avg":
        k = fused_scores.argmax_foreground()
        weights = [float(d.scores.posteriors[k]) for d in members]
    elif mode == "v-avg":
        for d in members:
            if d.box_variance is None:
                raise MissingVarianceError(
                    f"detection {d.det_id} carries no box_variance (v-avg box fusion)"
                )
        weights = [1.0 / d.box_variance for d in members]
    else:
        raise ConfigurationError(f"unknown box fusion mode {mode!r}")
    return convex_combination([d.box for d in members], weights)


def fused_box_variance(members: Sequence[Detection]) -> float | None:
    """Posterior variance of the fused box: 1 / sum of inverse variances.

    Returns None unless every member reports a variance.
    """
    if any(d.box_variance is None for d in members):
        return None
    return 1.0 / sum(1.0 / d.box_variance for d in members)
