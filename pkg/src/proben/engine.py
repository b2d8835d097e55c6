"""Greedy multimodal fusion: cluster overlapping detections, fuse, repeat.

Per image and per argmax class: take the highest-posterior remaining
detection as the cluster seed, gather everything that overlaps it above the
IoU threshold, pick the best detection per modality, fuse scores and boxes,
remove the whole overlap set, repeat. In ``max`` score-fusion mode the seed
is emitted unchanged, which makes the loop degenerate to classic NMS.

Also hosts the no-suppression pooling baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import chain
from typing import Dict, List, Mapping, Optional, Sequence

from .box_fusion import BOX_FUSION_MODES, fuse_boxes, fused_box_variance
from .detections import ClassPrior, Detection
from .errors import ConfigurationError, MissingVarianceError
from .geometry import iou
from .score_fusion import (
    CalibrationParams,
    LinearFusionWeights,
    calibrate_scores,
    fuse_avg_logits,
    fuse_avg_posteriors,
    fuse_linear,
    fuse_max,
    fuse_proben,
)

SCORE_FUSION_MODES = ("max", "avg-posteriors", "avg-logits", "proben", "linear")


@dataclass(frozen=True)
class FusionConfig:
    iou_threshold: float = 0.5
    score_fusion: str = "proben"
    box_fusion: str = "avg"
    prior: Optional[ClassPrior] = None  # None means uniform
    calibration: Mapping[str, CalibrationParams] = field(default_factory=dict)
    weights: Optional[LinearFusionWeights] = None

    def __post_init__(self):
        if not (
            isinstance(self.iou_threshold, (int, float))
            and math.isfinite(self.iou_threshold)
            and 0.0 < self.iou_threshold < 1.0
        ):
            raise ConfigurationError(
                f"iou_threshold must lie in (0, 1), got {self.iou_threshold}"
            )
        if self.score_fusion not in SCORE_FUSION_MODES:
            raise ConfigurationError(f"unknown score fusion mode {self.score_fusion!r}")
        if self.box_fusion not in BOX_FUSION_MODES:
            raise ConfigurationError(f"unknown box fusion mode {self.box_fusion!r}")
        if self.score_fusion == "linear" and self.weights is None:
            raise ConfigurationError("linear score fusion requires fusion weights")


@dataclass(frozen=True)
class Cluster:
    """One greedy iteration: the seed, its overlap set, the per-modality picks."""

    seed: Detection
    members: tuple
    selected: tuple


def pool(detection_sets: Sequence[Sequence[Detection]]) -> List[Detection]:
    """Naive pooling baseline: concatenate and re-sort, no suppression."""
    return sorted(chain.from_iterable(detection_sets), key=lambda d: d.sort_key)


def _calibrated(detections, calibration):
    out = []
    for d in detections:
        params = calibration.get(d.modality)
        if params is not None:
            d = d.with_scores(calibrate_scores(d.scores, params))
        out.append(d)
    return out


def _select_per_modality(members: Sequence[Detection]) -> List[Detection]:
    best: Dict[str, Detection] = {}
    for d in members:
        cur = best.get(d.modality)
        if cur is None or d.sort_key < cur.sort_key:
            best[d.modality] = d
    return sorted(best.values(), key=lambda d: d.sort_key)


def _fuse_cluster(selected: List[Detection], config: FusionConfig, prior: ClassPrior) -> Detection:
    member_scores = [d.scores for d in selected]
    if config.score_fusion == "avg-posteriors":
        fused_scores = fuse_avg_posteriors(member_scores)
    elif config.score_fusion == "avg-logits":
        fused_scores = fuse_avg_logits(member_scores)
    elif config.score_fusion == "proben":
        m_effective = len({d.modality for d in selected})
        fused_scores = fuse_proben(member_scores, prior, m_effective)
    elif config.score_fusion == "linear":
        by_modality = {d.modality: d.scores for d in selected}
        fused_scores = fuse_linear(by_modality, config.weights)
    else:  # pragma: no cover - guarded by FusionConfig
        raise ConfigurationError(config.score_fusion)

    try:
        fused_box = fuse_boxes(selected, fused_scores, config.box_fusion)
    except MissingVarianceError:
        raise
    seed = selected[0]
    return Detection(
        image_id=seed.image_id,
        modality="+".join(sorted({d.modality for d in selected})),
        box=fused_box,
        scores=fused_scores,
        box_variance=fused_box_variance(selected),
        det_id=seed.det_id,
    )


def fuse(
    detection_sets: Sequence[Sequence[Detection]],
    config: FusionConfig,
) -> List[Detection]:
    """Fuse the detections of a single image.

    All inputs must share one image id; calibration is applied per modality
    before clustering; output is sorted by fused posterior descending.
    """
    detections = list(chain.from_iterable(detection_sets))
    if not detections:
        return []
    image_ids = {d.image_id for d in detections}
    if len(image_ids) > 1:
        raise ConfigurationError(
            f"fuse operates on one image at a time, got image ids {sorted(image_ids)}"
        )
    widths = {len(d.scores.posteriors) for d in detections}
    if len(widths) > 1:
        raise ConfigurationError(f"inconsistent class counts across inputs: {sorted(widths)}")

    detections = _calibrated(detections, config.calibration)
    prior = config.prior
    if prior is None:
        prior = ClassPrior.uniform(detections[0].scores.num_foreground)

    remaining = sorted(detections, key=lambda d: d.sort_key)
    fused: List[Detection] = []
    while remaining:
        seed = remaining[0]
        cls = seed.class_id
        overlap = [seed] + [
            d
            for d in remaining[1:]
            if d.class_id == cls and iou(seed.box, d.box) > config.iou_threshold
        ]
        if config.score_fusion == "max":
            fused.append(seed)
        else:
            selected = _select_per_modality(overlap)
            fused.append(_fuse_cluster(selected, config, prior))
        suppressed = set(id(d) for d in overlap)
        remaining = [d for d in remaining if id(d) not in suppressed]
    return sorted(fused, key=lambda d: d.sort_key)


def fuse_all(
    detection_sets: Sequence[Sequence[Detection]],
    config: FusionConfig,
) -> List[Detection]:
    """Batch driver: group detections by image id and fuse each image."""
    by_image: Dict[str, List[Detection]] = {}
    for d in chain.from_iterable(detection_sets):
        by_image.setdefault(d.image_id, []).append(d)
    out: List[Detection] = []
    for image_id in sorted(by_image):
        out.extend(fuse([by_image[image_id]], config))
    return out
