"""Detection data model: score vectors, logit/posterior conversion, priors.

Class index 0 is always the explicit background class; foreground classes
occupy indices 1..K. Files that carry a single scalar confidence per box are
ingested as binary posteriors (1-c on background, c on the predicted class).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidScoreError
from .geometry import BBox

POSTERIOR_EPS = 1e-7


def softmax(logits) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    arr = np.asarray(logits, dtype=float)
    if arr.size == 0 or not np.all(np.isfinite(arr)):
        raise InvalidScoreError(f"softmax requires finite entries, got {arr!r}")
    shifted = arr - arr.max()
    exp = np.exp(shifted)
    return exp / exp.sum()


def logits_from_posteriors(posteriors) -> np.ndarray:
    """One valid logit preimage of a probability vector: elementwise log.

    Entries outside (eps, 1-eps) are clamped with a warning so that exact
    zeros and ones stay invertible.
    """
    p = np.asarray(posteriors, dtype=float)
    if p.size == 0 or not np.all(np.isfinite(p)):
        raise InvalidScoreError(f"posteriors must be finite, got {p!r}")
    if np.any(p < POSTERIOR_EPS) or np.any(p > 1.0 - POSTERIOR_EPS):
        warnings.warn(
            "posterior entries clamped to [%.0e, 1-%.0e] before log"
            % (POSTERIOR_EPS, POSTERIOR_EPS),
            stacklevel=2,
        )
        p = np.clip(p, POSTERIOR_EPS, 1.0 - POSTERIOR_EPS)
    return np.log(p)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ClassScores:
    """A (K+1)-way score vector: logits plus the matching softmax posteriors."""

    logits: np.ndarray
    posteriors: np.ndarray

    @classmethod
    def from_logits(cls, logits) -> "ClassScores":
        logits = np.asarray(logits, dtype=float)
        return cls(logits=_freeze(logits), posteriors=_freeze(softmax(logits)))

    @classmethod
    def from_posteriors(cls, posteriors) -> "ClassScores":
        p = np.asarray(posteriors, dtype=float)
        if p.size == 0 or not np.all(np.isfinite(p)):
            raise InvalidScoreError(f"posteriors must be finite, got {p!r}")
        if np.any(p < -1e-9) or np.any(p > 1.0 + 1e-9):
            raise InvalidScoreError("posterior entries must lie in [0, 1]")
        total = p.sum()
        if abs(total - 1.0) > 1e-6:
            raise InvalidScoreError(f"posteriors must sum to 1, got {total}")
        p = np.clip(p, 0.0, 1.0) / total
        return cls(logits=_freeze(logits_from_posteriors(p)), posteriors=_freeze(p))

    @property
    def num_foreground(self) -> int:
        return len(self.posteriors) - 1

    @property
    def log_posteriors(self) -> np.ndarray:
        return self.logits - logsumexp(self.logits)

    def argmax_foreground(self) -> int:
        """Highest-posterior foreground class; ties go to the lower class id."""
        if self.num_foreground < 1:
            raise InvalidScoreError("score vector has no foreground classes")
        return 1 + int(np.argmax(self.posteriors[1:]))

    @property
    def score(self) -> float:
        """Posterior of the argmax foreground class (the ranking score)."""
        return float(self.posteriors[self.argmax_foreground()])


@dataclass(frozen=True)
class Detection:
    image_id: str
    modality: str
    box: BBox
    scores: ClassScores
    box_variance: Optional[float] = None
    det_id: int = 0

    def __post_init__(self):
        if self.box_variance is not None:
            v = self.box_variance
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"box_variance must be finite and positive, got {v}")

    @property
    def class_id(self) -> int:
        return self.scores.argmax_foreground()

    @property
    def score(self) -> float:
        return self.scores.score

    @property
    def sort_key(self):
        """Total order: higher score first, then lower class id, then lower det_id."""
        return (-self.score, self.class_id, self.det_id)

    def with_scores(self, scores: ClassScores) -> "Detection":
        return replace(self, scores=scores)


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    box: BBox
    class_id: int
    ignore: bool = False

    def __post_init__(self):
        if self.class_id < 1:
            raise ValueError(f"class_id must be a foreground class >= 1, got {self.class_id}")


@dataclass(frozen=True)
class ClassPrior:
    """Marginal class distribution over background + K foreground classes."""

    priors: np.ndarray

    def __post_init__(self):
        p = _freeze(self.priors)
        if np.any(p <= 0):
            raise ValueError("class priors must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"class priors must sum to 1, got {p.sum()}")
        object.__setattr__(self, "priors", p)

    @classmethod
    def uniform(cls, num_foreground: int) -> "ClassPrior":
        n = num_foreground + 1
        return cls(priors=np.full(n, 1.0 / n))

    @property
    def num_foreground(self) -> int:
        return len(self.priors) - 1


def estimate_class_prior(
    gts: Sequence[GroundTruth],
    background_prior: float,
    num_classes: Optional[int] = None,
) -> ClassPrior:
    """Foreground priors proportional to ground-truth counts, background fixed.

    Classes with zero count receive a floor of 1e-6 before renormalization so
    the prior stays strictly positive.
    """
    if not 0.0 < background_prior < 1.0:
        raise ValueError(f"background_prior must lie in (0, 1), got {background_prior}")
    counted = [g for g in gts if not g.ignore]
    if not counted:
        raise ValueError("estimate_class_prior requires at least one non-ignored ground truth")
    if num_classes is None:
        num_classes = max(g.class_id for g in counted)
    counts = np.zeros(num_classes, dtype=float)
    for g in counted:
        if g.class_id > num_classes:
            raise ValueError(f"ground-truth class {g.class_id} exceeds num_classes={num_classes}")
        counts[g.class_id - 1] += 1.0
    counts = np.maximum(counts, 1e-6)
    foreground = counts / counts.sum() * (1.0 - background_prior)
    return ClassPrior(priors=np.concatenate(([background_prior], foreground)))
