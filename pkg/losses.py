"""Forward evaluators for the depth reconstruction and adversarial objectives.

Nothing here trains a network: the functions score batches produced elsewhere.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mould import MouldPair

logger = logging.getLogger(__name__)

PROBABILITY_CLAMP = 1e-7
DEFAULT_LAMBDA = 1e4


@dataclass(frozen=True, eq=False)
class DepthBatch:
    """B x 2 x N x N centered depths; channel 0 is visible, channel 1 hidden."""

    depths: np.ndarray

    def __post_init__(self):
        depths = np.array(self.depths, dtype=np.float64)
        if depths.ndim != 4 or depths.shape[1] != 2 or depths.shape[2] != depths.shape[3]:
            raise ValueError(f"Depth batch must have shape B x 2 x N x N, got {depths.shape}")
        if not np.all(np.isfinite(depths)):
            raise ValueError("Depth batch contains non-finite values")
        depths.setflags(write=False)
        object.__setattr__(self, "depths", depths)

    @classmethod
    def from_pairs(cls, pairs: Sequence[MouldPair]) -> "DepthBatch":
        if not pairs:
            raise ValueError("Cannot build a depth batch from no pairs")
        return cls(np.stack([np.stack([p.z_vis, p.z_hid]) for p in pairs]))

    @property
    def shape(self):
        return self.depths.shape

    @property
    def pixel_count(self) -> int:
        return int(self.depths.size)


@dataclass(frozen=True, eq=False)
class DiscriminatorScores:
    """Discriminator outputs on real and generated samples, clamped into (0, 1)."""

    real: np.ndarray
    fake: np.ndarray

    def __post_init__(self):
        for name in ("real", "fake"):
            scores = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            if len(scores) == 0:
                raise ValueError(f"{name} scores are empty")
            if not np.all(np.isfinite(scores)):
                raise ValueError(f"{name} scores contain non-finite values")
            scores = np.clip(scores, PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP)
            scores.setflags(write=False)
            object.__setattr__(self, name, scores)


def _check_shapes(gt: DepthBatch, pred: DepthBatch):
    if gt.shape != pred.shape:
        raise ValueError(f"Batch shape mismatch: {gt.shape} vs {pred.shape}")


def l1_loss(gt: DepthBatch, pred: DepthBatch) -> float:
    """Mean absolute depth difference over every pixel of both maps in the batch."""
    _check_shapes(gt, pred)
    return float(np.abs(gt.depths - pred.depths).mean())


def l2_loss(gt: DepthBatch, pred: DepthBatch) -> float:
    """Mean squared depth difference; the smooth alternative to ``l1_loss``."""
    _check_shapes(gt, pred)
    return float(((gt.depths - pred.depths) ** 2).mean())


def l1_gradient(gt: DepthBatch, pred: DepthBatch) -> np.ndarray:
    """Gradient of ``l1_loss`` with respect to the prediction (zero where equal)."""
    _check_shapes(gt, pred)
    return np.sign(pred.depths - gt.depths) / pred.pixel_count


def gan_loss(scores: DiscriminatorScores) -> float:
    """Mean log D(real) plus mean log(1 - D(fake)); at most zero."""
    return float(np.log(scores.real).mean() + np.log1p(-scores.fake).mean())


def combined_objective(gan: float, l1: float, lam: float = DEFAULT_LAMBDA) -> float:
    if lam < 0:
        raise ValueError(f"Lambda must be non-negative, got {lam}")
    return gan + lam * l1
